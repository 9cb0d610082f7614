#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace vgan {

/// Dense row-major double tensor. Rank is dynamic; networks use (N,C,H,W),
/// feature maps (C,H,W), images/masks (H,W) or (C,H,W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros_like(const Tensor& other);
    static Tensor full(std::vector<int> shape, double value);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Index helpers for the common ranks; no bounds checking.
    double& at(int a, int b) { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
    double at(int a, int b) const { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
    double& at(int a, int b, int c) {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double at(int a, int b, int c) const {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double& at(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<int> shape) const;

    void fill(double value);
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool all_finite() const;
    double min() const;
    double max() const;
    double sum() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Throws ShapeMismatchError unless both tensors share a shape. `what` names
/// the operands in the message.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace vgan
