#include "vesselgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vesselgan/errors.hpp"

namespace vgan {

namespace {
std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeMismatchError("negative tensor dimension");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeMismatchError("reshape from " + shape_str() + " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << ")";
    return os.str();
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatchError(std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace vgan
