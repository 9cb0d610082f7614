#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vesselgan/rng.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan::nn {

/// Learnable array plus its gradient accumulator. Backward passes add into
/// `grad`; call zero_grad() before computing a fresh gradient.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, std::vector<int> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}
    void zero_grad() { grad.zero(); }
};

// ---------------------------------------------------------------------------
// Functional primitives. Stateless; shared by the layer classes and by the
// frozen feature extractor. All tensors are (N,C,H,W).
// ---------------------------------------------------------------------------
namespace fn {

struct ConvGeom {
    int in_c, out_c, k, stride, pad;
    int out_size(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

/// y = conv(x, w) + b. w is (out_c, in_c, k, k); b is (out_c) or empty.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
/// Gradient of conv2d w.r.t. its input. (in_h, in_w) give the input spatial size.
Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, int in_h, int in_w, int stride, int pad);
/// Accumulates conv2d weight/bias gradients into gw/gb (gb may be null).
void conv2d_grad_params(const Tensor& gy, const Tensor& x, Tensor* gw, Tensor* gb, int stride, int pad);

/// Transposed convolution. w is (in_c, out_c, k, k); output spatial size is
/// (in-1)*stride - 2*pad + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv_transpose2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int pad);
void conv_transpose2d_grad_params(const Tensor& gy, const Tensor& x, Tensor* gw, Tensor* gb,
                                  int stride, int pad);

Tensor relu(const Tensor& x);
Tensor relu_grad(const Tensor& gy, const Tensor& x);

/// 2x2/2 max pooling (floor). Spatial dims below 2 pass through unchanged.
Tensor maxpool2(const Tensor& x, Tensor* argmax);
Tensor maxpool2_grad(const Tensor& gy, const Tensor& argmax, const std::vector<int>& in_shape);

/// Bilinear resize of (N,C,h,w) to (N,C,H,W), half-pixel-center convention.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_grad(const Tensor& gy, int in_h, int in_w);

/// Channel-wise concatenation of two (N,C,H,W) tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& g, int c_first);

}  // namespace fn

// ---------------------------------------------------------------------------
// Stateful layers: forward caches whatever backward needs, so each backward
// must directly follow its own forward on the same layer object.
// ---------------------------------------------------------------------------
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    /// Returns grad w.r.t. the layer input; accumulates param grads.
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual std::vector<Param*> params() { return {}; }
    /// Serialized arrays: params plus non-trainable buffers (BN running stats).
    virtual std::vector<std::pair<std::string, Tensor*>> arrays();
};

class Conv2d : public Layer {
public:
    Conv2d(std::string name, int in_c, int out_c, int k, int stride, int pad);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

    Param weight_, bias_;

private:
    int stride_, pad_;
    Tensor input_;
};

class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(std::string name, int in_c, int out_c, int k, int stride, int pad);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

    Param weight_, bias_;

private:
    int stride_, pad_;
    Tensor input_;
};

class BatchNorm2d : public Layer {
public:
    BatchNorm2d(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::vector<std::pair<std::string, Tensor*>> arrays() override;

    Param gamma_, beta_;
    Tensor running_mean_, running_var_;

private:
    std::string name_;
    double eps_, momentum_;
    bool last_training_ = false;
    Tensor xhat_;               // cached normalized input (train mode)
    std::vector<double> istd_;  // per-channel 1/sqrt(var+eps) of last forward
};

class LeakyReLU : public Layer {
public:
    explicit LeakyReLU(double slope) : slope_(slope) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;

private:
    double slope_;
    Tensor input_;
};

class Tanh : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;

private:
    Tensor output_;
};

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;

private:
    Tensor output_;
};

/// Affine layer on (N,F) inputs.
class Dense : public Layer {
public:
    Dense(std::string name, int in_f, int out_f);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

    Param weight_, bias_;

private:
    Tensor input_;
};

/// Fixed bilinear upsampling to a target spatial size.
class BilinearUpsample : public Layer {
public:
    explicit BilinearUpsample(int target) : target_(target) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& gy) override;

private:
    int target_;
    int in_h_ = 0, in_w_ = 0;
};

/// Initializes every kernel/weight param with a truncated normal (|v|<=2
/// stdev) and zeroes biases; BN affine params stay at gamma=1, beta=0.
/// Each param's stream is derived from (seed, param name), so results do not
/// depend on construction order.
void init_params(const std::vector<Param*>& params, std::uint64_t seed, double stdev);

}  // namespace vgan::nn
