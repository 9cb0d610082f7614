#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vesselgan/nn.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan {

enum class Role { synthesis, segmentor, discriminator };

std::string role_name(Role r);
Role role_from_name(const std::string& s);

/// Architecture description. All convolutions are 4x4 kernels with stride 2
/// and no pooling; encoder halves and decoder doubles the spatial size per
/// layer. Depth is log2(input_size) - 2, so a 512 network bottoms out at 4x4
/// and a 64 network builds with proportionally fewer layers.
struct NetworkSpec {
    Role role = Role::synthesis;
    int input_size = 512;
    int base_filters = 64;  // generator default; discriminators default to 32
    int kernel = 4;
    int stride = 2;
    double leaky_slope = 0.2;
    double bn_eps = 1e-5;
    double init_stdev = 0.02;
    int noise_dim = 400;   // synthesis only
    int noise_grid = 32;   // noise code projects to grid^2, then upsamples

    int depth() const;
    int in_channels() const;   // synthesis: mask+noise; segmentor: RGB; discriminator: RGB+mask
    int out_channels() const;  // synthesis: RGB; segmentor/discriminator: 1
    /// Encoder output channels for layer i in [1, depth].
    int encoder_channels(int i) const;
    /// Decoder output channels for layer j in [1, depth]; layer depth is the head.
    int decoder_channels(int j) const;

    void validate() const;  // throws SpecError
    std::string to_json() const;
    static NetworkSpec from_json(const std::string& s);
    std::uint64_t hash() const;  // over the canonical JSON form
};

NetworkSpec default_spec(Role role, int input_size);

/// A parameterized network: spec plus named arrays. Forward/backward on one
/// instance is single-writer; read-only inference on a frozen state is safe
/// to run concurrently only across distinct instances (layers cache state).
class Network {
public:
    virtual ~Network() = default;
    const NetworkSpec& spec() const { return spec_; }
    Role role() const { return spec_.role; }

    std::vector<nn::Param*> params();
    std::vector<std::pair<std::string, Tensor*>> arrays();
    void zero_grad();
    double grad_sq_norm();

    /// Incremented by the optimizer on every applied update.
    std::int64_t update_count = 0;

protected:
    explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}
    NetworkSpec spec_;
    std::vector<nn::Layer*> layers_;  // non-owning, for param collection
};

/// Encoder-decoder with mirror skip connections. Serves both roles:
/// synthesis (mask + injected noise channel -> RGB image, tanh head) and
/// segmentor (RGB image -> vessel probability map, sigmoid head).
class Generator : public Network {
public:
    Generator(NetworkSpec spec, std::uint64_t seed);

    /// Synthesis forward: y is (N,1,S,S) in {-1,+1}; z is (N,noise_dim).
    Tensor forward(const Tensor& y, const Tensor& z, bool training);
    /// Segmentor forward: x is (N,3,S,S).
    Tensor forward(const Tensor& x, bool training);
    /// Grad w.r.t. network output -> grad w.r.t. the image/mask input
    /// (noise-path grads are accumulated into the projection params).
    Tensor backward(const Tensor& gy);

    /// Projects a noise code to a (N,1,S,S) channel (affine to a coarse grid,
    /// then bilinear upsampling).
    Tensor inject_noise(const Tensor& z, bool training);

private:
    Tensor run_encoder_decoder(const Tensor& input, bool training);

    std::vector<std::unique_ptr<nn::Conv2d>> enc_;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> enc_bn_;
    std::vector<std::unique_ptr<nn::LeakyReLU>> enc_act_;
    std::vector<std::unique_ptr<nn::ConvTranspose2d>> dec_;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> dec_bn_;
    std::vector<std::unique_ptr<nn::LeakyReLU>> dec_act_;
    std::unique_ptr<nn::Dense> noise_proj_;  // synthesis only
    std::unique_ptr<nn::BilinearUpsample> noise_up_;
    nn::Tanh tanh_head_;
    nn::Sigmoid sigmoid_head_;

    bool used_noise_ = false;
    std::vector<int> skip_channels_;  // encoder channels consumed per decoder layer
};

/// Convolution stack ending in a single affine logit + sigmoid ("image"
/// granularity: one real/fake score per input pair).
class Discriminator : public Network {
public:
    Discriminator(NetworkSpec spec, std::uint64_t seed);

    /// x is (N,3,S,S) in [-1,1]; y is (N,1,S,S) in {-1,+1}. Returns (N,1) in (0,1).
    Tensor forward(const Tensor& x, const Tensor& y, bool training);
    /// Grad w.r.t. score -> grads w.r.t. (x, y) inputs.
    std::pair<Tensor, Tensor> backward(const Tensor& gscore);

private:
    std::vector<std::unique_ptr<nn::Conv2d>> conv_;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> bn_;
    std::vector<std::unique_ptr<nn::LeakyReLU>> act_;
    std::unique_ptr<nn::Dense> head_;
    nn::Sigmoid sigmoid_;
    std::vector<int> flat_shape_;
};

/// Builds the network for the spec with deterministic initialization.
std::unique_ptr<Network> build_network(const NetworkSpec& spec, std::uint64_t seed);

}  // namespace vgan
