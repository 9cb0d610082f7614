#include "vesselgan/networks.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vesselgan/errors.hpp"

namespace vgan {

using json = nlohmann::json;

std::string role_name(Role r) {
    switch (r) {
        case Role::synthesis: return "synthesis";
        case Role::segmentor: return "segmentor";
        case Role::discriminator: return "discriminator";
    }
    return "?";
}

Role role_from_name(const std::string& s) {
    if (s == "synthesis") return Role::synthesis;
    if (s == "segmentor") return Role::segmentor;
    if (s == "discriminator") return Role::discriminator;
    throw SpecError("unknown role '" + s + "'");
}

int NetworkSpec::depth() const {
    int d = 0, s = input_size;
    while (s > 4) {
        s /= 2;
        ++d;
    }
    return d;  // log2(input_size) - 2
}

int NetworkSpec::in_channels() const {
    switch (role) {
        case Role::synthesis: return 2;      // mask + injected noise channel
        case Role::segmentor: return 3;      // z-scored RGB
        case Role::discriminator: return 4;  // RGB + mask
    }
    return 0;
}

int NetworkSpec::out_channels() const { return role == Role::synthesis ? 3 : 1; }

namespace {
int filter_cap(const NetworkSpec& s) { return std::min(8 * s.base_filters, 512); }
}  // namespace

int NetworkSpec::encoder_channels(int i) const {
    if (role == Role::discriminator) {
        return std::min(base_filters << (i - 1), 512);
    }
    const int cap = filter_cap(*this);
    if (i == depth()) return cap;
    return std::min(base_filters << (i - 1), cap / 2);
}

int NetworkSpec::decoder_channels(int j) const {
    if (j == depth()) return out_channels();
    return std::min(filter_cap(*this), 2 * encoder_channels(depth() - j));
}

void NetworkSpec::validate() const {
    if (input_size < 64 || (input_size & (input_size - 1)) != 0) {
        throw SpecError("input_size must be a power of two >= 64, got " + std::to_string(input_size));
    }
    if (base_filters < 1) throw SpecError("base_filters must be >= 1");
    if (kernel != 4 || stride != 2) {
        throw SpecError("architecture is fixed to 4x4 kernels with stride 2");
    }
    if (noise_dim < 1 || noise_grid < 1) throw SpecError("noise dimensions must be positive");
    if (leaky_slope < 0.0 || leaky_slope >= 1.0) throw SpecError("leaky_slope must be in [0,1)");
}

std::string NetworkSpec::to_json() const {
    json j;
    j["role"] = role_name(role);
    j["input_size"] = input_size;
    j["base_filters"] = base_filters;
    j["kernel"] = kernel;
    j["stride"] = stride;
    j["leaky_slope"] = leaky_slope;
    j["bn_eps"] = bn_eps;
    j["init_stdev"] = init_stdev;
    j["noise_dim"] = noise_dim;
    j["noise_grid"] = noise_grid;
    return j.dump();
}

NetworkSpec NetworkSpec::from_json(const std::string& s) {
    json j = json::parse(s);
    NetworkSpec spec;
    spec.role = role_from_name(j.at("role").get<std::string>());
    spec.input_size = j.at("input_size").get<int>();
    spec.base_filters = j.at("base_filters").get<int>();
    spec.kernel = j.at("kernel").get<int>();
    spec.stride = j.at("stride").get<int>();
    spec.leaky_slope = j.at("leaky_slope").get<double>();
    spec.bn_eps = j.at("bn_eps").get<double>();
    spec.init_stdev = j.at("init_stdev").get<double>();
    spec.noise_dim = j.at("noise_dim").get<int>();
    spec.noise_grid = j.at("noise_grid").get<int>();
    spec.validate();
    return spec;
}

std::uint64_t NetworkSpec::hash() const { return fnv1a64(to_json()); }

NetworkSpec default_spec(Role role, int input_size) {
    NetworkSpec spec;
    spec.role = role;
    spec.input_size = input_size;
    spec.base_filters = role == Role::discriminator ? 32 : 64;
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------

std::vector<nn::Param*> Network::params() {
    std::vector<nn::Param*> out;
    for (nn::Layer* l : layers_) {
        for (nn::Param* p : l->params()) out.push_back(p);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Network::arrays() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (nn::Layer* l : layers_) {
        for (auto& a : l->arrays()) out.push_back(a);
    }
    return out;
}

void Network::zero_grad() {
    for (nn::Param* p : params()) p->zero_grad();
}

double Network::grad_sq_norm() {
    double s = 0.0;
    for (nn::Param* p : params()) {
        for (std::int64_t i = 0; i < p->grad.numel(); ++i) s += p->grad[i] * p->grad[i];
    }
    return s;
}

// ---------------------------------------------------------------------------

Generator::Generator(NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
    spec_.validate();
    if (spec_.role == Role::discriminator) throw SpecError("Generator cannot take discriminator role");
    const int d = spec_.depth();

    int prev = spec_.in_channels();
    for (int i = 1; i <= d; ++i) {
        const int c = spec_.encoder_channels(i);
        enc_.push_back(std::make_unique<nn::Conv2d>("enc" + std::to_string(i) + ".conv", prev, c,
                                                    spec_.kernel, spec_.stride, 1));
        enc_bn_.push_back(std::make_unique<nn::BatchNorm2d>("enc" + std::to_string(i) + ".bn", c, spec_.bn_eps));
        enc_act_.push_back(std::make_unique<nn::LeakyReLU>(spec_.leaky_slope));
        prev = c;
    }
    skip_channels_.assign(d + 1, 0);
    for (int j = 1; j <= d; ++j) {
        int in_c = prev;
        if (j >= 2) {
            const int skip = spec_.encoder_channels(d - j + 1);
            skip_channels_[j] = skip;
            in_c = prev + skip;
        }
        const int c = spec_.decoder_channels(j);
        dec_.push_back(std::make_unique<nn::ConvTranspose2d>("dec" + std::to_string(j) + ".deconv",
                                                             in_c, c, spec_.kernel, spec_.stride, 1));
        if (j < d) {
            dec_bn_.push_back(std::make_unique<nn::BatchNorm2d>("dec" + std::to_string(j) + ".bn", c, spec_.bn_eps));
            dec_act_.push_back(std::make_unique<nn::LeakyReLU>(spec_.leaky_slope));
        }
        prev = c;
    }
    if (spec_.role == Role::synthesis) {
        noise_proj_ = std::make_unique<nn::Dense>("noise_proj", spec_.noise_dim,
                                                  spec_.noise_grid * spec_.noise_grid);
        noise_up_ = std::make_unique<nn::BilinearUpsample>(spec_.input_size);
    }

    for (int i = 0; i < d; ++i) {
        layers_.push_back(enc_[i].get());
        layers_.push_back(enc_bn_[i].get());
    }
    for (int j = 0; j < d; ++j) layers_.push_back(dec_[j].get());
    for (int j = 0; j + 1 < d; ++j) layers_.push_back(dec_bn_[j].get());
    if (noise_proj_) layers_.push_back(noise_proj_.get());

    nn::init_params(params(), seed, spec_.init_stdev);
}

Tensor Generator::inject_noise(const Tensor& z, bool training) {
    if (z.rank() != 2 || z.dim(1) != spec_.noise_dim) {
        throw ShapeMismatchError("noise code must be (N," + std::to_string(spec_.noise_dim) +
                                 "), got " + z.shape_str());
    }
    Tensor grid = noise_proj_->forward(z, training);
    grid = grid.reshaped({z.dim(0), 1, spec_.noise_grid, spec_.noise_grid});
    return noise_up_->forward(grid, training);
}

Tensor Generator::run_encoder_decoder(const Tensor& input, bool training) {
    const int d = spec_.depth();
    std::vector<Tensor> enc_out(d + 1);
    Tensor h = input;
    for (int i = 1; i <= d; ++i) {
        h = enc_[i - 1]->forward(h, training);
        h = enc_bn_[i - 1]->forward(h, training);
        h = enc_act_[i - 1]->forward(h, training);
        enc_out[i] = h;
    }
    for (int j = 1; j <= d; ++j) {
        if (j >= 2) h = nn::fn::concat_channels(h, enc_out[d - j + 1]);
        h = dec_[j - 1]->forward(h, training);
        if (j < d) {
            h = dec_bn_[j - 1]->forward(h, training);
            h = dec_act_[j - 1]->forward(h, training);
        }
    }
    return spec_.role == Role::synthesis ? tanh_head_.forward(h, training)
                                         : sigmoid_head_.forward(h, training);
}

Tensor Generator::forward(const Tensor& y, const Tensor& z, bool training) {
    if (spec_.role != Role::synthesis) throw ModeError("noise-conditioned forward requires synthesis role");
    const int S = spec_.input_size;
    if (y.rank() != 4 || y.dim(1) != 1 || y.dim(2) != S || y.dim(3) != S) {
        throw ShapeMismatchError("mask must be (N,1," + std::to_string(S) + "," + std::to_string(S) +
                                 "), got " + y.shape_str());
    }
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (y[i] != 1.0 && y[i] != -1.0) {
            throw ShapeMismatchError("mask input must be encoded in {-1,+1}");
        }
    }
    used_noise_ = true;
    const Tensor noise_chan = inject_noise(z, training);
    return run_encoder_decoder(nn::fn::concat_channels(y, noise_chan), training);
}

Tensor Generator::forward(const Tensor& x, bool training) {
    if (spec_.role != Role::segmentor) throw ModeError("image forward requires segmentor role");
    const int S = spec_.input_size;
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != S || x.dim(3) != S) {
        throw ShapeMismatchError("image must be (N,3," + std::to_string(S) + "," + std::to_string(S) +
                                 "), got " + x.shape_str());
    }
    used_noise_ = false;
    return run_encoder_decoder(x, training);
}

Tensor Generator::backward(const Tensor& gy) {
    const int d = spec_.depth();
    Tensor g = spec_.role == Role::synthesis ? tanh_head_.backward(gy) : sigmoid_head_.backward(gy);

    std::vector<Tensor> skip_grads(d + 1);
    for (int j = d; j >= 1; --j) {
        if (j < d) {
            g = dec_act_[j - 1]->backward(g);
            g = dec_bn_[j - 1]->backward(g);
        }
        g = dec_[j - 1]->backward(g);
        if (j >= 2) {
            auto [g_prev, g_skip] = nn::fn::split_channels(g, g.dim(1) - skip_channels_[j]);
            skip_grads[d - j + 1] = std::move(g_skip);
            g = std::move(g_prev);
        }
    }
    for (int i = d; i >= 1; --i) {
        if (!skip_grads[i].empty()) {
            for (std::int64_t k = 0; k < g.numel(); ++k) g[k] += skip_grads[i][k];
        }
        g = enc_act_[i - 1]->backward(g);
        g = enc_bn_[i - 1]->backward(g);
        g = enc_[i - 1]->backward(g);
    }
    if (spec_.role == Role::synthesis && used_noise_) {
        auto [g_mask, g_noise] = nn::fn::split_channels(g, 1);
        Tensor g_grid = noise_up_->backward(g_noise);
        noise_proj_->backward(g_grid.reshaped({g_grid.dim(0), spec_.noise_grid * spec_.noise_grid}));
        return g_mask;
    }
    return g;
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
    spec_.validate();
    if (spec_.role != Role::discriminator) throw SpecError("Discriminator requires discriminator role");
    const int d = spec_.depth();
    int prev = spec_.in_channels();
    for (int i = 1; i <= d; ++i) {
        const int c = spec_.encoder_channels(i);
        conv_.push_back(std::make_unique<nn::Conv2d>("conv" + std::to_string(i), prev, c,
                                                     spec_.kernel, spec_.stride, 1));
        bn_.push_back(std::make_unique<nn::BatchNorm2d>("bn" + std::to_string(i), c, spec_.bn_eps));
        act_.push_back(std::make_unique<nn::LeakyReLU>(spec_.leaky_slope));
        prev = c;
    }
    const int spatial = spec_.input_size >> d;  // always 4
    flat_shape_ = {0, prev, spatial, spatial};
    head_ = std::make_unique<nn::Dense>("head", prev * spatial * spatial, 1);

    for (int i = 0; i < d; ++i) {
        layers_.push_back(conv_[i].get());
        layers_.push_back(bn_[i].get());
    }
    layers_.push_back(head_.get());

    nn::init_params(params(), seed, spec_.init_stdev);
}

Tensor Discriminator::forward(const Tensor& x, const Tensor& y, bool training) {
    const int S = spec_.input_size;
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != S || x.dim(3) != S) {
        throw ShapeMismatchError("discriminator image must be (N,3,S,S), got " + x.shape_str());
    }
    if (y.rank() != 4 || y.dim(1) != 1 || y.dim(2) != S || y.dim(3) != S) {
        throw ShapeMismatchError("discriminator mask must be (N,1,S,S), got " + y.shape_str());
    }
    Tensor h = nn::fn::concat_channels(x, y);
    const int d = spec_.depth();
    for (int i = 0; i < d; ++i) {
        h = conv_[i]->forward(h, training);
        h = bn_[i]->forward(h, training);
        h = act_[i]->forward(h, training);
    }
    flat_shape_[0] = h.dim(0);
    h = h.reshaped({h.dim(0), flat_shape_[1] * flat_shape_[2] * flat_shape_[3]});
    h = head_->forward(h, training);
    return sigmoid_.forward(h, training);
}

std::pair<Tensor, Tensor> Discriminator::backward(const Tensor& gscore) {
    Tensor g = sigmoid_.backward(gscore);
    g = head_->backward(g);
    g = g.reshaped(flat_shape_);
    for (int i = spec_.depth(); i >= 1; --i) {
        g = act_[i - 1]->backward(g);
        g = bn_[i - 1]->backward(g);
        g = conv_[i - 1]->backward(g);
    }
    auto [gx, gy] = nn::fn::split_channels(g, 3);
    return {std::move(gx), std::move(gy)};
}

std::unique_ptr<Network> build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.role == Role::discriminator) return std::make_unique<Discriminator>(spec, seed);
    return std::make_unique<Generator>(spec, seed);
}

}  // namespace vgan
