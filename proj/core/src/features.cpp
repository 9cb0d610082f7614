#include "vesselgan/features.hpp"

#include <algorithm>
#include <cmath>

#include "vesselgan/container.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/nn.hpp"
#include "vesselgan/rng.hpp"

namespace vgan {

namespace {

// VGG-19 block structure: convs per block; pooling between blocks.
constexpr int kNumBlocks = 5;
constexpr int kVggConvs[kNumBlocks] = {2, 2, 4, 4, 4};
constexpr int kVggChannels[kNumBlocks] = {64, 128, 256, 512, 512};
constexpr int kStandinChannels[kNumBlocks] = {8, 16, 24, 32, 32};

/// Accepts the paper's two layer-index conventions: 0 and 1 both select the
/// first convolution of a block.
int layer_in_block(int layer) { return std::max(layer, 1); }

}  // namespace

std::set<std::pair<int, int>> FeatureSet::keys() const {
    std::set<std::pair<int, int>> out;
    for (const auto& [k, t] : entries) out.insert(k);
    return out;
}

FeatureSet FeatureSet::subset(const std::set<std::pair<int, int>>& keys) const {
    FeatureSet out;
    out.source = source;
    for (const auto& k : keys) {
        auto it = entries.find(k);
        if (it != entries.end()) out.entries.emplace(k, it->second);
    }
    return out;
}

std::set<std::pair<int, int>> ExtractorConfig::style_keys() const {
    std::set<std::pair<int, int>> out;
    for (int b : style_blocks) out.emplace(b, layer_in_block(style_layer));
    return out;
}

std::set<std::pair<int, int>> ExtractorConfig::content_keys() const {
    std::set<std::pair<int, int>> out;
    for (int b : content_blocks) out.emplace(b, layer_in_block(content_layer));
    return out;
}

std::set<std::pair<int, int>> ExtractorConfig::all_keys() const {
    auto out = style_keys();
    for (const auto& k : content_keys()) out.insert(k);
    return out;
}

Extractor Extractor::standin(std::uint64_t seed) {
    Extractor e;
    e.kind_ = "standin";
    e.block_convs_.assign(kVggConvs, kVggConvs + kNumBlocks);
    e.input_mean_ = {0.5, 0.5, 0.5};
    e.input_std_ = {0.5, 0.5, 0.5};
    int prev = 3;
    for (int b = 0; b < kNumBlocks; ++b) {
        std::vector<Tensor> ks, bs;
        for (int l = 0; l < kVggConvs[b]; ++l) {
            const int c = kStandinChannels[b];
            Tensor k({c, prev, 3, 3});
            RngStream rng(seed, "block" + std::to_string(b + 1) + ".conv" + std::to_string(l + 1));
            const double stdev = std::sqrt(2.0 / (9.0 * prev));
            for (std::int64_t i = 0; i < k.numel(); ++i) k[i] = rng.normal() * stdev;
            ks.push_back(std::move(k));
            bs.push_back(Tensor({c}));
            prev = c;
        }
        e.kernels_.push_back(std::move(ks));
        e.biases_.push_back(std::move(bs));
    }
    return e;
}

Extractor Extractor::vgg19(const std::filesystem::path& weights_path) {
    Container c = load_container(weights_path, kWeightsMagic);
    Extractor e;
    e.kind_ = "vgg19";
    e.block_convs_.assign(kVggConvs, kVggConvs + kNumBlocks);
    e.input_mean_ = {0.485, 0.456, 0.406};
    e.input_std_ = {0.229, 0.224, 0.225};
    int prev = 3;
    for (int b = 0; b < kNumBlocks; ++b) {
        std::vector<Tensor> ks, bs;
        for (int l = 0; l < kVggConvs[b]; ++l) {
            const std::string base =
                "block" + std::to_string(b + 1) + ".conv" + std::to_string(l + 1);
            const Tensor* k = c.find(base + ".kernel");
            const Tensor* bias = c.find(base + ".bias");
            if (!k || !bias) throw WeightsFormatError("vgg19 container missing " + base);
            const std::vector<int> want{kVggChannels[b], prev, 3, 3};
            if (k->shape() != want) {
                throw WeightsFormatError("vgg19 kernel " + base + " has shape " + k->shape_str());
            }
            if (bias->shape() != std::vector<int>{kVggChannels[b]}) {
                throw WeightsFormatError("vgg19 bias " + base + " has shape " + bias->shape_str());
            }
            ks.push_back(*k);
            bs.push_back(*bias);
            prev = kVggChannels[b];
        }
        e.kernels_.push_back(std::move(ks));
        e.biases_.push_back(std::move(bs));
    }
    return e;
}

Extractor load_extractor(ExtractorKind kind, const std::optional<std::filesystem::path>& weights_path) {
    if (kind == ExtractorKind::standin) return Extractor::standin();
    if (!weights_path) throw WeightsFormatError("vgg19 extractor requires a weights file");
    if (!std::filesystem::exists(*weights_path)) {
        throw WeightsFormatError("vgg19 weights file not found: " + weights_path->string());
    }
    return Extractor::vgg19(*weights_path);
}

void Extractor::validate_config(const ExtractorConfig& cfg) const {
    auto check_block = [&](int b) {
        if (b < 1 || b > num_blocks()) {
            throw ConfigError("block index " + std::to_string(b) + " outside [1," +
                              std::to_string(num_blocks()) + "]");
        }
    };
    for (int b : cfg.style_blocks) {
        check_block(b);
        if (cfg.style_layer < 0 || layer_in_block(cfg.style_layer) > convs_in_block(b)) {
            throw ConfigError("style layer " + std::to_string(cfg.style_layer) +
                              " out of range for block " + std::to_string(b));
        }
    }
    for (int b : cfg.content_blocks) {
        check_block(b);
        if (cfg.content_layer < 0 || layer_in_block(cfg.content_layer) > convs_in_block(b)) {
            throw ConfigError("content layer " + std::to_string(cfg.content_layer) +
                              " out of range for block " + std::to_string(b));
        }
    }
}

FeatureSet Extractor::extract(const Tensor& image, const ExtractorConfig& cfg, ExtractContext* ctx) const {
    validate_config(cfg);
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeMismatchError("extract expects a (3,S,S) image, got " + image.shape_str());
    }
    const int S = image.dim(1);
    if (image.dim(2) != S || S < min_input_size()) {
        throw ShapeMismatchError("extract expects a square image with side >= " +
                                 std::to_string(min_input_size()) + ", got " + image.shape_str());
    }
    const auto keys = cfg.all_keys();
    int last_block = 0;
    for (const auto& [b, l] : keys) last_block = std::max(last_block, b);

    Tensor h = image.reshaped({1, 3, S, S});
    // [-1,1] -> [0,1] -> extractor statistics.
    for (int c = 0; c < 3; ++c) {
        double* p = h.data() + std::int64_t(c) * S * S;
        for (std::int64_t i = 0; i < std::int64_t(S) * S; ++i) {
            p[i] = ((p[i] + 1.0) * 0.5 - input_mean_[c]) / input_std_[c];
        }
    }

    if (ctx) {
        *ctx = ExtractContext{};
        ctx->image_shape = image.shape();
        ctx->keys = keys;
    }
    FeatureSet out;
    out.source = kind_;
    for (int b = 1; b <= last_block; ++b) {
        for (int l = 1; l <= convs_in_block(b); ++l) {
            if (ctx) ctx->conv_inputs.push_back(h);
            Tensor pre = nn::fn::conv2d(h, kernels_[b - 1][l - 1], biases_[b - 1][l - 1], 1, 1);
            h = nn::fn::relu(pre);
            if (ctx) ctx->preacts.push_back(std::move(pre));
            if (keys.count({b, l})) {
                out.entries.emplace(std::pair<int, int>{b, l},
                                    h.reshaped({h.dim(1), h.dim(2), h.dim(3)}));
            }
        }
        if (b < last_block) {
            Tensor argmax;
            const std::vector<int> in_shape = h.shape();
            h = nn::fn::maxpool2(h, &argmax);
            if (ctx) {
                ctx->pool_argmax.push_back(std::move(argmax));
                ctx->pool_in_shapes.push_back(in_shape);
            }
        }
    }
    return out;
}

Tensor Extractor::backward(const ExtractContext& ctx, const FeatureSet& feature_grads) const {
    int last_block = 0;
    for (const auto& [b, l] : ctx.keys) last_block = std::max(last_block, b);

    // Walk the recorded op sequence in reverse, injecting tap grads.
    int conv_idx = static_cast<int>(ctx.conv_inputs.size());
    int pool_idx = static_cast<int>(ctx.pool_argmax.size());
    Tensor g;  // grad w.r.t. current position's output; empty means all-zero so far

    auto add_tap = [&](int b, int l, const Tensor& relu_out_shape_like) {
        auto it = feature_grads.entries.find({b, l});
        if (it == feature_grads.entries.end()) return;
        const Tensor& fg = it->second;
        if (g.empty()) g = Tensor(relu_out_shape_like.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += fg[i];
    };

    for (int b = last_block; b >= 1; --b) {
        if (b < last_block) {
            --pool_idx;
            g = nn::fn::maxpool2_grad(g, ctx.pool_argmax[pool_idx], ctx.pool_in_shapes[pool_idx]);
        }
        for (int l = convs_in_block(b); l >= 1; --l) {
            --conv_idx;
            const Tensor& pre = ctx.preacts[conv_idx];
            if (g.empty()) g = Tensor(pre.shape());
            add_tap(b, l, pre);
            g = nn::fn::relu_grad(g, pre);
            const Tensor& cin = ctx.conv_inputs[conv_idx];
            g = nn::fn::conv2d_grad_input(g, kernels_[b - 1][l - 1], cin.dim(2), cin.dim(3), 1, 1);
        }
    }
    // Undo input renormalization: d(norm)/d(image) = 1 / (2 * std_c).
    const int S = ctx.image_shape[1];
    Tensor gi({3, S, S});
    for (int c = 0; c < 3; ++c) {
        const double scale = 1.0 / (2.0 * input_std_[c]);
        const double* src = g.data() + std::int64_t(c) * S * S;
        double* dst = gi.data() + std::int64_t(c) * S * S;
        for (std::int64_t i = 0; i < std::int64_t(S) * S; ++i) dst[i] = src[i] * scale;
    }
    return gi;
}

std::uint64_t Extractor::params_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t b = 0; b < kernels_.size(); ++b) {
        for (std::size_t l = 0; l < kernels_[b].size(); ++l) {
            h = fnv1a64(kernels_[b][l].data(), sizeof(double) * kernels_[b][l].numel(), h);
            h = fnv1a64(biases_[b][l].data(), sizeof(double) * biases_[b][l].numel(), h);
        }
    }
    return h;
}

}  // namespace vgan
