#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vesselgan/tensor.hpp"

namespace vgan {

/// (block, layer) activation maps from the perceptual extractor. Layers are
/// 1-indexed within their block; an index of 0 is accepted as an alias for
/// the first convolution (the two index conventions both appear in the
/// extractor configuration defaults).
struct FeatureSet {
    std::map<std::pair<int, int>, Tensor> entries;
    std::string source;  // "vgg19" | "standin"

    std::set<std::pair<int, int>> keys() const;
    FeatureSet subset(const std::set<std::pair<int, int>>& keys) const;
};

struct ExtractorConfig {
    std::set<int> style_blocks{1, 2, 3, 4, 5};
    std::set<int> content_blocks{4};
    int style_layer = 1;
    int content_layer = 0;

    std::set<std::pair<int, int>> style_keys() const;
    std::set<std::pair<int, int>> content_keys() const;
    std::set<std::pair<int, int>> all_keys() const;
};

/// Opaque forward cache for Extractor::backward.
struct ExtractContext {
    std::vector<Tensor> conv_inputs;  // input of every conv (post-normalization chain)
    std::vector<Tensor> preacts;      // conv outputs before ReLU
    std::vector<Tensor> pool_argmax;  // per block boundary
    std::vector<std::vector<int>> pool_in_shapes;
    std::vector<int> image_shape;
    std::set<std::pair<int, int>> keys;
};

/// Frozen perceptual feature extractor: five convolution blocks with 3x3
/// kernels, ReLU, and 2x2 max-pooling between blocks (VGG-19 topology).
/// The stand-in variant uses small fixed-seed random kernels so perceptual
/// losses stay testable without the real VGG-19 weights.
class Extractor {
public:
    static Extractor standin(std::uint64_t seed = 17);
    /// Loads weights from the named-array container emitted by
    /// tools/vgg19_to_container.py. Throws WeightsFormatError /
    /// ChecksumError.
    static Extractor vgg19(const std::filesystem::path& weights_path);

    const std::string& kind() const { return kind_; }
    int num_blocks() const { return static_cast<int>(block_convs_.size()); }
    int convs_in_block(int block) const { return block_convs_[static_cast<std::size_t>(block - 1)]; }

    /// Extracts exactly the (block, layer) entries named by cfg. The image is
    /// (3,S,S) or (N,3,S,S) in [-1,1]; it is renormalized internally to the
    /// extractor's expected input statistics. Pass ctx to enable backward().
    FeatureSet extract(const Tensor& image, const ExtractorConfig& cfg, ExtractContext* ctx = nullptr) const;

    /// Chains feature-space gradients back to the image input.
    Tensor backward(const ExtractContext& ctx, const FeatureSet& feature_grads) const;

    /// Fingerprint over all kernels; the extractor is frozen, so this value
    /// must never change across a training run.
    std::uint64_t params_hash() const;

private:
    Extractor() = default;
    void validate_config(const ExtractorConfig& cfg) const;
    int min_input_size() const { return kind_ == "vgg19" ? 32 : 8; }

    std::string kind_;
    std::vector<int> block_convs_;              // convs per block
    std::vector<std::vector<Tensor>> kernels_;  // [block][conv] (Cout,Cin,3,3)
    std::vector<std::vector<Tensor>> biases_;
    std::vector<double> input_mean_, input_std_;  // per channel, on [0,1] scale
};

enum class ExtractorKind { vgg19, standin };

/// Factory mirroring the two extractor variants; vgg19 requires weights_path.
Extractor load_extractor(ExtractorKind kind,
                         const std::optional<std::filesystem::path>& weights_path = std::nullopt);

}  // namespace vgan
