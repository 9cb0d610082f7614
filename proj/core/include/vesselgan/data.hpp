#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vesselgan/tensor.hpp"

namespace vgan {

enum class DatasetKind { DRIVE, STARE, SYNTHETIC };

std::string kind_name(DatasetKind k);
DatasetKind kind_from_name(const std::string& s);

/// Paired fundus photograph, gold vessel mask and circular field-of-view
/// mask, all at the original resolution. Invariants: identical H,W across
/// the three arrays, mask/fov binary, and mask <= fov elementwise.
struct FundusSample {
    Tensor image;  // (3,H,W), values in [0,255]
    Tensor mask;   // (H,W), {0,1}
    Tensor fov;    // (H,W), {0,1}
    std::string id;
    int orig_h = 0, orig_w = 0;
    DatasetKind kind = DatasetKind::SYNTHETIC;

    void validate() const;  // throws on invariant violations
};

/// Network-ready sample: square target size, image scaled to [-1,1], plus a
/// per-channel z-scored copy (statistics over FOV pixels) for the segmentor.
struct PreprocessedSample {
    Tensor image;   // (3,S,S) in [-1,1]
    Tensor zscore;  // (3,S,S)
    Tensor mask;    // (S,S), {0,1}
    Tensor fov;     // (S,S), {0,1}
    std::string id;
    int orig_h = 0, orig_w = 0;
    DatasetKind kind = DatasetKind::SYNTHETIC;
};

struct DatasetSplit {
    std::vector<PreprocessedSample> train;
    std::vector<PreprocessedSample> val;
    std::uint64_t seed = 0;
};

/// Loads `<root>/images/*`, `<root>/masks/*` and optional `<root>/fov/*`,
/// paired by filename stem. Missing FOV masks are derived by luminance
/// thresholding (> 25/255) plus largest-connected-component and closing.
std::vector<FundusSample> load_dataset(const std::filesystem::path& root, DatasetKind kind);

/// DRIVE: center-crop to the square of the short side, then bicubic resize;
/// STARE/SYNTHETIC: direct bicubic resize. Masks use nearest-neighbor and are
/// re-binarized at 0.5. Image values are mapped linearly [0,255] -> [-1,1].
PreprocessedSample preprocess(const FundusSample& sample, DatasetKind kind, int target_size = 512);

struct AugmentSpec {
    std::vector<double> rotations_deg;  // angles in [0,360)
    bool hflip = false;
};

/// Returns the original plus every rotation x flip variant, ids suffixed.
/// Rotation fills out-of-support pixels with background (-1 image, 0 masks).
std::vector<PreprocessedSample> augment(const PreprocessedSample& sample, const AugmentSpec& spec,
                                        std::uint64_t seed);

/// Deterministic 19:1 split (validation gets at least one sample).
DatasetSplit split_train_val(std::vector<PreprocessedSample> samples, std::uint64_t seed);

/// Maps a (S,S) prediction in [0,1] back to the sample's original geometry
/// (bicubic upsample, DRIVE un-crop by zero padding) and masks it by the FOV.
Tensor restore_original(const Tensor& pred, const FundusSample& sample);

/// Procedural filamentary dataset: random branching vessel trees rasterized
/// over a textured pseudo-fundus background inside a circular FOV.
/// Deterministic given seed; vessel pixels cover 2-25% of the FOV.
std::vector<FundusSample> make_synthetic_dataset(int n, int size, std::uint64_t seed);

/// Writes samples in the standard dataset layout (PNG) plus manifest.json.
void export_dataset(const std::vector<FundusSample>& samples, const std::filesystem::path& out,
                    const nlohmann::json& manifest_extra = {});

/// Per-sample array container IO for `preprocess` outputs.
void save_preprocessed(const PreprocessedSample& sample, const std::filesystem::path& path);
PreprocessedSample load_preprocessed(const std::filesystem::path& path);

namespace detail {
/// Separable Catmull-Rom bicubic on (H,W) planes or (C,H,W) stacks.
/// Constant fields map to exactly constant fields.
Tensor resize_bicubic(const Tensor& t, int out_h, int out_w);
/// Nearest-neighbor resize of a (H,W) plane.
Tensor resize_nearest(const Tensor& t, int out_h, int out_w);
}  // namespace detail

}  // namespace vgan
