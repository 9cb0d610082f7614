#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vesselgan/data.hpp"
#include "vesselgan/networks.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan {

struct OtsuResult {
    double threshold = 0.0;
    Tensor mask;  // (prob > threshold) & fov
};

/// Otsu threshold over a 256-bin histogram of FOV-pixel scores in [0,1];
/// ties break toward the lower threshold. Throws DegenerateInputError when
/// fewer than two histogram bins are occupied.
OtsuResult otsu_threshold(const Tensor& prob, const Tensor& fov);

/// 2|A^B| / (|A|+|B|) over FOV pixels; 1.0 when both are empty inside FOV.
double dice(const Tensor& pred, const Tensor& gold, const Tensor& fov);

/// Area under the ROC curve (equals P(score_pos > score_neg) + tie/2).
double auc_roc(const Tensor& prob, const Tensor& gold, const Tensor& fov);

/// Area under the precision-recall curve with step-wise (right-continuous)
/// interpolation.
double auc_pr(const Tensor& prob, const Tensor& gold, const Tensor& fov);

struct PerImageMetrics {
    std::string id;
    double dice = 0.0, auc_roc = 0.0, auc_pr = 0.0, otsu_threshold = 0.0;
};

struct EvalReport {
    std::vector<PerImageMetrics> per_image;
    double dice = 0.0, auc_roc = 0.0, auc_pr = 0.0;  // unweighted means over images
    nlohmann::json config_echo;

    nlohmann::json to_json() const;
    /// Plain-text table with Dice / AUC ROC / AUC PR columns.
    std::string render_table(const std::string& dataset_label) const;
};

/// Segments every sample (preprocess -> segmentor -> restore_original) and
/// scores it against the gold mask inside the FOV. Dice uses the
/// Otsu-thresholded restored map; samples are ordered by id.
EvalReport evaluate_dataset(Generator& segmentor, const std::vector<FundusSample>& samples);

/// Sanity fixture: feeds each sample's gold mask as its prediction. Every
/// metric must come out exactly 1.0.
EvalReport evaluate_gold_fixture(const std::vector<FundusSample>& samples);

}  // namespace vgan
