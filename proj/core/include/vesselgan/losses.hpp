#pragma once

#include <map>
#include <span>
#include <vector>

#include "vesselgan/features.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan::losses {

/// Epsilon used to clip every log argument; fixed so tests can be exact.
inline constexpr double kLogEps = 1e-7;

struct LossWeights {
    double lambda_dev = 10.0;
    double lambda_seg = 10.0;
    double omega_cont = 1.0;
    double omega_sty = 10.0;
    double omega_tv = 100.0;
    /// Per-block Gram weights; blocks not listed use 0.2.
    std::map<int, double> block_weights;

    double block_weight(int block) const;
    void validate() const;  // all weights >= 0
};

/// Mean absolute elementwise difference. Optional grad w.r.t. x_hat.
double l1_deviation(const Tensor& x, const Tensor& x_hat, Tensor* grad_x_hat = nullptr);

/// Non-saturating generator loss: mean of -log d over the batch.
/// Scores must lie in [0,1]; they are clipped to [eps, 1-eps] before the log.
double generator_adv_loss(std::span<const double> d_fake, std::vector<double>* grad = nullptr);

/// Negated discriminator objective (a minimization target):
/// -mean(log d_real) - mean(log(1 - d_fake)).
double discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake,
                          std::vector<double>* grad_real = nullptr,
                          std::vector<double>* grad_fake = nullptr);

/// The two sides of discriminator_loss are additively separable; these
/// compute one side's gradient so the training loop can backpropagate the
/// real pass before the fake forward overwrites the layer caches.
void discriminator_loss_grad_real(std::span<const double> d_real, std::vector<double>* grad);
void discriminator_loss_grad_fake(std::span<const double> d_fake, std::vector<double>* grad);

/// Pixel-mean binary cross-entropy; y in {0,1}, y_hat clipped to [eps,1-eps].
double seg_bce(const Tensor& y, const Tensor& y_hat, Tensor* grad_y_hat = nullptr);

/// Gram matrix of a (C,H,W) feature map: g_ij = sum_k f_i[k] * f_j[k].
Tensor gram(const Tensor& features);

/// Sum over matching (block, layer) entries of
///   block_weight/(W*H) * ||Gram(style) - Gram(gen)||_F^2,
/// where W,H are the generated feature map's spatial dims.
double style_loss(const FeatureSet& feats_style, const FeatureSet& feats_gen,
                  const LossWeights& weights, FeatureSet* grad_gen = nullptr);

/// Sum over matching entries of ||phi(x) - phi(gen)||_F^2 / (W*H).
double content_loss(const FeatureSet& feats_x, const FeatureSet& feats_gen,
                    FeatureSet* grad_gen = nullptr);

/// Squared neighbor differences summed over channels and valid neighbor
/// pairs; batched inputs (N,C,H,W) average over the batch.
double tv_loss(const Tensor& x_hat, Tensor* grad = nullptr);

/// omega_cont * content + omega_sty * style + omega_tv * tv.
double style_transfer_loss(const FeatureSet& feats_x, const FeatureSet& feats_style,
                           const FeatureSet& feats_gen, const Tensor& x_hat,
                           const LossWeights& weights, FeatureSet* grad_gen = nullptr,
                           Tensor* grad_x_hat = nullptr);

enum class ObjectiveMode { synthesis_l1, synthesis_style, segmentation };

/// Scalar loss parts feeding the combined generator objective. Flags mark
/// which parts the caller actually computed, so mode mismatches are caught.
struct ObjectiveParts {
    double adv = 0.0;
    double l1 = 0.0;
    double bce = 0.0;
    double style_transfer = 0.0;
    bool has_l1 = false;
    bool has_bce = false;
    bool has_style_transfer = false;
};

/// synthesis_l1: adv + lambda_dev*l1. segmentation: adv + lambda_seg*bce.
/// synthesis_style: adv + lambda_seg*bce (if supplied) + style_transfer.
double generator_objective(ObjectiveMode mode, const ObjectiveParts& parts, const LossWeights& weights);

}  // namespace vgan::losses
