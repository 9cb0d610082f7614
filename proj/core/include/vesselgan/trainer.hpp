#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "vesselgan/data.hpp"
#include "vesselgan/features.hpp"
#include "vesselgan/losses.hpp"
#include "vesselgan/networks.hpp"
#include "vesselgan/rng.hpp"
#include "vesselgan/tensor.hpp"

namespace vgan {

using TrainMode = losses::ObjectiveMode;

struct TrainConfig {
    TrainMode mode = TrainMode::segmentation;
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int g_updates_per_d = 2;
    double noise_sigma_train = 0.001;
    double noise_sigma_eval = 1.0;
    int batch_size = 0;  // 0 = auto: 1 at input_size >= 256, else 8
    int epochs = 30;
    int early_stop_patience = 20;
    std::uint64_t seed = 0;
    int input_size = 512;
    int g_base_filters = 0;  // 0 = role default (64)
    int d_base_filters = 0;  // 0 = role default (32)
    losses::LossWeights weights;
    ExtractorConfig extractor_cfg;

    int effective_batch_size() const { return batch_size > 0 ? batch_size : (input_size >= 256 ? 1 : 8); }
    NetworkSpec generator_spec() const;
    NetworkSpec discriminator_spec() const;
    void validate() const;
};

struct StepRecord {
    std::int64_t step = 0;
    double g_loss = 0.0, g_adv = 0.0, g_l1 = 0.0, g_bce = 0.0, g_style = 0.0;
    double d_loss = 0.0, d_real_mean = 0.0, d_fake_mean = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    std::int64_t step = 0;
    double val_loss = 0.0;
    std::string checkpoint;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    int selected_epoch = -1;
    std::int64_t selected_step = -1;

    /// One JSON record per line (steps, then epochs, then the selection).
    void write_jsonl(std::ostream& os) const;
};

/// i.i.d. N(0, sigma^2) noise codes, (n, 400).
Tensor sample_noise(int n, double sigma, RngStream& stream, int dim = 400);

/// Network-ready views of a set of preprocessed samples.
struct Batch {
    Tensor images;    // (N,3,S,S) in [-1,1]
    Tensor zscore;    // (N,3,S,S)
    Tensor masks01;   // (N,1,S,S) in {0,1}
    Tensor masks_pm;  // (N,1,S,S) in {-1,+1}
    int size() const { return images.empty() ? 0 : images.dim(0); }
};

Batch make_batch(const std::vector<PreprocessedSample>& samples, const std::vector<std::size_t>& idx);

class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    /// One update from the accumulated grads; bias-corrected moments.
    void step(const std::vector<nn::Param*>& params);
    std::int64_t t() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Everything train_step needs besides the data.
struct TrainContext {
    TrainConfig config;
    Adam adam_g;
    Adam adam_d;
    RngStream noise_stream;
    const Extractor* extractor = nullptr;             // style mode
    const std::vector<Tensor>* style_pool = nullptr;  // (3,S,S) images in [-1,1]
    std::int64_t step = 0;

    explicit TrainContext(const TrainConfig& cfg)
        : config(cfg),
          adam_g(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
          adam_d(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
          noise_stream(cfg.seed, "noise") {}
};

/// g_updates_per_d generator updates followed by one discriminator update.
/// Throws NonFiniteLossError (with a diagnostic snapshot in the message) if
/// any loss goes non-finite.
StepRecord train_step(Generator& g, Discriminator& d, const Batch& batch, TrainContext& ctx);

/// Mode-appropriate generator objective on one batch, eval-mode BN, no
/// updates. Noise (synthesis) is drawn at noise_sigma_train from `noise`.
double validation_loss(Generator& g, Discriminator& d, const Batch& batch, TrainContext& ctx,
                       RngStream& noise);

struct TrainResult {
    std::filesystem::path best_checkpoint;
    TrainLog log;
};

/// Full training loop: shuffled batches per epoch, per-epoch validation,
/// checkpoint per epoch, early stopping, minimum-validation-loss selection.
TrainResult train(const TrainConfig& config, const DatasetSplit& split,
                  const std::filesystem::path& out_dir, const Extractor* extractor = nullptr,
                  const std::vector<Tensor>* style_pool = nullptr);

/// n_per_mask synthesis draws per (S,S) {0,1} mask with fresh noise at
/// sigma_eval. Returns images (3,S,S) in [-1,1], grouped per mask.
std::vector<std::vector<Tensor>> generate(Generator& g, const std::vector<Tensor>& masks,
                                          int n_per_mask, double sigma_eval, RngStream& noise);

}  // namespace vgan
