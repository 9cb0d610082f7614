#include "vesselgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include <nlohmann/json.hpp>

#include "vesselgan/container.hpp"
#include "vesselgan/errors.hpp"

namespace vgan {

using json = nlohmann::json;
using losses::ObjectiveMode;
using losses::ObjectiveParts;

NetworkSpec TrainConfig::generator_spec() const {
    NetworkSpec s = default_spec(
        mode == TrainMode::segmentation ? Role::segmentor : Role::synthesis, input_size);
    if (g_base_filters > 0) s.base_filters = g_base_filters;
    return s;
}

NetworkSpec TrainConfig::discriminator_spec() const {
    NetworkSpec s = default_spec(Role::discriminator, input_size);
    if (d_base_filters > 0) s.base_filters = d_base_filters;
    return s;
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("learning rate must be > 0");
    if (g_updates_per_d < 1) throw ConfigError("g_updates_per_d must be >= 1");
    if (noise_sigma_train <= 0.0 || noise_sigma_eval <= 0.0) throw ConfigError("noise sigmas must be > 0");
    if (epochs < 0 || epochs > 500) throw ConfigError("epochs must be in [0,500]");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    weights.validate();
    generator_spec().validate();
    discriminator_spec().validate();
}

Tensor sample_noise(int n, double sigma, RngStream& stream, int dim) {
    if (sigma <= 0.0) throw ConfigError("noise sigma must be > 0");
    Tensor z({n, dim});
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = sigma * stream.normal();
    return z;
}

Batch make_batch(const std::vector<PreprocessedSample>& samples, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw InsufficientDataError("empty batch");
    const int S = samples[idx[0]].image.dim(1);
    const int N = static_cast<int>(idx.size());
    Batch b;
    b.images = Tensor({N, 3, S, S});
    b.zscore = Tensor({N, 3, S, S});
    b.masks01 = Tensor({N, 1, S, S});
    b.masks_pm = Tensor({N, 1, S, S});
    for (int n = 0; n < N; ++n) {
        const PreprocessedSample& s = samples[idx[static_cast<std::size_t>(n)]];
        if (s.image.dim(1) != S) throw ShapeMismatchError("mixed sample sizes in batch");
        std::copy_n(s.image.data(), s.image.numel(), b.images.data() + std::int64_t(n) * 3 * S * S);
        std::copy_n(s.zscore.data(), s.zscore.numel(), b.zscore.data() + std::int64_t(n) * 3 * S * S);
        for (std::int64_t i = 0; i < std::int64_t(S) * S; ++i) {
            const double m = s.mask[i];
            b.masks01.data()[std::int64_t(n) * S * S + i] = m;
            b.masks_pm.data()[std::int64_t(n) * S * S + i] = m > 0.5 ? 1.0 : -1.0;
        }
    }
    return b;
}

void Adam::step(const std::vector<nn::Param*>& params) {
    if (m_.empty()) {
        for (nn::Param* p : params) {
            m_.push_back(Tensor(p->value.shape()));
            v_.push_back(Tensor(p->value.shape()));
        }
    }
    if (m_.size() != params.size()) throw ConfigError("Adam bound to a different parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Param* p = params[k];
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g;
            v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g * g;
            const double mhat = m_[k][i] / bc1;
            const double vhat = v_[k][i] / bc2;
            p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

std::vector<double> scores_of(const Tensor& t) {
    std::vector<double> out(static_cast<std::size_t>(t.numel()));
    std::copy_n(t.data(), t.numel(), out.begin());
    return out;
}

Tensor scores_to_grad(const std::vector<double>& g) {
    Tensor t({static_cast<int>(g.size()), 1});
    std::copy(g.begin(), g.end(), t.data());
    return t;
}

Tensor slice_image(const Tensor& batch, int n) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensor out({C, H, W});
    std::copy_n(batch.data() + std::int64_t(n) * C * H * W, out.numel(), out.data());
    return out;
}

[[noreturn]] void throw_non_finite(const char* where, std::int64_t step, double g_loss, double d_loss) {
    json snap;
    snap["where"] = where;
    snap["step"] = step;
    snap["g_loss"] = std::isfinite(g_loss) ? json(g_loss) : json("non-finite");
    snap["d_loss"] = std::isfinite(d_loss) ? json(d_loss) : json("non-finite");
    throw NonFiniteLossError("training diverged; snapshot: " + snap.dump());
}

/// Style-transfer term and its gradient w.r.t. the generated batch (mean over
/// the batch). feats for the style image are extracted once per call.
double style_term(const Tensor& x_hat, const Tensor& images, const Tensor& style_image,
                  const Extractor& ex, const ExtractorConfig& cfg,
                  const losses::LossWeights& weights, Tensor* grad_x_hat) {
    const int N = x_hat.dim(0);
    if (grad_x_hat) *grad_x_hat = Tensor(x_hat.shape());
    const FeatureSet feats_style = ex.extract(style_image, cfg).subset(cfg.style_keys());
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const Tensor xh = slice_image(x_hat, n);
        const Tensor xr = slice_image(images, n);
        ExtractContext ctx;
        const FeatureSet feats_gen = ex.extract(xh, cfg, &ctx);
        const FeatureSet feats_x = ex.extract(xr, cfg).subset(cfg.content_keys());
        FeatureSet grad_feats;
        Tensor grad_tv;
        const double l = losses::style_transfer_loss(feats_x, feats_style, feats_gen, xh, weights,
                                                     grad_x_hat ? &grad_feats : nullptr,
                                                     grad_x_hat ? &grad_tv : nullptr);
        total += l / N;
        if (grad_x_hat) {
            Tensor gimg = ex.backward(ctx, grad_feats);
            double* dst = grad_x_hat->data() + std::int64_t(n) * gimg.numel();
            for (std::int64_t i = 0; i < gimg.numel(); ++i) {
                dst[i] = (gimg[i] + grad_tv[i]) / N;
            }
        }
    }
    return total;
}

struct GeneratorPass {
    double adv = 0.0, l1 = 0.0, bce = 0.0, style = 0.0, objective = 0.0;
};

/// Forward + loss assembly for the generator objective. If `update` is set,
/// also backpropagates and applies one Adam step.
GeneratorPass generator_pass(Generator& g, Discriminator& d, const Batch& batch, TrainContext& ctx,
                             bool training, bool update, RngStream& noise) {
    const TrainConfig& cfg = ctx.config;
    GeneratorPass out;
    ObjectiveParts parts;

    if (update) g.zero_grad();

    if (cfg.mode == TrainMode::segmentation) {
        const Tensor y_hat = g.forward(batch.zscore, training);
        Tensor y_hat_pm = y_hat;
        for (std::int64_t i = 0; i < y_hat_pm.numel(); ++i) y_hat_pm[i] = 2.0 * y_hat_pm[i] - 1.0;
        const Tensor d_out = d.forward(batch.images, y_hat_pm, training);
        std::vector<double> adv_grad;
        out.adv = losses::generator_adv_loss(scores_of(d_out), update ? &adv_grad : nullptr);
        Tensor bce_grad;
        out.bce = losses::seg_bce(batch.masks01, y_hat, update ? &bce_grad : nullptr);
        parts.adv = out.adv;
        parts.bce = out.bce;
        parts.has_bce = true;
        out.objective = losses::generator_objective(cfg.mode, parts, cfg.weights);
        if (update) {
            auto [gx_img, gy_pm] = d.backward(scores_to_grad(adv_grad));
            Tensor gy = std::move(gy_pm);
            for (std::int64_t i = 0; i < gy.numel(); ++i) {
                gy[i] = 2.0 * gy[i] + cfg.weights.lambda_seg * bce_grad[i];
            }
            g.backward(gy);
        }
        return out;
    }

    // Synthesis modes: x_hat = G(y, z).
    const Tensor z = sample_noise(batch.size(), cfg.noise_sigma_train, noise, g.spec().noise_dim);
    const Tensor x_hat = g.forward(batch.masks_pm, z, training);
    const Tensor d_out = d.forward(x_hat, batch.masks_pm, training);
    std::vector<double> adv_grad;
    out.adv = losses::generator_adv_loss(scores_of(d_out), update ? &adv_grad : nullptr);
    parts.adv = out.adv;

    Tensor extra_grad;  // d(objective)/d(x_hat) beyond the adversarial path
    if (cfg.mode == TrainMode::synthesis_l1) {
        Tensor l1_grad;
        out.l1 = losses::l1_deviation(batch.images, x_hat, update ? &l1_grad : nullptr);
        parts.l1 = out.l1;
        parts.has_l1 = true;
        if (update) {
            extra_grad = std::move(l1_grad);
            for (std::int64_t i = 0; i < extra_grad.numel(); ++i) {
                extra_grad[i] *= cfg.weights.lambda_dev;
            }
        }
    } else {  // synthesis_style
        if (!ctx.extractor || !ctx.style_pool || ctx.style_pool->empty()) {
            throw ConfigError("synthesis_style training requires an extractor and a style pool");
        }
        const Tensor& style_image =
            (*ctx.style_pool)[static_cast<std::size_t>(ctx.step) % ctx.style_pool->size()];
        out.style = style_term(x_hat, batch.images, style_image, *ctx.extractor, cfg.extractor_cfg,
                               cfg.weights, update ? &extra_grad : nullptr);
        parts.style_transfer = out.style;
        parts.has_style_transfer = true;
    }
    out.objective = losses::generator_objective(cfg.mode, parts, cfg.weights);
    if (update) {
        auto [gx_hat, gy_mask] = d.backward(scores_to_grad(adv_grad));
        if (!extra_grad.empty()) {
            for (std::int64_t i = 0; i < gx_hat.numel(); ++i) gx_hat[i] += extra_grad[i];
        }
        g.backward(gx_hat);
    }
    return out;
}

}  // namespace

StepRecord train_step(Generator& g, Discriminator& d, const Batch& batch, TrainContext& ctx) {
    const TrainConfig& cfg = ctx.config;
    StepRecord rec;
    rec.step = ctx.step;

    for (int u = 0; u < cfg.g_updates_per_d; ++u) {
        const GeneratorPass pass = generator_pass(g, d, batch, ctx, true, true, ctx.noise_stream);
        if (!std::isfinite(pass.objective)) throw_non_finite("generator update", ctx.step, pass.objective, 0.0);
        ctx.adam_g.step(g.params());
        ++g.update_count;
        rec.g_loss = pass.objective;
        rec.g_adv = pass.adv;
        rec.g_l1 = pass.l1;
        rec.g_bce = pass.bce;
        rec.g_style = pass.style;
    }

    // Discriminator update on (real, fake) pairs; fake inputs come from a
    // fresh generator forward after the G updates.
    d.zero_grad();
    const Tensor d_real = d.forward(batch.images, batch.masks_pm, true);
    Tensor fake_mask;  // the mask channel the discriminator pairs with the image
    Tensor fake_image;
    if (cfg.mode == TrainMode::segmentation) {
        Tensor y_hat = g.forward(batch.zscore, true);
        for (std::int64_t i = 0; i < y_hat.numel(); ++i) y_hat[i] = 2.0 * y_hat[i] - 1.0;
        fake_image = batch.images;
        fake_mask = std::move(y_hat);
    } else {
        const Tensor z = sample_noise(batch.size(), cfg.noise_sigma_train, ctx.noise_stream,
                                      g.spec().noise_dim);
        fake_image = g.forward(batch.masks_pm, z, true);
        fake_mask = batch.masks_pm;
    }
    std::vector<double> grad_real, grad_fake;
    const auto real_scores = scores_of(d_real);
    // Two passes through D: backward for the real part must run before the
    // fake forward overwrites the layer caches.
    losses::discriminator_loss_grad_real(real_scores, &grad_real);
    d.backward(scores_to_grad(grad_real));
    const Tensor d_fake = d.forward(fake_image, fake_mask, true);
    const auto fake_scores = scores_of(d_fake);
    rec.d_loss = losses::discriminator_loss(real_scores, fake_scores, nullptr, &grad_fake);
    d.backward(scores_to_grad(grad_fake));
    if (!std::isfinite(rec.d_loss)) throw_non_finite("discriminator update", ctx.step, rec.g_loss, rec.d_loss);
    ctx.adam_d.step(d.params());
    ++d.update_count;

    for (double v : real_scores) rec.d_real_mean += v / real_scores.size();
    for (double v : fake_scores) rec.d_fake_mean += v / fake_scores.size();
    ++ctx.step;
    return rec;
}

double validation_loss(Generator& g, Discriminator& d, const Batch& batch, TrainContext& ctx,
                       RngStream& noise) {
    const GeneratorPass pass = generator_pass(g, d, batch, ctx, false, false, noise);
    return pass.objective;
}

void TrainLog::write_jsonl(std::ostream& os) const {
    for (const StepRecord& r : steps) {
        json j{{"type", "step"},       {"step", r.step},
               {"g_loss", r.g_loss},   {"g_adv", r.g_adv},
               {"g_l1", r.g_l1},       {"g_bce", r.g_bce},
               {"g_style", r.g_style}, {"d_loss", r.d_loss},
               {"d_real_mean", r.d_real_mean}, {"d_fake_mean", r.d_fake_mean}};
        os << j.dump() << "\n";
    }
    for (const EpochRecord& r : epochs) {
        json j{{"type", "epoch"},
               {"epoch", r.epoch},
               {"step", r.step},
               {"val_loss", r.val_loss},
               {"checkpoint", r.checkpoint}};
        os << j.dump() << "\n";
    }
    json sel{{"type", "selection"}, {"epoch", selected_epoch}, {"step", selected_step}};
    os << sel.dump() << "\n";
}

TrainResult train(const TrainConfig& config, const DatasetSplit& split,
                  const std::filesystem::path& out_dir, const Extractor* extractor,
                  const std::vector<Tensor>* style_pool) {
    config.validate();
    if (split.train.empty()) throw InsufficientDataError("training split is empty");
    std::filesystem::create_directories(out_dir);

    Generator g(config.generator_spec(), fnv1a64("init_g", config.seed));
    Discriminator d(config.discriminator_spec(), fnv1a64("init_d", config.seed));

    TrainContext ctx(config);
    ctx.extractor = extractor;
    ctx.style_pool = style_pool;

    TrainResult result;
    const int B = config.effective_batch_size();

    auto epoch_checkpoint = [&](int epoch) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "ckpt_epoch_%04d.vgc", epoch);
        return out_dir / buf;
    };

    auto run_validation = [&](int epoch) {
        if (split.val.empty()) return 0.0;
        RngStream val_noise(config.seed, "val_noise");
        double acc = 0.0;
        std::vector<std::size_t> idx(1);
        for (std::size_t i = 0; i < split.val.size(); ++i) {
            idx[0] = i;
            const Batch vb = make_batch(split.val, idx);
            acc += validation_loss(g, d, vb, ctx, val_noise);
        }
        (void)epoch;
        return acc / static_cast<double>(split.val.size());
    };

    // Epoch 0 state is checkpointed so an epochs=0 run still yields a model.
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    save_checkpoint(g, 0, epoch_checkpoint(0));
    result.best_checkpoint = epoch_checkpoint(0);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    int stale = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        RngStream shuffle_rng(config.seed, "data_epoch" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(B)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(B));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                         order.begin() + static_cast<std::ptrdiff_t>(b1));
            result.log.steps.push_back(train_step(g, d, make_batch(split.train, idx), ctx));
        }
        const double val = run_validation(epoch);
        const auto ckpt = epoch_checkpoint(epoch);
        save_checkpoint(g, ctx.step, ckpt);
        result.log.epochs.push_back({epoch, ctx.step, val, ckpt.filename().string()});
        if (val < best_val) {
            best_val = val;
            best_epoch = epoch;
            stale = 0;
        } else {
            ++stale;
        }
        if (stale >= config.early_stop_patience) break;
    }

    if (!result.log.epochs.empty()) {
        result.log.selected_epoch = best_epoch;
        for (const auto& e : result.log.epochs) {
            if (e.epoch == best_epoch) result.log.selected_step = e.step;
        }
        result.best_checkpoint = epoch_checkpoint(best_epoch);
    }
    save_checkpoint(d, ctx.step, out_dir / "discriminator_final.vgc");

    std::ofstream log_file(out_dir / "train_log.jsonl");
    result.log.write_jsonl(log_file);
    return result;
}

std::vector<std::vector<Tensor>> generate(Generator& g, const std::vector<Tensor>& masks,
                                          int n_per_mask, double sigma_eval, RngStream& noise) {
    if (g.role() != Role::synthesis) throw ModeError("generate requires a synthesis checkpoint");
    if (n_per_mask < 1) throw ConfigError("n_per_mask must be >= 1");
    const int S = g.spec().input_size;
    std::vector<std::vector<Tensor>> out;
    for (const Tensor& mask : masks) {
        if (mask.rank() != 2 || mask.dim(0) != S || mask.dim(1) != S) {
            throw ShapeMismatchError("generate: mask must be (S,S) with S=" + std::to_string(S));
        }
        Tensor y({1, 1, S, S});
        for (std::int64_t i = 0; i < mask.numel(); ++i) y[i] = mask[i] > 0.5 ? 1.0 : -1.0;
        std::vector<Tensor> imgs;
        for (int k = 0; k < n_per_mask; ++k) {
            const Tensor z = sample_noise(1, sigma_eval, noise, g.spec().noise_dim);
            const Tensor x = g.forward(y, z, false);
            imgs.push_back(x.reshaped({3, S, S}));
        }
        out.push_back(std::move(imgs));
    }
    return out;
}

}  // namespace vgan
