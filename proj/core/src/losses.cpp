#include "vesselgan/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "vesselgan/errors.hpp"

namespace vgan::losses {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double clip01(double v) { return std::clamp(v, kLogEps, 1.0 - kLogEps); }

void check_score(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw DomainError(std::string(what) + " score outside [0,1]: " + std::to_string(v));
    }
}

void check_structure(const FeatureSet& a, const FeatureSet& b, const char* what) {
    if (a.entries.size() != b.entries.size()) {
        throw StructureMismatchError(std::string(what) + ": entry counts differ");
    }
    for (const auto& [key, t] : a.entries) {
        auto it = b.entries.find(key);
        if (it == b.entries.end()) {
            throw StructureMismatchError(std::string(what) + ": missing block " +
                                         std::to_string(key.first) + " layer " + std::to_string(key.second));
        }
        if (t.dim(0) != it->second.dim(0)) {
            throw StructureMismatchError(std::string(what) + ": channel count differs at block " +
                                         std::to_string(key.first));
        }
    }
}

}  // namespace

double LossWeights::block_weight(int block) const {
    auto it = block_weights.find(block);
    return it == block_weights.end() ? 0.2 : it->second;
}

void LossWeights::validate() const {
    const double all[] = {lambda_dev, lambda_seg, omega_cont, omega_sty, omega_tv};
    for (double w : all) {
        if (w < 0.0) throw ConfigError("loss weights must be >= 0");
    }
    for (const auto& [b, w] : block_weights) {
        if (w < 0.0) throw ConfigError("block weight for block " + std::to_string(b) + " must be >= 0");
    }
}

double l1_deviation(const Tensor& x, const Tensor& x_hat, Tensor* grad_x_hat) {
    check_same_shape(x, x_hat, "l1_deviation");
    const std::int64_t n = x.numel();
    if (grad_x_hat) *grad_x_hat = Tensor(x.shape());
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = x[i] - x_hat[i];
        acc += std::abs(d);
        if (grad_x_hat) (*grad_x_hat)[i] = (d > 0.0 ? -1.0 : d < 0.0 ? 1.0 : 0.0) / static_cast<double>(n);
    }
    return acc / static_cast<double>(n);
}

double generator_adv_loss(std::span<const double> d_fake, std::vector<double>* grad) {
    if (d_fake.empty()) throw DomainError("generator_adv_loss: empty batch");
    if (grad) grad->assign(d_fake.size(), 0.0);
    const double n = static_cast<double>(d_fake.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        check_score(d_fake[i], "d_fake");
        const double d = clip01(d_fake[i]);
        acc -= std::log(d);
        if (grad && d == d_fake[i]) (*grad)[i] = -1.0 / (n * d);
    }
    return acc / n;
}

double discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake,
                          std::vector<double>* grad_real, std::vector<double>* grad_fake) {
    if (d_real.empty() || d_fake.empty()) throw DomainError("discriminator_loss: empty batch");
    if (grad_real) discriminator_loss_grad_real(d_real, grad_real);
    if (grad_fake) discriminator_loss_grad_fake(d_fake, grad_fake);
    double acc = 0.0;
    const double nr = static_cast<double>(d_real.size());
    for (std::size_t i = 0; i < d_real.size(); ++i) {
        check_score(d_real[i], "d_real");
        acc -= std::log(clip01(d_real[i])) / nr;
    }
    const double nf = static_cast<double>(d_fake.size());
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        check_score(d_fake[i], "d_fake");
        acc -= std::log(1.0 - clip01(d_fake[i])) / nf;
    }
    return acc;
}

void discriminator_loss_grad_real(std::span<const double> d_real, std::vector<double>* grad) {
    grad->assign(d_real.size(), 0.0);
    const double nr = static_cast<double>(d_real.size());
    for (std::size_t i = 0; i < d_real.size(); ++i) {
        check_score(d_real[i], "d_real");
        const double d = clip01(d_real[i]);
        if (d == d_real[i]) (*grad)[i] = -1.0 / (nr * d);
    }
}

void discriminator_loss_grad_fake(std::span<const double> d_fake, std::vector<double>* grad) {
    grad->assign(d_fake.size(), 0.0);
    const double nf = static_cast<double>(d_fake.size());
    for (std::size_t i = 0; i < d_fake.size(); ++i) {
        check_score(d_fake[i], "d_fake");
        const double d = clip01(d_fake[i]);
        if (d == d_fake[i]) (*grad)[i] = 1.0 / (nf * (1.0 - d));
    }
}

double seg_bce(const Tensor& y, const Tensor& y_hat, Tensor* grad_y_hat) {
    check_same_shape(y, y_hat, "seg_bce");
    const std::int64_t n = y.numel();
    if (grad_y_hat) *grad_y_hat = Tensor(y.shape());
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw DomainError("seg_bce: gold mask must be binary");
        check_score(y_hat[i], "y_hat");
        const double p = clip01(y_hat[i]);
        acc -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
        if (grad_y_hat && p == y_hat[i]) {
            (*grad_y_hat)[i] = (-y[i] / p + (1.0 - y[i]) / (1.0 - p)) / static_cast<double>(n);
        }
    }
    return acc / static_cast<double>(n);
}

Tensor gram(const Tensor& features) {
    if (features.rank() != 3) {
        throw ShapeMismatchError("gram expects (C,H,W), got " + features.shape_str());
    }
    const int C = features.dim(0);
    const std::int64_t K = std::int64_t(features.dim(1)) * features.dim(2);
    Tensor g({C, C});
    Eigen::Map<const RowMat> f(features.data(), C, K);
    Eigen::Map<RowMat> gm(g.data(), C, C);
    gm.noalias() = f * f.transpose();
    return g;
}

double style_loss(const FeatureSet& feats_style, const FeatureSet& feats_gen,
                  const LossWeights& weights, FeatureSet* grad_gen) {
    check_structure(feats_style, feats_gen, "style_loss");
    if (grad_gen) {
        grad_gen->entries.clear();
        grad_gen->source = feats_gen.source;
    }
    double acc = 0.0;
    for (const auto& [key, fs] : feats_style.entries) {
        const Tensor& fg = feats_gen.entries.at(key);
        const int C = fg.dim(0);
        const std::int64_t K = std::int64_t(fg.dim(1)) * fg.dim(2);
        const double norm = weights.block_weight(key.first) /
                            (static_cast<double>(fg.dim(1)) * fg.dim(2));
        const Tensor gs = gram(fs);
        const Tensor gg = gram(fg);
        Eigen::Map<const RowMat> gsm(gs.data(), C, C);
        Eigen::Map<const RowMat> ggm(gg.data(), C, C);
        RowMat diff = gsm - ggm;
        acc += norm * diff.squaredNorm();
        if (grad_gen) {
            // d/dF ||Gs - F F^T||_F^2 = -2 (Gs - F F^T + (Gs - F F^T)^T) F = -4 diff F
            Tensor g(fg.shape());
            Eigen::Map<const RowMat> fm(fg.data(), C, K);
            Eigen::Map<RowMat> gm(g.data(), C, K);
            gm.noalias() = (-4.0 * norm) * (diff * fm);
            grad_gen->entries.emplace(key, std::move(g));
        }
    }
    return acc;
}

double content_loss(const FeatureSet& feats_x, const FeatureSet& feats_gen, FeatureSet* grad_gen) {
    check_structure(feats_x, feats_gen, "content_loss");
    if (grad_gen) {
        grad_gen->entries.clear();
        grad_gen->source = feats_gen.source;
    }
    double acc = 0.0;
    for (const auto& [key, fx] : feats_x.entries) {
        const Tensor& fg = feats_gen.entries.at(key);
        check_same_shape(fx, fg, "content_loss entry");
        const double norm = 1.0 / (static_cast<double>(fg.dim(1)) * fg.dim(2));
        double sq = 0.0;
        Tensor g;
        if (grad_gen) g = Tensor(fg.shape());
        for (std::int64_t i = 0; i < fg.numel(); ++i) {
            const double d = fx[i] - fg[i];
            sq += d * d;
            if (grad_gen) g[i] = -2.0 * norm * d;
        }
        acc += norm * sq;
        if (grad_gen) grad_gen->entries.emplace(key, std::move(g));
    }
    return acc;
}

double tv_loss(const Tensor& x_hat, Tensor* grad) {
    if (x_hat.rank() != 3 && x_hat.rank() != 4) {
        throw ShapeMismatchError("tv_loss expects (C,H,W) or (N,C,H,W), got " + x_hat.shape_str());
    }
    const bool batched = x_hat.rank() == 4;
    const int N = batched ? x_hat.dim(0) : 1;
    const int C = x_hat.dim(batched ? 1 : 0);
    const int H = x_hat.dim(batched ? 2 : 1);
    const int W = x_hat.dim(batched ? 3 : 2);
    if (grad) *grad = Tensor(x_hat.shape());
    const std::int64_t plane = std::int64_t(H) * W;
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* p = x_hat.data() + (std::int64_t(n) * C + c) * plane;
            double* gp = grad ? grad->data() + (std::int64_t(n) * C + c) * plane : nullptr;
            for (int r = 0; r < H; ++r) {
                for (int cc = 0; cc < W; ++cc) {
                    const std::int64_t i = std::int64_t(r) * W + cc;
                    if (cc + 1 < W) {
                        const double d = p[i + 1] - p[i];
                        acc += d * d;
                        if (gp) {
                            gp[i + 1] += 2.0 * d / N;
                            gp[i] -= 2.0 * d / N;
                        }
                    }
                    if (r + 1 < H) {
                        const double d = p[i + W] - p[i];
                        acc += d * d;
                        if (gp) {
                            gp[i + W] += 2.0 * d / N;
                            gp[i] -= 2.0 * d / N;
                        }
                    }
                }
            }
        }
    }
    return acc / N;
}

double style_transfer_loss(const FeatureSet& feats_x, const FeatureSet& feats_style,
                           const FeatureSet& feats_gen, const Tensor& x_hat,
                           const LossWeights& weights, FeatureSet* grad_gen, Tensor* grad_x_hat) {
    FeatureSet g_cont, g_sty;
    const double l_cont = content_loss(feats_x, feats_gen.subset(feats_x.keys()),
                                       grad_gen ? &g_cont : nullptr);
    const double l_sty = style_loss(feats_style, feats_gen.subset(feats_style.keys()),
                                    weights, grad_gen ? &g_sty : nullptr);
    const double l_tv = tv_loss(x_hat, grad_x_hat);
    if (grad_x_hat) {
        for (std::int64_t i = 0; i < grad_x_hat->numel(); ++i) (*grad_x_hat)[i] *= weights.omega_tv;
    }
    if (grad_gen) {
        grad_gen->entries.clear();
        grad_gen->source = feats_gen.source;
        for (auto& [key, t] : g_cont.entries) {
            for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= weights.omega_cont;
            grad_gen->entries[key] = std::move(t);
        }
        for (auto& [key, t] : g_sty.entries) {
            auto it = grad_gen->entries.find(key);
            if (it == grad_gen->entries.end()) {
                for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= weights.omega_sty;
                grad_gen->entries[key] = std::move(t);
            } else {
                for (std::int64_t i = 0; i < t.numel(); ++i) it->second[i] += weights.omega_sty * t[i];
            }
        }
    }
    return weights.omega_cont * l_cont + weights.omega_sty * l_sty + weights.omega_tv * l_tv;
}

double generator_objective(ObjectiveMode mode, const ObjectiveParts& parts, const LossWeights& weights) {
    switch (mode) {
        case ObjectiveMode::synthesis_l1:
            if (!parts.has_l1 || parts.has_bce || parts.has_style_transfer) {
                throw ModeError("synthesis_l1 objective needs exactly the adversarial and L1 parts");
            }
            return parts.adv + weights.lambda_dev * parts.l1;
        case ObjectiveMode::segmentation:
            if (!parts.has_bce || parts.has_l1 || parts.has_style_transfer) {
                throw ModeError("segmentation objective needs exactly the adversarial and BCE parts");
            }
            return parts.adv + weights.lambda_seg * parts.bce;
        case ObjectiveMode::synthesis_style:
            if (!parts.has_style_transfer || parts.has_l1) {
                throw ModeError("synthesis_style objective needs the style-transfer part (plus optional BCE)");
            }
            return parts.adv + (parts.has_bce ? weights.lambda_seg * parts.bce : 0.0) +
                   parts.style_transfer;
    }
    throw ModeError("unknown objective mode");
}

}  // namespace vgan::losses
