#include "vesselgan/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "vesselgan/errors.hpp"

namespace vgan {

namespace {

constexpr int kBins = 256;

int bin_of(double v) { return std::min(kBins - 1, static_cast<int>(v * kBins)); }

void check_metric_shapes(const Tensor& a, const Tensor& b, const Tensor& fov, const char* what) {
    check_same_shape(a, b, what);
    check_same_shape(a, fov, what);
}

}  // namespace

OtsuResult otsu_threshold(const Tensor& prob, const Tensor& fov) {
    check_same_shape(prob, fov, "otsu_threshold");
    std::array<std::int64_t, kBins> hist{};
    std::array<double, kBins> value_sum{};
    std::int64_t total = 0;
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        if (fov[i] < 0.5) continue;
        const double v = prob[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DomainError("otsu_threshold: score outside [0,1]: " + std::to_string(v));
        }
        const int b = bin_of(v);
        ++hist[b];
        value_sum[b] += v;
        ++total;
    }
    int occupied = 0;
    for (int b = 0; b < kBins; ++b) occupied += hist[b] > 0 ? 1 : 0;
    if (total == 0 || occupied < 2) {
        throw DegenerateInputError("otsu_threshold: all FOV scores fall in one histogram bin");
    }

    // Between-class variance sweep: sigma_b^2(k) = w0*w1*(mu0-mu1)^2 with the
    // split {bins <= k} vs {bins > k}; strict > keeps ties at the lower k.
    const double total_sum = std::accumulate(value_sum.begin(), value_sum.end(), 0.0);
    double best_var = -1.0;
    int best_k = 0;
    std::int64_t w0 = 0;
    double sum0 = 0.0;
    for (int k = 0; k + 1 < kBins; ++k) {
        w0 += hist[k];
        sum0 += value_sum[k];
        const std::int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total_sum - sum0) / w1;
        const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_k = k;
        }
    }

    OtsuResult out;
    // Largest double below the bin edge, so that (p > t*) reproduces the
    // histogram split exactly for edge-exact scores.
    out.threshold = std::nextafter(static_cast<double>(best_k + 1) / kBins, 0.0);
    out.mask = Tensor(prob.shape());
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        out.mask[i] = (fov[i] > 0.5 && prob[i] > out.threshold) ? 1.0 : 0.0;
    }
    return out;
}

double dice(const Tensor& pred, const Tensor& gold, const Tensor& fov) {
    check_metric_shapes(pred, gold, fov, "dice");
    std::int64_t inter = 0, np = 0, ng = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        if (fov[i] < 0.5) continue;
        const bool p = pred[i] > 0.5, g = gold[i] > 0.5;
        inter += (p && g) ? 1 : 0;
        np += p ? 1 : 0;
        ng += g ? 1 : 0;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double auc_roc(const Tensor& prob, const Tensor& gold, const Tensor& fov) {
    check_metric_shapes(prob, gold, fov, "auc_roc");
    std::vector<std::pair<double, bool>> pts;
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        if (fov[i] < 0.5) continue;
        pts.emplace_back(prob[i], gold[i] > 0.5);
    }
    std::int64_t P = 0;
    for (const auto& [s, pos] : pts) P += pos ? 1 : 0;
    const std::int64_t N = static_cast<std::int64_t>(pts.size()) - P;
    if (P == 0 || N == 0) {
        throw SingleClassError("auc_roc needs both classes inside the FOV");
    }
    // Rank statistic with midranks for ties: AUC = (R_pos - P(P+1)/2) / (P*N).
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (pts[k].second) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(P) * (static_cast<double>(P) + 1.0);
    return u / (static_cast<double>(P) * static_cast<double>(N));
}

double auc_pr(const Tensor& prob, const Tensor& gold, const Tensor& fov) {
    check_metric_shapes(prob, gold, fov, "auc_pr");
    std::vector<std::pair<double, bool>> pts;
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        if (fov[i] < 0.5) continue;
        pts.emplace_back(prob[i], gold[i] > 0.5);
    }
    std::int64_t P = 0;
    for (const auto& [s, pos] : pts) P += pos ? 1 : 0;
    if (P == 0) throw NoPositiveError("auc_pr needs at least one positive inside the FOV");

    // Descending threshold sweep over distinct scores; step-wise
    // (right-continuous) interpolation: sum (R_i - R_{i-1}) * P_i.
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    double auc = 0.0, prev_recall = 0.0;
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        for (std::size_t k = i; k < j; ++k) {
            if (pts[k].second) ++tp;
            else ++fp;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(P);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return auc;
}

namespace {

EvalReport evaluate_with(const std::vector<FundusSample>& samples,
                         const std::function<Tensor(const FundusSample&)>& predict,
                         nlohmann::json config_echo) {
    std::vector<const FundusSample*> ordered;
    ordered.reserve(samples.size());
    for (const auto& s : samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const FundusSample* a, const FundusSample* b) { return a->id < b->id; });

    EvalReport report;
    report.config_echo = std::move(config_echo);
    for (const FundusSample* s : ordered) {
        const Tensor prob = predict(*s);
        PerImageMetrics m;
        m.id = s->id;
        const OtsuResult otsu = otsu_threshold(prob, s->fov);
        m.otsu_threshold = otsu.threshold;
        m.dice = dice(otsu.mask, s->mask, s->fov);
        m.auc_roc = auc_roc(prob, s->mask, s->fov);
        m.auc_pr = auc_pr(prob, s->mask, s->fov);
        report.per_image.push_back(m);
    }
    const double n = static_cast<double>(report.per_image.size());
    for (const auto& m : report.per_image) {
        report.dice += m.dice;
        report.auc_roc += m.auc_roc;
        report.auc_pr += m.auc_pr;
    }
    report.dice /= n;
    report.auc_roc /= n;
    report.auc_pr /= n;
    return report;
}

}  // namespace

EvalReport evaluate_dataset(Generator& segmentor, const std::vector<FundusSample>& samples) {
    if (segmentor.role() != Role::segmentor) {
        throw ModeError("evaluate_dataset requires a segmentation checkpoint");
    }
    const int S = segmentor.spec().input_size;
    nlohmann::json echo;
    echo["network_spec"] = segmentor.spec().to_json();
    echo["input_size"] = S;
    return evaluate_with(
        samples,
        [&](const FundusSample& s) {
            const PreprocessedSample pre = preprocess(s, s.kind, S);
            Tensor x({1, 3, S, S});
            std::copy_n(pre.zscore.data(), pre.zscore.numel(), x.data());
            const Tensor prob = segmentor.forward(x, false);
            Tensor plane({S, S});
            std::copy_n(prob.data(), plane.numel(), plane.data());
            return restore_original(plane, s);
        },
        std::move(echo));
}

EvalReport evaluate_gold_fixture(const std::vector<FundusSample>& samples) {
    nlohmann::json echo;
    echo["fixture"] = "gold-as-prediction";
    return evaluate_with(
        samples, [](const FundusSample& s) { return s.mask; }, std::move(echo));
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["aggregate"] = {{"dice", dice}, {"auc_roc", auc_roc}, {"auc_pr", auc_pr}};
    auto arr = nlohmann::json::array();
    for (const auto& m : per_image) {
        arr.push_back({{"id", m.id},
                       {"dice", m.dice},
                       {"auc_roc", m.auc_roc},
                       {"auc_pr", m.auc_pr},
                       {"otsu_threshold", m.otsu_threshold}});
    }
    j["per_image"] = arr;
    j["config"] = config_echo;
    return j;
}

std::string EvalReport::render_table(const std::string& dataset_label) const {
    std::ostringstream os;
    os << "Method            | " << dataset_label << "\n";
    os << "                  | Dice Score | AUC ROC | AUC PR\n";
    os << "------------------+------------+---------+-------\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-18s| %10.3f | %7.3f | %6.3f\n", "This run", dice, auc_roc, auc_pr);
    os << buf;
    return os.str();
}

}  // namespace vgan
