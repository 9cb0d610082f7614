#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vesselgan/data.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/evaluator.hpp"
#include "vesselgan/networks.hpp"

using namespace vgan;

namespace {

Tensor full_fov(int h, int w) { return Tensor::full({h, w}, 1.0); }

struct Instance {
    Tensor prob, gold, fov;
};

Instance random_instance(RngStream& rng, int side, double pos_rate = 0.3) {
    Instance in;
    in.prob = oracles::random_tensor({side, side}, rng, 0.0, 1.0);
    in.gold = Tensor({side, side});
    for (std::int64_t i = 0; i < in.gold.numel(); ++i) in.gold[i] = rng.uniform() < pos_rate ? 1.0 : 0.0;
    in.fov = full_fov(side, side);
    return in;
}

}  // namespace

TEST_CASE("otsu: two-valued separation and oracle equivalence") {
    Tensor prob({10, 10});
    Tensor fov = full_fov(10, 10);
    for (std::int64_t i = 0; i < prob.numel(); ++i) prob[i] = i < 60 ? 0.2 : 0.8;
    OtsuResult r = otsu_threshold(prob, fov);
    CHECK(r.threshold > 0.2);
    CHECK(r.threshold < 0.8);
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        CHECK(r.mask[i] == (prob[i] == 0.8 ? 1.0 : 0.0));
    }

    RngStream rng(50, "otsu");
    for (int rep = 0; rep < 10; ++rep) {
        Instance in = random_instance(rng, 16);
        OtsuResult res = otsu_threshold(in.prob, in.fov);
        std::vector<double> vals;
        for (std::int64_t i = 0; i < in.prob.numel(); ++i) vals.push_back(in.prob[i]);
        auto oracle = oracles::otsu_sweep(vals);
        // Same split bin, same classification, exactly.
        for (std::int64_t i = 0; i < in.prob.numel(); ++i) {
            CHECK(res.mask[i] == (oracle.in_upper_class[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
        }
    }

    // Gold mask as probabilities: threshold reproduces the mask exactly.
    Tensor gold({8, 8});
    for (std::int64_t i = 0; i < gold.numel(); ++i) gold[i] = i % 3 == 0 ? 1.0 : 0.0;
    OtsuResult rg = otsu_threshold(gold, full_fov(8, 8));
    for (std::int64_t i = 0; i < gold.numel(); ++i) CHECK(rg.mask[i] == gold[i]);

    Tensor constant = Tensor::full({8, 8}, 0.4);
    CHECK_THROWS_AS(otsu_threshold(constant, full_fov(8, 8)), DegenerateInputError);
}

TEST_CASE("otsu threshold monotonicity: higher threshold, never bigger mask") {
    RngStream rng(51, "mono");
    Instance in = random_instance(rng, 12);
    for (double t1 : {0.2, 0.4, 0.6}) {
        const double t2 = t1 + 0.2;
        std::int64_t n1 = 0, n2 = 0;
        for (std::int64_t i = 0; i < in.prob.numel(); ++i) {
            n1 += in.prob[i] > t1 ? 1 : 0;
            n2 += in.prob[i] > t2 ? 1 : 0;
        }
        CHECK(n2 <= n1);
    }
}

TEST_CASE("dice: identities, closed forms, symmetry, FOV restriction") {
    Tensor fov = full_fov(6, 6);
    Tensor a({6, 6});
    for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = i < 12 ? 1.0 : 0.0;
    CHECK(dice(a, a, fov) == 1.0);

    Tensor empty({6, 6});
    CHECK(dice(empty, empty, fov) == 1.0);

    Tensor b({6, 6});
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = (i >= 12 && i < 24) ? 1.0 : 0.0;
    CHECK(dice(a, b, fov) == 0.0);

    // pred covers half of gold, no false positives: 2*(N/2)/(N/2+N) = 2/3.
    Tensor half({6, 6});
    for (std::int64_t i = 0; i < 6; ++i) half[i] = 1.0;
    CHECK(dice(half, a, fov) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    RngStream rng(52, "dice");
    Instance in = random_instance(rng, 8);
    Tensor pred({8, 8});
    for (std::int64_t i = 0; i < pred.numel(); ++i) pred[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    CHECK(dice(pred, in.gold, in.fov) == dice(in.gold, pred, in.fov));

    // Pixels outside the FOV never count.
    Tensor narrow = in.fov;
    for (int i = 0; i < 8; ++i) narrow.at(0, i) = 0.0;
    Tensor pred2 = pred;
    for (int i = 0; i < 8; ++i) pred2.at(0, i) = 1.0 - pred2.at(0, i);
    CHECK(dice(pred2, in.gold, narrow) == dice(pred, in.gold, narrow));
}

TEST_CASE("auc_roc: perfect, constant, 6-pixel example, oracle, monotone invariance") {
    Tensor fov = full_fov(1, 6);
    Tensor gold({1, 6});
    Tensor prob({1, 6});
    const double scores[6] = {0.9, 0.8, 0.7, 0.4, 0.3, 0.2};
    const double labels[6] = {1, 1, 0, 1, 0, 0};
    for (int i = 0; i < 6; ++i) {
        prob[i] = scores[i];
        gold[i] = labels[i];
    }
    const double expect = oracles::auc_roc_pairs({scores, scores + 6}, {1, 1, 0, 1, 0, 0});
    CHECK(auc_roc(prob, gold, fov) == doctest::Approx(expect).epsilon(1e-15));

    CHECK(auc_roc(gold, gold, fov) == 1.0);

    Tensor constant = Tensor::full({1, 6}, 0.5);
    CHECK(auc_roc(constant, gold, fov) == 0.5);

    RngStream rng(53, "roc");
    for (int rep = 0; rep < 20; ++rep) {
        // 50-pixel instances with ties (quantized scores).
        Tensor p({5, 10}), g({5, 10});
        std::vector<double> sv;
        std::vector<int> lv;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            p[i] = std::round(rng.uniform() * 20.0) / 20.0;
            g[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
            sv.push_back(p[i]);
            lv.push_back(static_cast<int>(g[i]));
        }
        if (std::count(lv.begin(), lv.end(), 1) == 0 || std::count(lv.begin(), lv.end(), 0) == 0) continue;
        const double lib = auc_roc(p, g, full_fov(5, 10));
        const double orc = oracles::auc_roc_pairs(sv, lv);
        CHECK(std::abs(lib - orc) < 1e-12);

        // Strictly monotone transform leaves AUC unchanged.
        Tensor p2 = p;
        for (std::int64_t i = 0; i < p2.numel(); ++i) p2[i] = p2[i] * p2[i] * 0.9 + 0.05 * p2[i];
        CHECK(std::abs(auc_roc(p2, g, full_fov(5, 10)) - lib) < 1e-12);
    }

    Tensor all_pos = Tensor::full({1, 6}, 1.0);
    CHECK_THROWS_AS(auc_roc(prob, all_pos, fov), SingleClassError);
}

TEST_CASE("auc_pr: perfect, baseline property, oracle") {
    Tensor fov = full_fov(1, 6);
    Tensor gold({1, 6});
    for (int i = 0; i < 6; ++i) gold[i] = i < 2 ? 1.0 : 0.0;
    CHECK(auc_pr(gold, gold, fov) == 1.0);

    // Constant scores: AUC-PR equals the positive rate.
    Tensor constant = Tensor::full({1, 6}, 0.7);
    CHECK(auc_pr(constant, gold, fov) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));

    RngStream rng(54, "pr");
    for (int rep = 0; rep < 10; ++rep) {
        Tensor p({4, 6}), g({4, 6});
        std::vector<double> sv;
        std::vector<int> lv;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            p[i] = std::round(rng.uniform() * 10.0) / 10.0;
            g[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
            sv.push_back(p[i]);
            lv.push_back(static_cast<int>(g[i]));
        }
        if (std::count(lv.begin(), lv.end(), 1) == 0) continue;
        CHECK(std::abs(auc_pr(p, g, full_fov(4, 6)) - oracles::auc_pr_sweep(sv, lv)) < 1e-12);
    }

    Tensor none({1, 6});
    CHECK_THROWS_AS(auc_pr(gold, none, fov), NoPositiveError);
}

TEST_CASE("metrics ignore everything outside the FOV bit-exactly") {
    RngStream rng(55, "fovinv");
    Instance in = random_instance(rng, 10);
    // Knock a ring out of the FOV.
    for (int i = 0; i < 10; ++i) {
        in.fov.at(0, i) = 0.0;
        in.fov.at(9, i) = 0.0;
    }
    const OtsuResult o1 = otsu_threshold(in.prob, in.fov);
    const double d1 = dice(o1.mask, in.gold, in.fov);
    const double r1 = auc_roc(in.prob, in.gold, in.fov);
    const double p1 = auc_pr(in.prob, in.gold, in.fov);

    // Perturb non-FOV scores and gold arbitrarily.
    Instance mod = in;
    for (int i = 0; i < 10; ++i) {
        mod.prob.at(0, i) = rng.uniform();
        mod.prob.at(9, i) = rng.uniform();
        mod.gold.at(0, i) = 1.0 - mod.gold.at(0, i);
    }
    const OtsuResult o2 = otsu_threshold(mod.prob, mod.fov);
    CHECK(o2.threshold == o1.threshold);
    CHECK(dice(o2.mask, mod.gold, mod.fov) == d1);
    CHECK(auc_roc(mod.prob, mod.gold, mod.fov) == r1);
    CHECK(auc_pr(mod.prob, mod.gold, mod.fov) == p1);
}

TEST_CASE("evaluate_dataset: untrained segmentor yields in-range metrics; role is enforced") {
    auto ds = make_synthetic_dataset(2, 64, 123);
    NetworkSpec spec = default_spec(Role::segmentor, 64);
    spec.base_filters = 4;
    Generator seg(spec, 3);
    EvalReport rep = evaluate_dataset(seg, ds);
    REQUIRE(rep.per_image.size() == 2);
    for (const auto& m : rep.per_image) {
        for (double v : {m.dice, m.auc_roc, m.auc_pr}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(m.otsu_threshold >= 0.0);
        CHECK(m.otsu_threshold <= 1.0);
    }
    for (double v : {rep.dice, rep.auc_roc, rep.auc_pr}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    NetworkSpec synth_spec = default_spec(Role::synthesis, 64);
    synth_spec.base_filters = 4;
    Generator synth(synth_spec, 3);
    CHECK_THROWS_AS(evaluate_dataset(synth, ds), ModeError);
}

TEST_CASE("gold-as-prediction fixture scores exactly 1.0 everywhere") {
    auto ds = make_synthetic_dataset(4, 64, 99);
    EvalReport rep = evaluate_gold_fixture(ds);
    CHECK(rep.dice == 1.0);
    CHECK(rep.auc_roc == 1.0);
    CHECK(rep.auc_pr == 1.0);
    for (const auto& m : rep.per_image) {
        CHECK(m.dice == 1.0);
        CHECK(m.auc_roc == 1.0);
        CHECK(m.auc_pr == 1.0);
    }
    // Report serialization carries all values in [0,1].
    auto j = rep.to_json();
    CHECK(j["aggregate"]["dice"] == 1.0);
    CHECK(!rep.render_table("SYNTHETIC").empty());
}
