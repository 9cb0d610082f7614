#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "vesselgan/container.hpp"
#include "vesselgan/data.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/trainer.hpp"

using namespace vgan;
namespace fsys = std::filesystem;

namespace {

TrainConfig tiny_config(TrainMode mode, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.input_size = 64;
    cfg.g_base_filters = 4;
    cfg.d_base_filters = 4;
    cfg.batch_size = 4;
    cfg.seed = seed;
    cfg.epochs = 1;
    return cfg;
}

std::vector<PreprocessedSample> tiny_dataset(int n, std::uint64_t seed) {
    std::vector<PreprocessedSample> out;
    for (const auto& s : make_synthetic_dataset(n, 64, seed)) {
        out.push_back(preprocess(s, DatasetKind::SYNTHETIC, 64));
    }
    return out;
}

}  // namespace

TEST_CASE("sample_noise: statistics and stream determinism") {
    RngStream a(7, "noise");
    Tensor z = sample_noise(25, 0.001, a);  // 25*400 = 10^4 draws
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) mean += z[i] / z.numel();
    for (std::int64_t i = 0; i < z.numel(); ++i) var += (z[i] - mean) * (z[i] - mean) / z.numel();
    const double stdev = std::sqrt(var);
    CHECK(stdev >= 0.00097);
    CHECK(stdev <= 0.00103);

    RngStream b(7, "noise");
    Tensor z2 = sample_noise(25, 0.001, b);
    for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == z2[i]);

    RngStream c(7, "noise");
    Tensor big = sample_noise(25, 1.0, c);
    double m2 = 0.0, v2 = 0.0;
    for (std::int64_t i = 0; i < big.numel(); ++i) m2 += big[i] / big.numel();
    for (std::int64_t i = 0; i < big.numel(); ++i) v2 += (big[i] - m2) * (big[i] - m2) / big.numel();
    CHECK(std::abs(std::sqrt(v2) - 1.0) < 0.03);

    CHECK_THROWS_AS(sample_noise(1, 0.0, a), ConfigError);
}

TEST_CASE("adam: closed form on a scalar quadratic, zero-lr degeneracy") {
    // f(x) = 0.5*(x-3)^2, gradient x-3.
    nn::Param p("x", {1});
    p.value[0] = 10.0;
    const double lr = 0.1, b1 = 0.5, b2 = 0.999, eps = 1e-8;
    Adam opt(lr, b1, b2, eps);

    double x = 10.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 7; ++t) {
        const double g = x - 3.0;
        p.grad[0] = p.value[0] - 3.0;
        opt.step({&p});

        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(p.value[0] - x) < 1e-12);
    }

    nn::Param q("y", {3});
    q.value[0] = 1.0;
    q.value[1] = -2.0;
    q.value[2] = 0.5;
    Tensor before = q.value;
    Adam frozen(0.0, b1, b2, eps);
    q.grad.fill(0.7);
    frozen.step({&q});
    for (int i = 0; i < 3; ++i) CHECK(q.value[i] == before[i]);
}

TEST_CASE("train_step: 2:1 update schedule and loss decrease on a fixed batch") {
    auto data = tiny_dataset(4, 11);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    Batch batch = make_batch(data, idx);

    TrainConfig cfg = tiny_config(TrainMode::segmentation);
    cfg.lr = 1e-3;
    Generator g(cfg.generator_spec(), 1);
    Discriminator d(cfg.discriminator_spec(), 2);
    TrainContext ctx(cfg);

    StepRecord first;
    for (int s = 0; s < 50; ++s) {
        StepRecord rec = train_step(g, d, batch, ctx);
        if (s == 0) first = rec;
        CHECK(g.update_count == cfg.g_updates_per_d * d.update_count);
    }
    CHECK(g.update_count == 100);
    CHECK(d.update_count == 50);

    // Re-evaluate the objective on the same batch: it must have dropped.
    RngStream probe(99, "probe");
    const double now = validation_loss(g, d, batch, ctx, probe);
    CHECK(now < first.g_loss);
}

TEST_CASE("train: epochs=0 returns the initialized checkpoint and empty log") {
    const auto dir = fsys::temp_directory_path() / "vesselgan_test_train0";
    fsys::remove_all(dir);
    auto data = tiny_dataset(4, 12);
    DatasetSplit split = split_train_val(std::move(data), 3);

    TrainConfig cfg = tiny_config(TrainMode::segmentation);
    cfg.epochs = 0;
    TrainResult res = train(cfg, split, dir);
    CHECK(res.log.steps.empty());
    CHECK(res.log.epochs.empty());
    CHECK(fsys::exists(res.best_checkpoint));
    LoadedCheckpoint lc = load_checkpoint(res.best_checkpoint);
    CHECK(lc.step == 0);
    CHECK(lc.network->role() == Role::segmentor);
}

TEST_CASE("train determinism: identical logs and checkpoints for the same seed") {
    auto run = [&](const fsys::path& dir) {
        fsys::remove_all(dir);
        auto data = tiny_dataset(6, 13);
        DatasetSplit split = split_train_val(std::move(data), 5);
        TrainConfig cfg = tiny_config(TrainMode::synthesis_l1, 42);
        cfg.epochs = 2;
        cfg.batch_size = 3;
        return train(cfg, split, dir);
    };
    const auto d1 = fsys::temp_directory_path() / "vesselgan_test_det1";
    const auto d2 = fsys::temp_directory_path() / "vesselgan_test_det2";
    TrainResult a = run(d1);
    TrainResult b = run(d2);

    REQUIRE(a.log.steps.size() == b.log.steps.size());
    for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
        CHECK(a.log.steps[i].g_loss == b.log.steps[i].g_loss);
        CHECK(a.log.steps[i].d_loss == b.log.steps[i].d_loss);
        CHECK(a.log.steps[i].d_real_mean == b.log.steps[i].d_real_mean);
        CHECK(a.log.steps[i].d_fake_mean == b.log.steps[i].d_fake_mean);
    }
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
        CHECK(a.log.epochs[i].val_loss == b.log.epochs[i].val_loss);
    }
    CHECK(a.log.selected_epoch == b.log.selected_epoch);

    // Selection invariant: the chosen epoch minimizes validation loss.
    double best = a.log.epochs[0].val_loss;
    for (const auto& e : a.log.epochs) best = std::min(best, e.val_loss);
    for (const auto& e : a.log.epochs) {
        if (e.epoch == a.log.selected_epoch) CHECK(e.val_loss == best);
    }

    // Checkpoint round trip: reload and compare an inference pass bit-exactly.
    LoadedCheckpoint la = load_checkpoint(a.best_checkpoint);
    LoadedCheckpoint lb = load_checkpoint(b.best_checkpoint);
    auto* ga = dynamic_cast<Generator*>(la.network.get());
    auto* gb = dynamic_cast<Generator*>(lb.network.get());
    REQUIRE(ga);
    REQUIRE(gb);
    RngStream rng(1, "cmp");
    Tensor y({1, 1, 64, 64});
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = rng.uniform() < 0.1 ? 1.0 : -1.0;
    Tensor z = sample_noise(1, 1.0, rng);
    Tensor xa = ga->forward(y, z, false);
    Tensor xb = gb->forward(y, z, false);
    for (std::int64_t i = 0; i < xa.numel(); ++i) CHECK(xa[i] == xb[i]);
}

TEST_CASE("train log serializes as one JSON record per line") {
    TrainLog log;
    log.steps.push_back({0, 1.0, 0.5, 0.05, 0.0, 0.0, 1.2, 0.5, 0.5});
    log.epochs.push_back({1, 10, 0.9, "ckpt_epoch_0001.vgc"});
    log.selected_epoch = 1;
    log.selected_step = 10;
    std::ostringstream os;
    log.write_jsonl(os);
    int lines = 0;
    std::istringstream is(os.str());
    std::string line;
    while (std::getline(is, line)) {
        ++lines;
        CHECK_NOTHROW(nlohmann::json::parse(line));
    }
    CHECK(lines == 3);
}

TEST_CASE("generate: reproducibility, diversity hooks, range, role check") {
    TrainConfig cfg = tiny_config(TrainMode::synthesis_l1);
    Generator g(cfg.generator_spec(), 5);
    RngStream rng(2, "gen");
    Tensor mask({64, 64});
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.1 ? 1.0 : 0.0;

    RngStream noise_a(3, "n");
    auto out = generate(g, {mask}, 3, 1.0, noise_a);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].size() == 3);
    for (const Tensor& img : out[0]) {
        CHECK(img.shape() == std::vector<int>{3, 64, 64});
        for (std::int64_t i = 0; i < img.numel(); ++i) {
            CHECK(img[i] >= -1.0);
            CHECK(img[i] <= 1.0);
        }
    }
    double l1 = 0.0;
    for (std::int64_t i = 0; i < out[0][0].numel(); ++i) {
        l1 += std::abs(out[0][0][i] - out[0][1][i]) / out[0][0].numel();
    }
    CHECK(l1 > 0.0);

    RngStream noise_b(3, "n");
    auto out2 = generate(g, {mask}, 3, 1.0, noise_b);
    for (std::int64_t i = 0; i < out[0][0].numel(); ++i) CHECK(out[0][0][i] == out2[0][0][i]);

    Generator seg(tiny_config(TrainMode::segmentation).generator_spec(), 5);
    RngStream noise_c(3, "n");
    CHECK_THROWS_AS(generate(seg, {mask}, 1, 1.0, noise_c), ModeError);
}

TEST_CASE("train_step aborts with NonFiniteLossError when the objective overflows") {
    auto data = tiny_dataset(2, 15);
    Batch batch = make_batch(data, {0, 1});
    TrainConfig cfg = tiny_config(TrainMode::synthesis_l1);
    cfg.weights.lambda_dev = 1e308;  // drives lambda * L1 to infinity
    Generator g(cfg.generator_spec(), 1);
    Discriminator d(cfg.discriminator_spec(), 2);
    TrainContext ctx(cfg);
    CHECK_THROWS_AS(train_step(g, d, batch, ctx), NonFiniteLossError);
}

TEST_CASE("style-mode training runs and never touches the frozen extractor") {
    const auto dir = fsys::temp_directory_path() / "vesselgan_test_style";
    fsys::remove_all(dir);
    auto data = tiny_dataset(4, 14);
    std::vector<Tensor> style_pool{data[0].image, data[1].image};
    DatasetSplit split = split_train_val(std::move(data), 7);

    TrainConfig cfg = tiny_config(TrainMode::synthesis_style, 21);
    cfg.epochs = 1;
    cfg.batch_size = 2;
    Extractor ex = Extractor::standin();
    const std::uint64_t hash_before = ex.params_hash();

    TrainResult res = train(cfg, split, dir, &ex, &style_pool);
    CHECK(ex.params_hash() == hash_before);
    REQUIRE(!res.log.steps.empty());
    for (const auto& s : res.log.steps) {
        CHECK(std::isfinite(s.g_loss));
        CHECK(s.g_style >= 0.0);
        CHECK(std::isfinite(s.d_loss));
    }

    // Style mode requires the extractor and pool.
    TrainContext ctx(cfg);
    auto batch = make_batch(split.train, {0});
    Generator g(cfg.generator_spec(), 1);
    Discriminator d(cfg.discriminator_spec(), 2);
    CHECK_THROWS_AS(train_step(g, d, batch, ctx), ConfigError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg = tiny_config(TrainMode::segmentation);
    CHECK_NOTHROW(cfg.validate());
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lr = 1e-4;
    cfg.g_updates_per_d = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.g_updates_per_d = 2;
    cfg.epochs = 501;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
