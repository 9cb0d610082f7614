#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "vesselgan/data.hpp"
#include "vesselgan/errors.hpp"

using namespace vgan;
namespace fsys = std::filesystem;

namespace {

fsys::path fresh_dir(const std::string& name) {
    auto p = fsys::temp_directory_path() / ("vesselgan_test_" + name);
    fsys::remove_all(p);
    fsys::create_directories(p);
    return p;
}

/// Disk-shaped FundusSample at an arbitrary size, DRIVE-like geometry.
FundusSample disk_sample(int h, int w, DatasetKind kind) {
    FundusSample s;
    s.id = "disk";
    s.kind = kind;
    s.orig_h = h;
    s.orig_w = w;
    s.image = Tensor({3, h, w});
    s.mask = Tensor({h, w});
    s.fov = Tensor({h, w});
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double fov_r = 0.45 * std::min(h, w);
    const double mask_r = 0.25 * std::min(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double d = std::hypot(r - cy, c - cx);
            s.fov.at(r, c) = d <= fov_r ? 1.0 : 0.0;
            s.mask.at(r, c) = d <= mask_r ? 1.0 : 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                s.image.at(ch, r, c) = s.fov.at(r, c) * (120.0 + 40.0 * std::sin(0.1 * r) + 10 * ch);
            }
        }
    }
    return s;
}

bool binary_and_nested(const PreprocessedSample& p) {
    for (std::int64_t i = 0; i < p.mask.numel(); ++i) {
        if (p.mask[i] != 0.0 && p.mask[i] != 1.0) return false;
        if (p.fov[i] != 0.0 && p.fov[i] != 1.0) return false;
        if (p.mask[i] > p.fov[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("synthetic dataset: determinism, invariants, vessel fraction") {
    auto a = make_synthetic_dataset(6, 64, 7);
    auto b = make_synthetic_dataset(6, 64, 7);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        for (std::int64_t j = 0; j < a[i].image.numel(); ++j) CHECK(a[i].image[j] == b[i].image[j]);
        for (std::int64_t j = 0; j < a[i].mask.numel(); ++j) {
            CHECK(a[i].mask[j] == b[i].mask[j]);
            CHECK(a[i].mask[j] <= a[i].fov[j]);
        }
        const double frac = a[i].mask.sum() / a[i].fov.sum();
        CHECK(frac >= 0.02);
        CHECK(frac <= 0.25);
    }
    auto c = make_synthetic_dataset(2, 64, 8);
    bool differs = false;
    for (std::int64_t j = 0; j < c[0].mask.numel(); ++j) differs |= c[0].mask[j] != a[0].mask[j];
    CHECK(differs);
    CHECK_THROWS_AS(make_synthetic_dataset(0, 64, 1), ConfigError);
    CHECK_THROWS_AS(make_synthetic_dataset(1, 32, 1), ConfigError);
}

TEST_CASE("export + load round trip via the standard layout") {
    const auto dir = fresh_dir("roundtrip");
    auto ds = make_synthetic_dataset(3, 64, 21);
    export_dataset(ds, dir, {{"seed", 21}, {"size", 64}});
    CHECK(fsys::exists(dir / "manifest.json"));

    auto loaded = load_dataset(dir, DatasetKind::SYNTHETIC);
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(loaded[i].id == ds[i].id);
        // Masks and FOV are binary: preserved exactly through PNG.
        for (std::int64_t j = 0; j < ds[i].mask.numel(); ++j) {
            CHECK(loaded[i].mask[j] == ds[i].mask[j]);
            CHECK(loaded[i].fov[j] == ds[i].fov[j]);
        }
        // Images round to nearest integer level.
        for (std::int64_t j = 0; j < ds[i].image.numel(); ++j) {
            CHECK(std::abs(loaded[i].image[j] - ds[i].image[j]) <= 0.5);
        }
    }
}

TEST_CASE("load_dataset error paths") {
    const auto dir = fresh_dir("loaderr");
    CHECK_THROWS_AS(load_dataset(dir / "missing", DatasetKind::SYNTHETIC), DataError);

    fsys::create_directories(dir / "images");
    auto empty = load_dataset(dir, DatasetKind::SYNTHETIC);  // warning, empty list
    CHECK(empty.empty());

    auto ds = make_synthetic_dataset(2, 64, 3);
    export_dataset(ds, dir, {});
    fsys::remove(dir / "masks" / (ds[1].id + ".png"));
    CHECK_THROWS_AS(load_dataset(dir, DatasetKind::SYNTHETIC), MissingPairError);
    fsys::remove_all(dir / "masks");
    CHECK_THROWS_AS(load_dataset(dir, DatasetKind::SYNTHETIC), MissingPairError);
}

TEST_CASE("preprocess: geometry, value range, z-score invariant") {
    // DRIVE-shaped sample: 584x565 -> center crop 565 -> 512.
    FundusSample drive = disk_sample(584, 565, DatasetKind::DRIVE);
    PreprocessedSample p = preprocess(drive, DatasetKind::DRIVE, 512);
    CHECK(p.image.shape() == std::vector<int>{3, 512, 512});
    CHECK(binary_and_nested(p));
    for (std::int64_t i = 0; i < p.image.numel(); ++i) {
        CHECK(p.image[i] >= -1.0);
        CHECK(p.image[i] <= 1.0);
    }
    // z-score statistics over FOV pixels per channel.
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        std::int64_t n = 0;
        for (int r = 0; r < 512; ++r) {
            for (int cc = 0; cc < 512; ++cc) {
                if (p.fov.at(r, cc) > 0.5) {
                    mean += p.zscore.at(c, r, cc);
                    ++n;
                }
            }
        }
        mean /= n;
        for (int r = 0; r < 512; ++r) {
            for (int cc = 0; cc < 512; ++cc) {
                if (p.fov.at(r, cc) > 0.5) {
                    const double d = p.zscore.at(c, r, cc) - mean;
                    var += d * d / n;
                }
            }
        }
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
    }

    // All-zero image maps to all -1.
    FundusSample zero = disk_sample(128, 128, DatasetKind::SYNTHETIC);
    zero.image.zero();
    PreprocessedSample pz = preprocess(zero, DatasetKind::SYNTHETIC, 64);
    for (std::int64_t i = 0; i < pz.image.numel(); ++i) CHECK(pz.image[i] == -1.0);

    // Determinism: bit-identical outputs.
    PreprocessedSample p2 = preprocess(drive, DatasetKind::DRIVE, 512);
    for (std::int64_t i = 0; i < p.image.numel(); ++i) CHECK(p.image[i] == p2.image[i]);

    // Size validation.
    CHECK_THROWS_AS(preprocess(disk_sample(512, 512, DatasetKind::SYNTHETIC), DatasetKind::DRIVE, 512),
                    ShapeMismatchError);
    CHECK_THROWS_AS(preprocess(disk_sample(100, 80, DatasetKind::SYNTHETIC), DatasetKind::SYNTHETIC, 64),
                    ShapeMismatchError);
    // STARE accepts both stated orientations.
    CHECK_NOTHROW(preprocess(disk_sample(700, 605, DatasetKind::STARE), DatasetKind::STARE, 64));
    CHECK_NOTHROW(preprocess(disk_sample(605, 700, DatasetKind::STARE), DatasetKind::STARE, 64));
}

TEST_CASE("linear scaling is invertible up to quantization") {
    RngStream rng(40, "scale");
    for (int rep = 0; rep < 100; ++rep) {
        const double v = 255.0 * rng.uniform();
        const double scaled = v / 127.5 - 1.0;
        const double back = (scaled + 1.0) * 127.5;
        CHECK(std::abs(back - v) <= 1.0 / 255.0);
    }
}

TEST_CASE("restore_original: zero, fov identity, STARE geometry, crop round trip") {
    FundusSample stare = disk_sample(700, 605, DatasetKind::STARE);
    Tensor zero({512, 512});
    Tensor restored = restore_original(zero, stare);
    CHECK(restored.shape() == std::vector<int>{700, 605});
    for (std::int64_t i = 0; i < restored.numel(); ++i) CHECK(restored[i] == 0.0);

    Tensor ones = Tensor::full({512, 512}, 1.0);
    Tensor r1 = restore_original(ones, stare);
    for (std::int64_t i = 0; i < r1.numel(); ++i) CHECK(r1[i] == stare.fov[i]);

    // preprocess -> restore round trip keeps a disk mask at IoU >= 0.95.
    FundusSample drive = disk_sample(584, 565, DatasetKind::DRIVE);
    PreprocessedSample p = preprocess(drive, DatasetKind::DRIVE, 512);
    Tensor pred = p.mask;  // gold at preprocessed resolution as the prediction
    Tensor back = restore_original(pred, drive);
    Tensor bin(back.shape());
    for (std::int64_t i = 0; i < back.numel(); ++i) bin[i] = back[i] > 0.5 ? 1.0 : 0.0;
    CHECK(oracles::iou_binary(bin, drive.mask) >= 0.95);
}

TEST_CASE("augment: involution, identity, rot90 oracle, arbitrary angles") {
    FundusSample base = disk_sample(128, 128, DatasetKind::SYNTHETIC);
    // Make it asymmetric so transforms are distinguishable.
    for (int r = 0; r < 128; ++r) {
        for (int c = 0; c < 128; ++c) base.image.at(0, r, c) += 0.3 * c;
    }
    PreprocessedSample p = preprocess(base, DatasetKind::SYNTHETIC, 64);

    AugmentSpec hflip_only;
    hflip_only.hflip = true;
    auto flipped = augment(p, hflip_only, 0);
    REQUIRE(flipped.size() == 2);
    auto twice = augment(flipped[1], hflip_only, 0);
    for (std::int64_t i = 0; i < p.image.numel(); ++i) CHECK(twice[1].image[i] == p.image[i]);

    AugmentSpec rot0;
    rot0.rotations_deg = {0.0};
    auto same = augment(p, rot0, 0);
    REQUIRE(same.size() == 1);  // 0-degree copy is the original itself

    AugmentSpec rot90;
    rot90.rotations_deg = {90.0};
    auto rotated = augment(p, rot90, 0);
    REQUIRE(rotated.size() == 2);
    Tensor expect = oracles::rot90_ccw(p.mask);
    for (std::int64_t i = 0; i < expect.numel(); ++i) CHECK(rotated[1].mask[i] == expect[i]);

    // 4x4 asymmetric mask remap check at the plane level.
    AugmentSpec full;
    full.rotations_deg = {0, 90, 180, 270};
    full.hflip = true;
    auto eight = augment(p, full, 0);
    CHECK(eight.size() == 8);
    std::set<std::string> ids;
    for (const auto& s : eight) ids.insert(s.id);
    CHECK(ids.size() == 8);

    AugmentSpec arbitrary;
    arbitrary.rotations_deg = {33.5};
    auto rot = augment(p, arbitrary, 0);
    REQUIRE(rot.size() == 2);
    CHECK(binary_and_nested(rot[1]));
    for (std::int64_t i = 0; i < rot[1].image.numel(); ++i) {
        CHECK(rot[1].image[i] >= -1.0);
        CHECK(rot[1].image[i] <= 1.0);
    }

    AugmentSpec bad;
    bad.rotations_deg = {360.0};
    CHECK_THROWS_AS(augment(p, bad, 0), ConfigError);
}

TEST_CASE("split_train_val: ratios, determinism, partition") {
    auto mk = [](int n) {
        std::vector<PreprocessedSample> v;
        for (int i = 0; i < n; ++i) {
            PreprocessedSample s;
            s.id = "s" + std::to_string(i);
            v.push_back(s);
        }
        return v;
    };

    DatasetSplit s20 = split_train_val(mk(20), 5);
    CHECK(s20.train.size() == 19);
    CHECK(s20.val.size() == 1);

    DatasetSplit s40 = split_train_val(mk(40), 5);
    CHECK(s40.train.size() == 38);
    CHECK(s40.val.size() == 2);

    DatasetSplit again = split_train_val(mk(40), 5);
    for (std::size_t i = 0; i < s40.val.size(); ++i) CHECK(s40.val[i].id == again.val[i].id);

    std::set<std::string> all;
    for (const auto& s : s40.train) all.insert(s.id);
    for (const auto& s : s40.val) all.insert(s.id);
    CHECK(all.size() == 40);

    CHECK_THROWS_AS(split_train_val(mk(1), 5), InsufficientDataError);
}

TEST_CASE("preprocessed sample container IO round trip") {
    const auto dir = fresh_dir("prepio");
    auto ds = make_synthetic_dataset(1, 64, 33);
    PreprocessedSample p = preprocess(ds[0], DatasetKind::SYNTHETIC, 64);
    save_preprocessed(p, dir / "s.vga");
    PreprocessedSample q = load_preprocessed(dir / "s.vga");
    CHECK(q.id == p.id);
    CHECK(q.kind == p.kind);
    for (std::int64_t i = 0; i < p.image.numel(); ++i) CHECK(q.image[i] == p.image[i]);
    for (std::int64_t i = 0; i < p.zscore.numel(); ++i) CHECK(q.zscore[i] == p.zscore[i]);
}
