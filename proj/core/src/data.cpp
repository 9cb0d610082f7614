#include "vesselgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vesselgan/container.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/rng.hpp"

namespace vgan {

namespace fsys = std::filesystem;

std::string kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::DRIVE: return "drive";
        case DatasetKind::STARE: return "stare";
        case DatasetKind::SYNTHETIC: return "synthetic";
    }
    return "?";
}

DatasetKind kind_from_name(const std::string& s) {
    std::string t = s;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "drive") return DatasetKind::DRIVE;
    if (t == "stare") return DatasetKind::STARE;
    if (t == "synthetic") return DatasetKind::SYNTHETIC;
    throw ConfigError("unknown dataset kind '" + s + "'");
}

void FundusSample::validate() const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeMismatchError("sample " + id + ": image must be (3,H,W), got " + image.shape_str());
    }
    const int H = image.dim(1), W = image.dim(2);
    if (mask.rank() != 2 || mask.dim(0) != H || mask.dim(1) != W) {
        throw ShapeMismatchError("sample " + id + ": mask shape " + mask.shape_str());
    }
    if (fov.rank() != 2 || fov.dim(0) != H || fov.dim(1) != W) {
        throw ShapeMismatchError("sample " + id + ": fov shape " + fov.shape_str());
    }
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        if ((mask[i] != 0.0 && mask[i] != 1.0) || (fov[i] != 0.0 && fov[i] != 1.0)) {
            throw DataError("sample " + id + ": mask/fov must be binary");
        }
        if (mask[i] > fov[i]) throw DataError("sample " + id + ": vessel pixel outside FOV");
    }
    if (orig_h != H || orig_w != W) {
        throw ShapeMismatchError("sample " + id + ": original_size disagrees with arrays");
    }
}

// ---------------------------------------------------------------------------
// Geometry helpers. Resizes are hand-rolled so that constant fields map to
// exactly constant fields (weights are normalized), which the restoration
// contract relies on.
// ---------------------------------------------------------------------------
namespace {

double cubic_w(double x) {
    constexpr double a = -0.5;  // Catmull-Rom
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

// Weights stay unnormalized; the interpolation divides the dot product by
// their sum, so constant fields map to exactly constant fields.
struct CubicTaps {
    int idx[4];
    double w[4];
    double wsum;
};

std::vector<CubicTaps> cubic_taps(int in, int out) {
    std::vector<CubicTaps> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double pos = (o + 0.5) * scale - 0.5;
        const int i0 = static_cast<int>(std::floor(pos));
        const double t = pos - i0;
        taps[o].wsum = 0.0;
        for (int k = 0; k < 4; ++k) {
            taps[o].idx[k] = std::clamp(i0 - 1 + k, 0, in - 1);
            taps[o].w[k] = cubic_w(t + 1.0 - k);
            taps[o].wsum += taps[o].w[k];
        }
    }
    return taps;
}

std::vector<int> nearest_taps(int in, int out) {
    std::vector<int> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        taps[o] = std::clamp(static_cast<int>(std::floor((o + 0.5) * scale)), 0, in - 1);
    }
    return taps;
}

// Separable bicubic on a (H,W) plane.
void resize_bicubic_plane(const double* src, int H, int W, double* dst, int H2, int W2) {
    const auto ty = cubic_taps(H, H2);
    const auto tx = cubic_taps(W, W2);
    std::vector<double> rows(static_cast<std::size_t>(H) * W2);
    for (int r = 0; r < H; ++r) {
        const double* s = src + std::int64_t(r) * W;
        double* d = rows.data() + std::int64_t(r) * W2;
        for (int c = 0; c < W2; ++c) {
            const auto& t = tx[c];
            d[c] = (t.w[0] * s[t.idx[0]] + t.w[1] * s[t.idx[1]] + t.w[2] * s[t.idx[2]] +
                    t.w[3] * s[t.idx[3]]) /
                   t.wsum;
        }
    }
    for (int r = 0; r < H2; ++r) {
        const auto& t = ty[r];
        double* d = dst + std::int64_t(r) * W2;
        for (int c = 0; c < W2; ++c) {
            d[c] = (t.w[0] * rows[std::int64_t(t.idx[0]) * W2 + c] + t.w[1] * rows[std::int64_t(t.idx[1]) * W2 + c] +
                    t.w[2] * rows[std::int64_t(t.idx[2]) * W2 + c] + t.w[3] * rows[std::int64_t(t.idx[3]) * W2 + c]) /
                   t.wsum;
        }
    }
}

}  // namespace

namespace detail {

Tensor resize_bicubic(const Tensor& t, int H2, int W2) {
    if (t.rank() == 2) {
        if (t.dim(0) == H2 && t.dim(1) == W2) return t;
        Tensor out({H2, W2});
        resize_bicubic_plane(t.data(), t.dim(0), t.dim(1), out.data(), H2, W2);
        return out;
    }
    if (t.dim(1) == H2 && t.dim(2) == W2) return t;
    Tensor out({t.dim(0), H2, W2});
    for (int c = 0; c < t.dim(0); ++c) {
        resize_bicubic_plane(t.data() + std::int64_t(c) * t.dim(1) * t.dim(2), t.dim(1), t.dim(2),
                             out.data() + std::int64_t(c) * H2 * W2, H2, W2);
    }
    return out;
}

Tensor resize_nearest(const Tensor& t, int H2, int W2) {
    if (t.dim(0) == H2 && t.dim(1) == W2) return t;
    const auto ty = nearest_taps(t.dim(0), H2);
    const auto tx = nearest_taps(t.dim(1), W2);
    Tensor out({H2, W2});
    for (int r = 0; r < H2; ++r) {
        for (int c = 0; c < W2; ++c) out.at(r, c) = t.at(ty[r], tx[c]);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------
namespace {

Tensor image_to_tensor(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_64FC3);
    Tensor t({3, f.rows, f.cols});
    for (int r = 0; r < f.rows; ++r) {
        const auto* row = f.ptr<cv::Vec3d>(r);
        for (int c = 0; c < f.cols; ++c) {
            for (int ch = 0; ch < 3; ++ch) t.at(ch, r, c) = row[c][ch];
        }
    }
    return t;
}

Tensor gray_to_binary(const cv::Mat& gray) {
    Tensor t({gray.rows, gray.cols});
    for (int r = 0; r < gray.rows; ++r) {
        const auto* row = gray.ptr<std::uint8_t>(r);
        for (int c = 0; c < gray.cols; ++c) t.at(r, c) = row[c] > 127 ? 1.0 : 0.0;
    }
    return t;
}

/// FOV from image luminance: threshold > 25/255, keep the largest connected
/// component, then close holes.
Tensor derive_fov(const Tensor& image) {
    const int H = image.dim(1), W = image.dim(2);
    cv::Mat bin(H, W, CV_8U);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double lum = (image.at(0, r, c) + image.at(1, r, c) + image.at(2, r, c)) / 3.0;
            bin.at<std::uint8_t>(r, c) = lum > 25.0 ? 255 : 0;
        }
    }
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(bin, labels, stats, centroids, 8);
    int best = 0, best_area = 0;
    for (int i = 1; i < n; ++i) {
        const int area = stats.at<int>(i, cv::CC_STAT_AREA);
        if (area > best_area) {
            best_area = area;
            best = i;
        }
    }
    cv::Mat cc = labels == best;
    if (best == 0) cc.setTo(0);
    const int ksize = std::max(3, ((std::min(H, W) / 20) | 1));
    cv::Mat kernel = cv::getStructuringElement(cv::MORPH_ELLIPSE, {ksize, ksize});
    cv::morphologyEx(cc, cc, cv::MORPH_CLOSE, kernel);
    Tensor fov({H, W});
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) fov.at(r, c) = cc.at<std::uint8_t>(r, c) ? 1.0 : 0.0;
    }
    return fov;
}

std::map<std::string, fsys::path> stem_index(const fsys::path& dir) {
    std::map<std::string, fsys::path> out;
    if (!fsys::is_directory(dir)) return out;
    for (const auto& e : fsys::directory_iterator(dir)) {
        if (e.is_regular_file()) out[e.path().stem().string()] = e.path();
    }
    return out;
}

cv::Mat imread_checked(const fsys::path& p, int flags) {
    cv::Mat m = cv::imread(p.string(), flags);
    if (m.empty()) {
        throw DataError("cannot decode image '" + p.string() +
                        "' (GIF is not supported; convert masks to PNG)");
    }
    return m;
}

}  // namespace

std::vector<FundusSample> load_dataset(const fsys::path& root, DatasetKind kind) {
    if (!fsys::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
    const auto images = stem_index(root / "images");
    if (images.empty()) {
        std::cerr << "[vesselgan] warning: no images found under " << (root / "images") << "\n";
        return {};
    }
    if (!fsys::is_directory(root / "masks")) {
        throw MissingPairError("masks directory missing under " + root.string());
    }
    const auto masks = stem_index(root / "masks");
    const auto fovs = stem_index(root / "fov");

    std::vector<FundusSample> out;
    for (const auto& [stem, img_path] : images) {
        auto mit = masks.find(stem);
        if (mit == masks.end()) {
            throw MissingPairError("image '" + stem + "' has no mask under " + (root / "masks").string());
        }
        FundusSample s;
        s.id = stem;
        s.kind = kind;
        s.image = image_to_tensor(imread_checked(img_path, cv::IMREAD_COLOR));
        s.mask = gray_to_binary(imread_checked(mit->second, cv::IMREAD_GRAYSCALE));
        s.orig_h = s.image.dim(1);
        s.orig_w = s.image.dim(2);
        if (s.mask.dim(0) != s.orig_h || s.mask.dim(1) != s.orig_w) {
            throw ShapeMismatchError("sample '" + stem + "': image " + s.image.shape_str() +
                                     " vs mask " + s.mask.shape_str());
        }
        auto fit = fovs.find(stem);
        if (fit != fovs.end()) {
            s.fov = gray_to_binary(imread_checked(fit->second, cv::IMREAD_GRAYSCALE));
            if (s.fov.dim(0) != s.orig_h || s.fov.dim(1) != s.orig_w) {
                throw ShapeMismatchError("sample '" + stem + "': image " + s.image.shape_str() +
                                         " vs fov " + s.fov.shape_str());
            }
        } else {
            s.fov = derive_fov(s.image);
        }
        // Keep the invariant mask <= fov; gold pixels outside the FOV are
        // dropped (metrics only ever count FOV pixels).
        std::int64_t dropped = 0;
        for (std::int64_t i = 0; i < s.mask.numel(); ++i) {
            if (s.mask[i] > s.fov[i]) {
                s.mask[i] = 0.0;
                ++dropped;
            }
        }
        if (dropped > 0) {
            std::cerr << "[vesselgan] warning: sample '" << stem << "': " << dropped
                      << " mask pixels outside FOV were dropped\n";
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocess / restore
// ---------------------------------------------------------------------------
namespace {

void check_kind_size(const FundusSample& s, DatasetKind kind) {
    const int H = s.image.dim(1), W = s.image.dim(2);
    auto dims_are = [&](int a, int b) { return (H == a && W == b) || (H == b && W == a); };
    switch (kind) {
        case DatasetKind::DRIVE:
            if (!dims_are(584, 565)) {
                throw ShapeMismatchError("DRIVE sample '" + s.id + "' has size " + std::to_string(H) +
                                         "x" + std::to_string(W) + ", expected 584x565");
            }
            break;
        case DatasetKind::STARE:
            if (!dims_are(700, 605)) {
                throw ShapeMismatchError("STARE sample '" + s.id + "' has size " + std::to_string(H) +
                                         "x" + std::to_string(W) + ", expected 700x605");
            }
            break;
        case DatasetKind::SYNTHETIC:
            if (H != W || H < 64) {
                throw ShapeMismatchError("synthetic sample '" + s.id +
                                         "' must be square with side >= 64, got " + std::to_string(H) +
                                         "x" + std::to_string(W));
            }
            break;
    }
}

Tensor center_crop(const Tensor& t, int side) {
    const bool chan = t.rank() == 3;
    const int H = t.dim(chan ? 1 : 0), W = t.dim(chan ? 2 : 1);
    const int r0 = (H - side) / 2, c0 = (W - side) / 2;
    Tensor out(chan ? std::vector<int>{t.dim(0), side, side} : std::vector<int>{side, side});
    const int C = chan ? t.dim(0) : 1;
    for (int c = 0; c < C; ++c) {
        const double* src = t.data() + std::int64_t(c) * H * W;
        double* dst = out.data() + std::int64_t(c) * side * side;
        for (int r = 0; r < side; ++r) {
            std::copy_n(src + std::int64_t(r + r0) * W + c0, side, dst + std::int64_t(r) * side);
        }
    }
    return out;
}

void rebinarize(Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = t[i] > 0.5 ? 1.0 : 0.0;
}

Tensor compute_zscore(const Tensor& image, const Tensor& fov) {
    const int S = image.dim(1);
    Tensor z({3, S, S});
    std::int64_t n_fov = 0;
    for (std::int64_t i = 0; i < fov.numel(); ++i) n_fov += fov[i] > 0.5 ? 1 : 0;
    for (int c = 0; c < 3; ++c) {
        const double* p = image.data() + std::int64_t(c) * S * S;
        double* zp = z.data() + std::int64_t(c) * S * S;
        if (n_fov == 0) continue;
        double mean = 0.0;
        for (std::int64_t i = 0; i < fov.numel(); ++i) {
            if (fov[i] > 0.5) mean += p[i];
        }
        mean /= static_cast<double>(n_fov);
        double var = 0.0;
        for (std::int64_t i = 0; i < fov.numel(); ++i) {
            if (fov[i] > 0.5) {
                const double d = p[i] - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(n_fov);
        if (var < 1e-24) continue;  // degenerate constant channel stays zero
        const double istd = 1.0 / std::sqrt(var);
        for (std::int64_t i = 0; i < fov.numel(); ++i) zp[i] = (p[i] - mean) * istd;
    }
    return z;
}

}  // namespace

PreprocessedSample preprocess(const FundusSample& sample, DatasetKind kind, int target_size) {
    sample.validate();
    check_kind_size(sample, kind);
    if (target_size < 8) throw ConfigError("target_size too small");

    Tensor img = sample.image;
    Tensor mask = sample.mask;
    Tensor fov = sample.fov;
    if (kind == DatasetKind::DRIVE) {
        const int side = std::min(sample.orig_h, sample.orig_w);
        img = center_crop(img, side);
        mask = center_crop(mask, side);
        fov = center_crop(fov, side);
    }
    PreprocessedSample out;
    out.id = sample.id;
    out.orig_h = sample.orig_h;
    out.orig_w = sample.orig_w;
    out.kind = kind;
    out.image = detail::resize_bicubic(img, target_size, target_size);
    out.mask = detail::resize_nearest(mask, target_size, target_size);
    out.fov = detail::resize_nearest(fov, target_size, target_size);
    rebinarize(out.mask);
    rebinarize(out.fov);
    // [0,255] -> [-1,1]; bicubic ringing is clamped back into range.
    for (std::int64_t i = 0; i < out.image.numel(); ++i) {
        out.image[i] = std::clamp(out.image[i] / 127.5 - 1.0, -1.0, 1.0);
    }
    out.zscore = compute_zscore(out.image, out.fov);
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------
namespace {

Tensor remap_plane(const Tensor& t, int rot90s, bool hflip) {
    const int H = t.dim(0), W = t.dim(1);
    Tensor out = t;
    for (int k = 0; k < rot90s; ++k) {
        // 90 degrees counterclockwise: (r,c) <- (c, H-1-r) of the source.
        const int h = out.dim(0), w = out.dim(1);
        Tensor next({w, h});
        for (int r = 0; r < w; ++r) {
            for (int c = 0; c < h; ++c) next.at(r, c) = out.at(c, w - 1 - r);
        }
        out = std::move(next);
    }
    if (hflip) {
        const int h = out.dim(0), w = out.dim(1);
        Tensor next({h, w});
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) next.at(r, c) = out.at(r, w - 1 - c);
        }
        out = std::move(next);
    }
    return out;
}

Tensor remap_tensor(const Tensor& t, int rot90s, bool hflip) {
    if (t.rank() == 2) return remap_plane(t, rot90s, hflip);
    Tensor out;
    std::vector<Tensor> planes;
    for (int c = 0; c < t.dim(0); ++c) {
        Tensor plane({t.dim(1), t.dim(2)});
        std::copy_n(t.data() + std::int64_t(c) * t.dim(1) * t.dim(2), plane.numel(), plane.data());
        planes.push_back(remap_plane(plane, rot90s, hflip));
    }
    out = Tensor({t.dim(0), planes[0].dim(0), planes[0].dim(1)});
    for (int c = 0; c < t.dim(0); ++c) {
        std::copy_n(planes[c].data(), planes[c].numel(), out.data() + std::int64_t(c) * planes[c].numel());
    }
    return out;
}

// Inverse-mapped rotation about the image center. Bilinear for real-valued
// planes, nearest for binary ones; out-of-support pixels take `fill`.
Tensor rotate_plane(const Tensor& t, double deg, bool nearest, double fill) {
    const int H = t.dim(0), W = t.dim(1);
    const double rad = deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    Tensor out({H, W});
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            // Rotate destination back into source coordinates (counterclockwise
            // rotation of the image content).
            const double dy = r - cy, dx = c - cx;
            const double sy = cy + sn * dx + cs * dy;
            const double sx = cx + cs * dx - sn * dy;
            if (sy < 0.0 || sy > H - 1 || sx < 0.0 || sx > W - 1) {
                out.at(r, c) = fill;
                continue;
            }
            if (nearest) {
                out.at(r, c) = t.at(static_cast<int>(std::lround(sy)), static_cast<int>(std::lround(sx)));
            } else {
                const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                const int y1 = std::min(H - 1, y0 + 1), x1 = std::min(W - 1, x0 + 1);
                const double wy = sy - y0, wx = sx - x0;
                out.at(r, c) = t.at(y0, x0) * (1 - wy) * (1 - wx) + t.at(y0, x1) * (1 - wy) * wx +
                               t.at(y1, x0) * wy * (1 - wx) + t.at(y1, x1) * wy * wx;
            }
        }
    }
    return out;
}

Tensor rotate_tensor(const Tensor& t, double deg, bool nearest, const std::vector<double>& fill) {
    if (t.rank() == 2) return rotate_plane(t, deg, nearest, fill[0]);
    Tensor out(t.shape());
    for (int c = 0; c < t.dim(0); ++c) {
        Tensor plane({t.dim(1), t.dim(2)});
        std::copy_n(t.data() + std::int64_t(c) * plane.numel(), plane.numel(), plane.data());
        Tensor rp = rotate_plane(plane, deg, nearest, fill[static_cast<std::size_t>(c) % fill.size()]);
        std::copy_n(rp.data(), rp.numel(), out.data() + std::int64_t(c) * rp.numel());
    }
    return out;
}

PreprocessedSample transform_sample(const PreprocessedSample& s, double deg, bool hflip,
                                    const std::string& suffix) {
    PreprocessedSample out;
    out.id = s.id + suffix;
    out.orig_h = s.orig_h;
    out.orig_w = s.orig_w;
    out.kind = s.kind;
    const double q = deg / 90.0;
    if (std::abs(q - std::round(q)) < 1e-12) {
        const int rot90s = static_cast<int>(std::round(q)) % 4;
        out.image = remap_tensor(s.image, rot90s, hflip);
        out.zscore = remap_tensor(s.zscore, rot90s, hflip);
        out.mask = remap_tensor(s.mask, rot90s, hflip);
        out.fov = remap_tensor(s.fov, rot90s, hflip);
        return out;
    }
    out.image = rotate_tensor(s.image, deg, false, {-1.0});
    out.mask = rotate_tensor(s.mask, deg, true, {0.0});
    out.fov = rotate_tensor(s.fov, deg, true, {0.0});
    if (hflip) {
        out.image = remap_tensor(out.image, 0, true);
        out.mask = remap_tensor(out.mask, 0, true);
        out.fov = remap_tensor(out.fov, 0, true);
    }
    // Interpolation changed the FOV pixel set, so the z-score statistics are
    // recomputed rather than warped.
    out.zscore = compute_zscore(out.image, out.fov);
    return out;
}

std::string angle_suffix(double deg) {
    if (deg == std::floor(deg)) return "_rot" + std::to_string(static_cast<int>(deg));
    std::string s = std::to_string(deg);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    std::replace(s.begin(), s.end(), '.', 'p');
    return "_rot" + s;
}

}  // namespace

std::vector<PreprocessedSample> augment(const PreprocessedSample& sample, const AugmentSpec& spec,
                                        std::uint64_t /*seed*/) {
    for (double deg : spec.rotations_deg) {
        if (deg < 0.0 || deg >= 360.0) {
            throw ConfigError("rotation angle must be in [0,360), got " + std::to_string(deg));
        }
    }
    std::vector<PreprocessedSample> out;
    out.push_back(sample);
    for (double deg : spec.rotations_deg) {
        if (deg != 0.0) out.push_back(transform_sample(sample, deg, false, angle_suffix(deg)));
    }
    if (spec.hflip) {
        out.push_back(transform_sample(sample, 0.0, true, "_hf"));
        for (double deg : spec.rotations_deg) {
            if (deg != 0.0) out.push_back(transform_sample(sample, deg, true, angle_suffix(deg) + "_hf"));
        }
    }
    return out;
}

DatasetSplit split_train_val(std::vector<PreprocessedSample> samples, std::uint64_t seed) {
    const std::size_t n = samples.size();
    if (n < 2) throw InsufficientDataError("need at least 2 samples to split, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng(seed, "split");
    rng.shuffle(order);
    // 19:1 rounded, validation never empty.
    const std::size_t n_val = std::max<std::size_t>(1, (n + 10) / 20);
    DatasetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_val ? split.val : split.train;
        dst.push_back(std::move(samples[order[i]]));
    }
    auto by_id = [](const PreprocessedSample& a, const PreprocessedSample& b) { return a.id < b.id; };
    std::sort(split.train.begin(), split.train.end(), by_id);
    std::sort(split.val.begin(), split.val.end(), by_id);
    return split;
}

Tensor restore_original(const Tensor& pred, const FundusSample& sample) {
    if (pred.rank() != 2 || pred.dim(0) != pred.dim(1)) {
        throw ShapeMismatchError("prediction must be square (S,S), got " + pred.shape_str());
    }
    const int H = sample.orig_h, W = sample.orig_w;
    Tensor out({H, W});
    if (sample.kind == DatasetKind::DRIVE) {
        const int side = std::min(H, W);
        Tensor up = detail::resize_bicubic(pred, side, side);
        const int r0 = (H - side) / 2, c0 = (W - side) / 2;
        for (int r = 0; r < side; ++r) {
            for (int c = 0; c < side; ++c) out.at(r + r0, c + c0) = up.at(r, c);
        }
    } else {
        out = detail::resize_bicubic(pred, H, W);
    }
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = std::clamp(out[i], 0.0, 1.0) * sample.fov[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessed-sample container IO
// ---------------------------------------------------------------------------
void save_preprocessed(const PreprocessedSample& sample, const fsys::path& path) {
    nlohmann::json meta;
    meta["kind"] = "preprocessed_sample";
    meta["id"] = sample.id;
    meta["orig_h"] = sample.orig_h;
    meta["orig_w"] = sample.orig_w;
    meta["dataset_kind"] = kind_name(sample.kind);
    save_container(path, kArraysMagic, std::move(meta),
                   {{"image", &sample.image},
                    {"zscore", &sample.zscore},
                    {"mask", &sample.mask},
                    {"fov", &sample.fov}});
}

PreprocessedSample load_preprocessed(const fsys::path& path) {
    Container c = load_container(path, kArraysMagic);
    PreprocessedSample s;
    s.id = c.meta.at("id").get<std::string>();
    s.orig_h = c.meta.at("orig_h").get<int>();
    s.orig_w = c.meta.at("orig_w").get<int>();
    s.kind = kind_from_name(c.meta.at("dataset_kind").get<std::string>());
    auto take = [&](const char* name) {
        const Tensor* t = c.find(name);
        if (!t) throw WeightsFormatError("preprocessed sample missing array '" + std::string(name) + "'");
        return *t;
    };
    s.image = take("image");
    s.zscore = take("zscore");
    s.mask = take("mask");
    s.fov = take("fov");
    return s;
}

}  // namespace vgan
