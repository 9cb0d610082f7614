#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vesselgan/data.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/rng.hpp"

namespace vgan {

namespace {

struct BranchSeed {
    double x, y, dir, width;
    int depth;
};

void stamp_disk(Tensor& mask, const Tensor& fov, double cx, double cy, double radius) {
    const int S = mask.dim(0);
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int r1 = std::min(S - 1, static_cast<int>(std::ceil(cy + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int c1 = std::min(S - 1, static_cast<int>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double dy = r - cy, dx = c - cx;
            if (dy * dy + dx * dx <= r2 && fov.at(r, c) > 0.5) mask.at(r, c) = 1.0;
        }
    }
}

// Depth-first growth with an explicit stack keeps the draw order (and so the
// dataset) deterministic.
void grow_tree(Tensor& mask, const Tensor& fov, RngStream& rng, double root_x, double root_y,
               double dir0, double width0, double fov_radius, double cx, double cy) {
    std::vector<BranchSeed> stack{{root_x, root_y, dir0, width0, 0}};
    while (!stack.empty()) {
        BranchSeed b = stack.back();
        stack.pop_back();
        double x = b.x, y = b.y, dir = b.dir, width = b.width;
        const double curl = rng.normal() * 0.02;
        const double decay = 0.988 + 0.008 * rng.uniform();
        int steps = 0;
        while (width >= 0.6 && steps < 4000) {
            stamp_disk(mask, fov, x, y, width * 0.5);
            x += std::cos(dir);
            y += std::sin(dir);
            dir += rng.normal() * 0.10 + curl;
            width *= decay;
            ++steps;
            const double d = std::hypot(x - cx, y - cy);
            if (d > fov_radius - 1.0) break;
            if (b.depth < 3 && rng.uniform() < 0.030) {
                const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
                stack.push_back({x, y, dir + side * (0.45 + 0.5 * rng.uniform()), width * 0.72, b.depth + 1});
            }
        }
    }
}

// 5-tap separable blur used to soften vessel edges before shading.
Tensor blur5(const Tensor& t) {
    static const double k[5] = {0.0625, 0.25, 0.375, 0.25, 0.0625};
    const int H = t.dim(0), W = t.dim(1);
    Tensor tmp({H, W}), out({H, W});
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int j = -2; j <= 2; ++j) acc += k[j + 2] * t.at(r, std::clamp(c + j, 0, W - 1));
            tmp.at(r, c) = acc;
        }
    }
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int j = -2; j <= 2; ++j) acc += k[j + 2] * tmp.at(std::clamp(r + j, 0, H - 1), c);
            out.at(r, c) = acc;
        }
    }
    return out;
}

}  // namespace

std::vector<FundusSample> make_synthetic_dataset(int n, int size, std::uint64_t seed) {
    if (n < 1) throw ConfigError("synthetic dataset needs n >= 1");
    if (size < 64) throw ConfigError("synthetic dataset needs size >= 64");

    std::vector<FundusSample> out;
    out.reserve(static_cast<std::size_t>(n));
    const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    const double R = 0.47 * size;

    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, "synth" + std::to_string(i));
        FundusSample s;
        s.id = "synth_" + std::string(4 - std::min<std::size_t>(4, std::to_string(i).size()), '0') +
               std::to_string(i);
        s.kind = DatasetKind::SYNTHETIC;
        s.orig_h = size;
        s.orig_w = size;

        s.fov = Tensor({size, size});
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const double d = std::hypot(r - cy, c - cx);
                s.fov.at(r, c) = d <= R ? 1.0 : 0.0;
            }
        }
        double fov_area = s.fov.sum();

        // Vessel tree: branches radiate from a disc-like root near the rim.
        s.mask = Tensor({size, size});
        const double root_angle = rng.uniform() * 2.0 * M_PI;
        const double root_x = cx + 0.62 * R * std::cos(root_angle);
        const double root_y = cy + 0.62 * R * std::sin(root_angle);
        const double width0 = size * (0.030 + 0.015 * rng.uniform());
        const double target_fraction = 0.055 + 0.055 * rng.uniform();  // within [0.02, 0.25]

        int branches = 0;
        while (branches < 48) {
            const double spread = root_angle + M_PI + (rng.uniform() - 0.5) * 2.4;
            grow_tree(s.mask, s.fov, rng, root_x, root_y, spread, width0 * (0.8 + 0.4 * rng.uniform()),
                      R, cx, cy);
            ++branches;
            if (branches >= 4 && s.mask.sum() / fov_area >= target_fraction) break;
        }

        // Pseudo-fundus rendering: warm background with radial falloff,
        // low-frequency illumination blobs, darkened vessels, mild noise.
        const double base[3] = {180.0 + 15.0 * rng.normal(), 95.0 + 10.0 * rng.normal(),
                                45.0 + 6.0 * rng.normal()};
        const double dark[3] = {0.52, 0.66, 0.55};
        struct Blob {
            double x, y, sigma2, amp;
        };
        std::vector<Blob> blobs;
        const int nb = 3 + rng.uniform_int(0, 2);
        for (int bi = 0; bi < nb; ++bi) {
            const double a = rng.uniform() * 2.0 * M_PI;
            const double rr = rng.uniform() * 0.8 * R;
            const double sg = size * (0.10 + 0.15 * rng.uniform());
            blobs.push_back({cx + rr * std::cos(a), cy + rr * std::sin(a), sg * sg, 14.0 * rng.normal()});
        }
        const Tensor vessel = blur5(s.mask);
        s.image = Tensor({3, size, size});
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                if (s.fov.at(r, c) < 0.5) continue;  // camera border stays black
                const double d = std::hypot(r - cy, c - cx);
                double illum = 1.0 - 0.30 * (d / R) * (d / R);
                for (const Blob& b : blobs) {
                    const double dy = r - b.y, dx = c - b.x;
                    illum += b.amp / 255.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma2));
                }
                const double v = std::clamp(vessel.at(r, c), 0.0, 1.0);
                const double noise = rng.normal() * 2.5;
                for (int ch = 0; ch < 3; ++ch) {
                    const double val = base[ch] * illum * (1.0 - dark[ch] * v) + noise;
                    s.image.at(ch, r, c) = std::clamp(val, 0.0, 255.0);
                }
            }
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

void export_dataset(const std::vector<FundusSample>& samples, const std::filesystem::path& out,
                    const nlohmann::json& manifest_extra) {
    namespace fsys = std::filesystem;
    fsys::create_directories(out / "images");
    fsys::create_directories(out / "masks");
    fsys::create_directories(out / "fov");

    nlohmann::json manifest = manifest_extra.is_null() ? nlohmann::json::object() : manifest_extra;
    manifest["count"] = samples.size();
    auto ids = nlohmann::json::array();

    for (const FundusSample& s : samples) {
        const int H = s.image.dim(1), W = s.image.dim(2);
        cv::Mat img(H, W, CV_8UC3), mask(H, W, CV_8U), fov(H, W, CV_8U);
        for (int r = 0; r < H; ++r) {
            auto* row = img.ptr<cv::Vec3b>(r);
            for (int c = 0; c < W; ++c) {
                // RGB tensor -> BGR image
                row[c][0] = static_cast<std::uint8_t>(std::lround(s.image.at(2, r, c)));
                row[c][1] = static_cast<std::uint8_t>(std::lround(s.image.at(1, r, c)));
                row[c][2] = static_cast<std::uint8_t>(std::lround(s.image.at(0, r, c)));
                mask.at<std::uint8_t>(r, c) = s.mask.at(r, c) > 0.5 ? 255 : 0;
                fov.at<std::uint8_t>(r, c) = s.fov.at(r, c) > 0.5 ? 255 : 0;
            }
        }
        cv::imwrite((out / "images" / (s.id + ".png")).string(), img);
        cv::imwrite((out / "masks" / (s.id + ".png")).string(), mask);
        cv::imwrite((out / "fov" / (s.id + ".png")).string(), fov);
        ids.push_back(s.id);
    }
    manifest["ids"] = ids;
    std::ofstream f(out / "manifest.json");
    f << manifest.dump(2) << "\n";
}

}  // namespace vgan
