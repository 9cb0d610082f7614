// vesselgan CLI: preprocess datasets, train the GAN (synthesis / style /
// segmentation), generate image-mask pairs, segment fundus images, evaluate
// against gold masks, and produce synthetic desk-scale datasets.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vesselgan/container.hpp"
#include "vesselgan/data.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/evaluator.hpp"
#include "vesselgan/features.hpp"
#include "vesselgan/losses.hpp"
#include "vesselgan/networks.hpp"
#include "vesselgan/rng.hpp"
#include "vesselgan/trainer.hpp"

namespace fsys = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    std::string out = "out";
    int input_size = 512;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->fallthrough();  // lets --config (a parent option) follow the subcommand
    cmd->add_option("--seed", o.seed, "Master seed; all randomness derives from it")->capture_default_str();
    cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
    cmd->add_option("--input-size", o.input_size, "Network/preprocess resolution (power of two >= 64)")
        ->capture_default_str();
}

cv::Mat tensor_to_bgr8(const vgan::Tensor& img_pm1) {
    const int H = img_pm1.dim(1), W = img_pm1.dim(2);
    cv::Mat out(H, W, CV_8UC3);
    for (int r = 0; r < H; ++r) {
        auto* row = out.ptr<cv::Vec3b>(r);
        for (int c = 0; c < W; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (img_pm1.at(2 - ch, r, c) + 1.0) * 127.5;
                row[c][ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

void write_gray_png(const vgan::Tensor& plane01, const fsys::path& path, bool wide = false) {
    const int H = plane01.dim(0), W = plane01.dim(1);
    if (wide) {
        cv::Mat out(H, W, CV_16U);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                out.at<std::uint16_t>(r, c) =
                    static_cast<std::uint16_t>(std::lround(std::clamp(plane01.at(r, c), 0.0, 1.0) * 65535.0));
            }
        }
        cv::imwrite(path.string(), out);
        return;
    }
    cv::Mat out(H, W, CV_8U);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            out.at<std::uint8_t>(r, c) =
                static_cast<std::uint8_t>(std::lround(std::clamp(plane01.at(r, c), 0.0, 1.0) * 255.0));
        }
    }
    cv::imwrite(path.string(), out);
}

std::vector<vgan::PreprocessedSample> load_and_preprocess(const fsys::path& root,
                                                          vgan::DatasetKind kind, int size) {
    std::vector<vgan::PreprocessedSample> out;
    for (const auto& s : vgan::load_dataset(root, kind)) {
        out.push_back(vgan::preprocess(s, kind, size));
    }
    return out;
}

int run_preprocess(const CommonOpts& o, const std::string& root, const std::string& kind_s) {
    const auto kind = vgan::kind_from_name(kind_s);
    fsys::create_directories(o.out);
    json manifest;
    manifest["kind"] = kind_s;
    manifest["input_size"] = o.input_size;
    auto ids = json::array();
    for (const auto& s : vgan::load_dataset(root, kind)) {
        const auto p = vgan::preprocess(s, kind, o.input_size);
        vgan::save_preprocessed(p, fsys::path(o.out) / (p.id + ".vga"));
        ids.push_back(p.id);
    }
    manifest["ids"] = ids;
    std::ofstream(fsys::path(o.out) / "manifest.json") << manifest.dump(2) << "\n";
    std::cout << "preprocessed " << ids.size() << " samples -> " << o.out << "\n";
    return 0;
}

int run_synthdata(const CommonOpts& o, int n, int size) {
    const auto ds = vgan::make_synthetic_dataset(n, size, o.seed);
    vgan::export_dataset(ds, o.out, {{"seed", o.seed}, {"size", size}, {"n", n}});
    std::cout << "wrote " << ds.size() << " synthetic samples -> " << o.out << "\n";
    return 0;
}

struct TrainOpts {
    std::string root;
    std::string kind = "synthetic";
    std::string preprocessed;
    std::string mode = "segmentation";
    std::string style_root;
    std::string extractor = "standin";
    std::string vgg_weights;
    bool augment = false;
    std::vector<double> rotations{0, 90, 180, 270};
    bool hflip = true;
    vgan::TrainConfig cfg;
};

vgan::TrainMode mode_from_name(const std::string& s) {
    if (s == "synthesis_l1") return vgan::TrainMode::synthesis_l1;
    if (s == "synthesis_style") return vgan::TrainMode::synthesis_style;
    if (s == "segmentation") return vgan::TrainMode::segmentation;
    throw vgan::ConfigError("unknown training mode '" + s + "' (synthesis_l1|synthesis_style|segmentation)");
}

int run_train(const CommonOpts& o, TrainOpts& t) {
    t.cfg.mode = mode_from_name(t.mode);
    t.cfg.seed = o.seed;
    t.cfg.input_size = o.input_size;
    t.cfg.validate();

    std::vector<vgan::PreprocessedSample> samples;
    if (!t.preprocessed.empty()) {
        for (const auto& e : fsys::directory_iterator(t.preprocessed)) {
            if (e.path().extension() == ".vga") samples.push_back(vgan::load_preprocessed(e.path()));
        }
        std::sort(samples.begin(), samples.end(),
                  [](const auto& a, const auto& b) { return a.id < b.id; });
    } else if (!t.root.empty()) {
        samples = load_and_preprocess(t.root, vgan::kind_from_name(t.kind), o.input_size);
    } else {
        throw vgan::ConfigError("train needs --root or --preprocessed");
    }
    if (t.augment) {
        vgan::AugmentSpec spec;
        spec.rotations_deg = t.rotations;
        spec.hflip = t.hflip;
        std::vector<vgan::PreprocessedSample> augmented;
        for (const auto& s : samples) {
            for (auto& v : vgan::augment(s, spec, o.seed)) augmented.push_back(std::move(v));
        }
        samples = std::move(augmented);
    }
    vgan::DatasetSplit split = vgan::split_train_val(std::move(samples), o.seed);
    std::cout << "train/val: " << split.train.size() << "/" << split.val.size() << "\n";

    std::optional<vgan::Extractor> extractor;
    std::vector<vgan::Tensor> style_pool;
    if (t.cfg.mode == vgan::TrainMode::synthesis_style) {
        if (t.extractor == "vgg19") {
            extractor = vgan::load_extractor(vgan::ExtractorKind::vgg19, fsys::path(t.vgg_weights));
        } else {
            extractor = vgan::load_extractor(vgan::ExtractorKind::standin);
        }
        if (t.style_root.empty()) throw vgan::ConfigError("synthesis_style needs --style-root");
        for (const auto& s : load_and_preprocess(t.style_root, vgan::kind_from_name(t.kind), o.input_size)) {
            style_pool.push_back(s.image);
        }
        if (style_pool.empty()) throw vgan::ConfigError("style pool is empty");
    }

    const vgan::TrainResult res =
        vgan::train(t.cfg, split, o.out, extractor ? &*extractor : nullptr,
                    style_pool.empty() ? nullptr : &style_pool);

    json summary;
    summary["best_checkpoint"] = res.best_checkpoint.string();
    summary["selected_epoch"] = res.log.selected_epoch;
    summary["steps"] = res.log.steps.size();
    std::ofstream(fsys::path(o.out) / "train_summary.json") << summary.dump(2) << "\n";
    std::cout << "best checkpoint: " << res.best_checkpoint.string() << "\n";
    return 0;
}

int run_generate(const CommonOpts& o, const std::string& ckpt, const std::string& masks_dir,
                 int n_per_mask, double sigma) {
    vgan::LoadedCheckpoint lc = vgan::load_checkpoint(ckpt);
    auto* g = dynamic_cast<vgan::Generator*>(lc.network.get());
    if (!g || g->role() != vgan::Role::synthesis) {
        throw vgan::ModeError("generate requires a synthesis checkpoint");
    }
    const int S = g->spec().input_size;

    std::vector<std::pair<std::string, vgan::Tensor>> masks;
    std::vector<fsys::path> files;
    for (const auto& e : fsys::directory_iterator(masks_dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        cv::Mat m = cv::imread(f.string(), cv::IMREAD_GRAYSCALE);
        if (m.empty()) continue;
        vgan::Tensor t({m.rows, m.cols});
        for (int r = 0; r < m.rows; ++r) {
            for (int c = 0; c < m.cols; ++c) t.at(r, c) = m.at<std::uint8_t>(r, c) > 127 ? 1.0 : 0.0;
        }
        if (m.rows != S || m.cols != S) {
            std::cerr << "[vesselgan] warning: resizing mask " << f.filename() << " to " << S << "x" << S
                      << "\n";
            t = vgan::detail::resize_nearest(t, S, S);
        }
        masks.emplace_back(f.stem().string(), std::move(t));
    }
    if (masks.empty()) throw vgan::DataError("no readable masks under " + masks_dir);

    fsys::create_directories(fsys::path(o.out) / "images");
    fsys::create_directories(fsys::path(o.out) / "masks");
    vgan::RngStream noise(o.seed, "generate");
    std::vector<vgan::Tensor> mask_tensors;
    for (auto& [id, t] : masks) mask_tensors.push_back(t);
    const auto generated = vgan::generate(*g, mask_tensors, n_per_mask, sigma, noise);

    json manifest;
    manifest["sigma"] = sigma;
    manifest["n_per_mask"] = n_per_mask;
    manifest["checkpoint"] = ckpt;
    auto items = json::array();
    for (std::size_t i = 0; i < masks.size(); ++i) {
        write_gray_png(masks[i].second, fsys::path(o.out) / "masks" / (masks[i].first + ".png"));
        for (int k = 0; k < n_per_mask; ++k) {
            const std::string name = masks[i].first + "_v" + std::to_string(k) + ".png";
            cv::imwrite((fsys::path(o.out) / "images" / name).string(), tensor_to_bgr8(generated[i][k]));
            items.push_back({{"mask", masks[i].first + ".png"}, {"image", name}});
        }
    }
    manifest["pairs"] = items;
    std::ofstream(fsys::path(o.out) / "manifest.json") << manifest.dump(2) << "\n";
    std::cout << "generated " << masks.size() * static_cast<std::size_t>(n_per_mask) << " images -> "
              << o.out << "\n";
    return 0;
}

int run_segment(const CommonOpts& o, const std::string& ckpt, const std::string& root,
                const std::string& kind_s) {
    vgan::LoadedCheckpoint lc = vgan::load_checkpoint(ckpt);
    auto* g = dynamic_cast<vgan::Generator*>(lc.network.get());
    if (!g || g->role() != vgan::Role::segmentor) {
        throw vgan::ModeError("segment requires a segmentation checkpoint");
    }
    const auto kind = vgan::kind_from_name(kind_s);
    const int S = g->spec().input_size;
    fsys::create_directories(o.out);
    int count = 0;
    for (const auto& sample : vgan::load_dataset(root, kind)) {
        const auto pre = vgan::preprocess(sample, kind, S);
        vgan::Tensor x({1, 3, S, S});
        std::copy_n(pre.zscore.data(), pre.zscore.numel(), x.data());
        const vgan::Tensor prob = g->forward(x, false);
        vgan::Tensor plane({S, S});
        std::copy_n(prob.data(), plane.numel(), plane.data());
        const vgan::Tensor restored = vgan::restore_original(plane, sample);
        write_gray_png(restored, fsys::path(o.out) / (sample.id + "_prob.png"), /*wide=*/true);
        ++count;
    }
    std::cout << "segmented " << count << " images -> " << o.out << "\n";
    return 0;
}

int run_evaluate(const CommonOpts& o, const std::string& ckpt, const std::string& root,
                 const std::string& kind_s, bool gold_fixture) {
    const auto kind = vgan::kind_from_name(kind_s);
    const auto samples = vgan::load_dataset(root, kind);
    vgan::EvalReport report;
    if (gold_fixture) {
        report = vgan::evaluate_gold_fixture(samples);
    } else {
        if (ckpt.empty()) throw vgan::ConfigError("evaluate needs --checkpoint (or --gold-as-prediction)");
        vgan::LoadedCheckpoint lc = vgan::load_checkpoint(ckpt);
        auto* g = dynamic_cast<vgan::Generator*>(lc.network.get());
        if (!g) throw vgan::ModeError("evaluate requires a segmentation checkpoint");
        report = vgan::evaluate_dataset(*g, samples);
    }
    fsys::create_directories(o.out);
    std::ofstream(fsys::path(o.out) / "report.json") << report.to_json().dump(2) << "\n";
    const std::string table = report.render_table(kind_s);
    std::ofstream(fsys::path(o.out) / "table.txt") << table;
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vesselgan: retinal image synthesis and vessel segmentation GAN"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::ignore);

    CommonOpts pre_o, syn_o, tr_o, gen_o, seg_o, ev_o;

    auto* pre = app.add_subcommand("preprocess", "Load a dataset and write network-ready arrays");
    add_common(pre, pre_o);
    std::string pre_root, pre_kind = "synthetic";
    pre->add_option("--root", pre_root, "Dataset root (images/, masks/, fov/)")->required();
    pre->add_option("--kind", pre_kind, "drive|stare|synthetic")->capture_default_str();

    auto* syn = app.add_subcommand("synthdata", "Generate a synthetic filamentary dataset");
    add_common(syn, syn_o);
    int syn_n = 10, syn_size = 64;
    syn->add_option("--n", syn_n, "Number of samples")->capture_default_str();
    syn->add_option("--size", syn_size, "Square image size (>= 64)")->capture_default_str();

    auto* tr = app.add_subcommand("train", "Train synthesis or segmentation networks");
    TrainOpts topts;
    add_common(tr, tr_o);
    tr->add_option("--root", topts.root, "Dataset root to load and preprocess");
    tr->add_option("--kind", topts.kind, "drive|stare|synthetic")->capture_default_str();
    tr->add_option("--preprocessed", topts.preprocessed, "Directory of .vga files from `preprocess`");
    tr->add_option("--mode", topts.mode, "synthesis_l1|synthesis_style|segmentation")->capture_default_str();
    tr->add_option("--epochs", topts.cfg.epochs)->capture_default_str();
    tr->add_option("--batch-size", topts.cfg.batch_size, "0 = auto (1 at >=256px, else 8)")
        ->capture_default_str();
    tr->add_option("--lr", topts.cfg.lr)->capture_default_str();
    tr->add_option("--adam-beta1", topts.cfg.adam_beta1)->capture_default_str();
    tr->add_option("--adam-beta2", topts.cfg.adam_beta2)->capture_default_str();
    tr->add_option("--adam-eps", topts.cfg.adam_eps)->capture_default_str();
    tr->add_option("--g-updates-per-d", topts.cfg.g_updates_per_d)->capture_default_str();
    tr->add_option("--noise-sigma-train", topts.cfg.noise_sigma_train)->capture_default_str();
    tr->add_option("--noise-sigma-eval", topts.cfg.noise_sigma_eval)->capture_default_str();
    tr->add_option("--early-stop-patience", topts.cfg.early_stop_patience)->capture_default_str();
    tr->add_option("--g-base-filters", topts.cfg.g_base_filters, "0 = default 64")->capture_default_str();
    tr->add_option("--d-base-filters", topts.cfg.d_base_filters, "0 = default 32")->capture_default_str();
    tr->add_option("--lambda-dev", topts.cfg.weights.lambda_dev)->capture_default_str();
    tr->add_option("--lambda-seg", topts.cfg.weights.lambda_seg)->capture_default_str();
    tr->add_option("--omega-cont", topts.cfg.weights.omega_cont)->capture_default_str();
    tr->add_option("--omega-sty", topts.cfg.weights.omega_sty)->capture_default_str();
    tr->add_option("--omega-tv", topts.cfg.weights.omega_tv)->capture_default_str();
    tr->add_flag("--augment", topts.augment, "Apply rotation/flip augmentation before the split");
    tr->add_option("--rotations", topts.rotations, "Rotation angles in degrees")->capture_default_str();
    tr->add_flag("--hflip,!--no-hflip", topts.hflip, "Left-right flip augmentation")->capture_default_str();
    tr->add_option("--style-root", topts.style_root, "Style image pool (synthesis_style mode)");
    tr->add_option("--extractor", topts.extractor, "standin|vgg19")->capture_default_str();
    tr->add_option("--vgg-weights", topts.vgg_weights, "VGG-19 weights container (.vgw)");

    auto* gen = app.add_subcommand("generate", "Synthesize images from vessel masks");
    add_common(gen, gen_o);
    std::string gen_ckpt, gen_masks;
    int gen_n = 3;
    double gen_sigma = 1.0;
    gen->add_option("--checkpoint", gen_ckpt)->required();
    gen->add_option("--masks", gen_masks, "Directory of binary mask images")->required();
    gen->add_option("--n", gen_n, "Images per mask")->capture_default_str();
    gen->add_option("--sigma", gen_sigma, "Evaluation noise stdev")->capture_default_str();

    auto* seg = app.add_subcommand("segment", "Produce vessel probability maps");
    add_common(seg, seg_o);
    std::string seg_ckpt, seg_root, seg_kind = "synthetic";
    seg->add_option("--checkpoint", seg_ckpt)->required();
    seg->add_option("--root", seg_root, "Dataset root")->required();
    seg->add_option("--kind", seg_kind, "drive|stare|synthetic")->capture_default_str();

    auto* ev = app.add_subcommand("evaluate", "Compute Dice / AUC-ROC / AUC-PR inside the FOV");
    add_common(ev, ev_o);
    std::string ev_ckpt, ev_root, ev_kind = "synthetic";
    bool ev_gold = false;
    ev->add_option("--checkpoint", ev_ckpt);
    ev->add_option("--root", ev_root, "Dataset root with gold masks")->required();
    ev->add_option("--kind", ev_kind, "drive|stare|synthetic")->capture_default_str();
    ev->add_flag("--gold-as-prediction", ev_gold, "Sanity fixture: score gold masks against themselves");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return run_preprocess(pre_o, pre_root, pre_kind);
        if (syn->parsed()) return run_synthdata(syn_o, syn_n, syn_size);
        if (tr->parsed()) return run_train(tr_o, topts);
        if (gen->parsed()) return run_generate(gen_o, gen_ckpt, gen_masks, gen_n, gen_sigma);
        if (seg->parsed()) return run_segment(seg_o, seg_ckpt, seg_root, seg_kind);
        if (ev->parsed()) return run_evaluate(ev_o, ev_ckpt, ev_root, ev_kind, ev_gold);
    } catch (const vgan::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const vgan::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const vgan::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const vgan::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
