#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vesselgan/container.hpp"
#include "vesselgan/data.hpp"

using namespace vgan;
namespace fsys = std::filesystem;

namespace {

const char* cli() { return VGAN_CLI_PATH; }

int run_cmd(const std::string& args) {
    const std::string cmd = std::string(cli()) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fsys::path fresh_dir(const std::string& name) {
    auto p = fsys::temp_directory_path() / ("vesselgan_cli_" + name);
    fsys::remove_all(p);
    fsys::create_directories(p);
    return p;
}

std::string slurp(const fsys::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("cli: --help exits 0 for every command") {
    CHECK(run_cmd("--help") == 0);
    for (const char* sub : {"preprocess", "train", "generate", "segment", "evaluate", "synthdata"}) {
        CHECK(run_cmd(std::string(sub) + " --help") == 0);
    }
}

TEST_CASE("cli: synthdata round-trips through load_dataset and reruns bit-identically") {
    const auto dir = fresh_dir("synth");
    CHECK(run_cmd("synthdata --n 10 --size 64 --seed 7 --out " + (dir / "ds").string()) == 0);
    auto ds = load_dataset(dir / "ds", DatasetKind::SYNTHETIC);
    CHECK(ds.size() == 10);
    CHECK(fsys::exists(dir / "ds" / "manifest.json"));
    const auto manifest = nlohmann::json::parse(slurp(dir / "ds" / "manifest.json"));
    CHECK(manifest.at("seed") == 7);

    CHECK(run_cmd("synthdata --n 10 --size 64 --seed 7 --out " + (dir / "ds2").string()) == 0);
    for (const auto& e : fsys::recursive_directory_iterator(dir / "ds")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fsys::relative(e.path(), dir / "ds");
        CHECK(slurp(e.path()) == slurp(dir / "ds2" / rel));
    }
}

TEST_CASE("cli: preprocess is byte-identical across reruns; missing masks exit 2") {
    const auto dir = fresh_dir("pre");
    REQUIRE(run_cmd("synthdata --n 4 --size 64 --seed 3 --out " + (dir / "ds").string()) == 0);
    CHECK(run_cmd("preprocess --root " + (dir / "ds").string() + " --kind synthetic --input-size 64 --out " +
                  (dir / "p1").string()) == 0);
    CHECK(run_cmd("preprocess --root " + (dir / "ds").string() + " --kind synthetic --input-size 64 --out " +
                  (dir / "p2").string()) == 0);
    for (const auto& e : fsys::directory_iterator(dir / "p1")) {
        CHECK(slurp(e.path()) == slurp(dir / "p2" / e.path().filename()));
    }

    fsys::remove_all(dir / "ds" / "masks");
    CHECK(run_cmd("preprocess --root " + (dir / "ds").string() + " --kind synthetic --out " +
                  (dir / "p3").string()) == 2);
}

TEST_CASE("cli: evaluate with the gold-as-prediction fixture reports dice 1.0") {
    const auto dir = fresh_dir("goldeval");
    REQUIRE(run_cmd("synthdata --n 4 --size 64 --seed 9 --out " + (dir / "ds").string()) == 0);
    CHECK(run_cmd("evaluate --root " + (dir / "ds").string() +
                  " --kind synthetic --gold-as-prediction --out " + (dir / "ev").string()) == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "ev" / "report.json"));
    CHECK(report.at("aggregate").at("dice") == 1.0);
    CHECK(report.at("aggregate").at("auc_roc") == 1.0);
    CHECK(report.at("aggregate").at("auc_pr") == 1.0);
}

TEST_CASE("cli: end-to-end pipeline: synthdata -> train -> evaluate -> generate -> segment") {
    const auto dir = fresh_dir("e2e");
    REQUIRE(run_cmd("synthdata --n 12 --size 64 --seed 5 --out " + (dir / "ds").string()) == 0);

    // Tiny segmentation training.
    CHECK(run_cmd("train --root " + (dir / "ds").string() +
                  " --kind synthetic --mode segmentation --input-size 64 --g-base-filters 8"
                  " --d-base-filters 8 --batch-size 4 --epochs 4 --lr 1e-3 --seed 5 --out " +
                  (dir / "run").string()) == 0);
    const auto summary = nlohmann::json::parse(slurp(dir / "run" / "train_summary.json"));
    const std::string best = summary.at("best_checkpoint").get<std::string>();
    CHECK(fsys::exists(best));
    CHECK(fsys::exists(dir / "run" / "train_log.jsonl"));

    // Trained beats the untrained epoch-0 checkpoint on aggregate dice.
    CHECK(run_cmd("evaluate --checkpoint " + best + " --root " + (dir / "ds").string() +
                  " --kind synthetic --out " + (dir / "ev_best").string()) == 0);
    CHECK(run_cmd("evaluate --checkpoint " + (dir / "run" / "ckpt_epoch_0000.vgc").string() +
                  " --root " + (dir / "ds").string() + " --kind synthetic --out " +
                  (dir / "ev_init").string()) == 0);
    const auto ev_best = nlohmann::json::parse(slurp(dir / "ev_best" / "report.json"));
    const auto ev_init = nlohmann::json::parse(slurp(dir / "ev_init" / "report.json"));
    CHECK(ev_best.at("aggregate").at("dice").get<double>() >
          ev_init.at("aggregate").at("dice").get<double>());

    // Segment writes one probability map per image.
    CHECK(run_cmd("segment --checkpoint " + best + " --root " + (dir / "ds").string() +
                  " --kind synthetic --out " + (dir / "seg").string()) == 0);
    int prob_maps = 0;
    for (const auto& e : fsys::directory_iterator(dir / "seg")) {
        prob_maps += e.path().extension() == ".png" ? 1 : 0;
    }
    CHECK(prob_maps == 12);

    // Synthesis training + generation of paired (mask, image) files.
    CHECK(run_cmd("train --root " + (dir / "ds").string() +
                  " --kind synthetic --mode synthesis_l1 --input-size 64 --g-base-filters 8"
                  " --d-base-filters 8 --batch-size 4 --epochs 2 --lr 1e-3 --seed 5 --out " +
                  (dir / "syn").string()) == 0);
    const auto syn_summary = nlohmann::json::parse(slurp(dir / "syn" / "train_summary.json"));
    const std::string syn_best = syn_summary.at("best_checkpoint").get<std::string>();
    CHECK(run_cmd("generate --checkpoint " + syn_best + " --masks " + (dir / "ds" / "masks").string() +
                  " --n 2 --sigma 1.0 --seed 11 --out " + (dir / "gen").string()) == 0);
    int gen_images = 0;
    for (const auto& e : fsys::directory_iterator(dir / "gen" / "images")) {
        gen_images += e.path().extension() == ".png" ? 1 : 0;
    }
    CHECK(gen_images == 24);
    // Generated pairs land in the standard dataset layout for retraining.
    CHECK(fsys::exists(dir / "gen" / "masks"));
    CHECK(fsys::exists(dir / "gen" / "manifest.json"));

    // Role mismatch: a segmentation checkpoint cannot drive generate (exit 3).
    CHECK(run_cmd("generate --checkpoint " + best + " --masks " + (dir / "ds" / "masks").string() +
                  " --out " + (dir / "gen2").string()) == 3);
}

TEST_CASE("cli: config file supplies defaults, flags override") {
    const auto dir = fresh_dir("cfg");
    std::ofstream cfg(dir / "run.toml");
    cfg << "[synthdata]\n";
    cfg << "n = 3\n";
    cfg << "size = 64\n";
    cfg << "seed = 13\n";
    cfg << "out = \"" << (dir / "from_file").string() << "\"\n";
    cfg.close();

    CHECK(run_cmd("synthdata --config " + (dir / "run.toml").string()) == 0);
    CHECK(load_dataset(dir / "from_file", DatasetKind::SYNTHETIC).size() == 3);

    // Flag beats the file value.
    CHECK(run_cmd("synthdata --config " + (dir / "run.toml").string() + " --n 5 --out " +
                  (dir / "flag_wins").string()) == 0);
    CHECK(load_dataset(dir / "flag_wins", DatasetKind::SYNTHETIC).size() == 5);
}
