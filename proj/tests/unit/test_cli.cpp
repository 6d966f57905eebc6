#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "iste/checkpoint.hpp"
#include "iste/data.hpp"
#include "iste/image.hpp"
#include "iste/model.hpp"
#include "iste/train.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace iste;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

// Runs the CLI with stdout and stderr merged.
Run cli(const std::string& args) {
    const std::string cmd = std::string(ISTE_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    while (const std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.output.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

TrainConfig tiny_config() {
    TrainConfig t;
    t.model.encoder = {8, 1, 3};
    t.model.lfi_dim = 8;
    t.model.texture_dim = 16;
    t.model.phase_hidden = 8;
    t.model.fusion_hidden = 16;
    t.model.pixel_decoder_hidden = {16};
    t.model.texture_decoder_hidden = {16};
    t.batch_size = 1;
    t.samples_per_patch = 128;
    t.epochs = 1;
    t.max_steps = 3;
    return t;
}

fs::path write_tiny_config(const test::TempDir& dir) {
    const fs::path p = dir / "cfg.json";
    std::ofstream(p) << train_config_to_json(tiny_config());
    return p;
}

// One shared trained checkpoint keeps the suite fast.
const fs::path& tiny_checkpoint() {
    static test::TempDir dir("cli-ckpt");
    static const fs::path ckpt = [] {
        const Run r = cli("train --config " + q(write_tiny_config(dir)) + " --synth 2 --out " + q(dir / "run"));
        REQUIRE_MESSAGE(r.code == 0, r.output);
        return dir / "run" / "model.iste";
    }();
    return ckpt;
}

fs::path write_lr_png(const test::TempDir& dir, std::size_t side) {
    std::mt19937_64 rng(4);
    const fs::path p = dir / "lr.png";
    save_png(test::random_image(side, side, rng), p);
    return p;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(cli("").code == 2);
    CHECK(cli("bogus").code == 2);
    CHECK(cli("--help").code == 0);
    CHECK(cli("train --help").code == 0);
    CHECK(cli("infer --scale 2").code == 2);
}

TEST_CASE("train: missing corpus names the path") {
    test::TempDir dir("cli");
    const fs::path missing = dir / "no-such-corpus";
    const Run r = cli("train --corpus " + q(missing) + " --out " + q(dir / "run"));
    CHECK(r.code == 2);
    CHECK(r.output.find(missing.string()) != std::string::npos);
}

TEST_CASE("train: config errors exit 2") {
    test::TempDir dir("cli");
    std::ofstream(dir / "junk.json") << "{ not json";
    CHECK(cli("train --config " + q(dir / "junk.json") + " --synth 1 --out " + q(dir / "a")).code == 2);
    std::ofstream(dir / "typo.json") << R"({"learning_rate": 0.1})";
    const Run typo = cli("train --config " + q(dir / "typo.json") + " --synth 1 --out " + q(dir / "b"));
    CHECK(typo.code == 2);
    CHECK(typo.output.find("learning_rate") != std::string::npos);
    CHECK(cli("train --override lr=-1 --synth 1 --out " + q(dir / "c")).code == 2);
    CHECK(cli("train --override novalue --synth 1 --out " + q(dir / "d")).code == 2);
    CHECK(cli("train --config " + q(dir / "missing.json") + " --synth 1 --out " + q(dir / "e")).code == 2);
}

TEST_CASE("train: writes checkpoint, loss csv and the effective config") {
    test::TempDir dir("cli");
    const fs::path cfg = write_tiny_config(dir);
    const Run r = cli("train --config " + q(cfg) + " --override max_steps=2 --override model.texture_dim=8 --seed 11" +
                      " --synth 2 --out " + q(dir / "run"));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(dir / "run" / "model.iste"));
    CHECK(fs::exists(dir / "run" / "loss.csv"));
    const auto run = nlohmann::json::parse(slurp(dir / "run" / "run.json"));
    CHECK(run["command"] == "train");
    CHECK(run["config"]["max_steps"] == 2);
    CHECK(run["config"]["model"]["texture_dim"] == 8);
    CHECK(run["config"]["seed"] == 11);

    // run.json reproduces the run: feeding its config back gives the same loss curve.
    std::ofstream(dir / "again.json") << run["config"].dump();
    const Run again = cli("train --config " + q(dir / "again.json") + " --synth 2 --out " + q(dir / "run2"));
    REQUIRE_MESSAGE(again.code == 0, again.output);
    CHECK(slurp(dir / "run" / "loss.csv") == slurp(dir / "run2" / "loss.csv"));
    CHECK(IsteModel<float>::load(dir / "run2" / "model.iste").config().texture_dim == 8);
}

TEST_CASE("train: same seed twice gives identical loss csv") {
    test::TempDir dir("cli");
    const fs::path cfg = write_tiny_config(dir);
    for (const char* out : {"a", "b"}) {
        REQUIRE(cli("train --config " + q(cfg) + " --seed 5 --synth 2 --out " + q(dir / out)).code == 0);
    }
    const std::string a = slurp(dir / "a" / "loss.csv");
    CHECK(a.rfind("step,epoch,scale,loss", 0) == 0);
    CHECK(a == slurp(dir / "b" / "loss.csv"));
    REQUIRE(cli("train --config " + q(cfg) + " --seed 6 --synth 2 --out " + q(dir / "c")).code == 0);
    CHECK(a != slurp(dir / "c" / "loss.csv"));
}

TEST_CASE("train: divergence exits 3 and leaves abort.json") {
    test::TempDir dir("cli");
    const fs::path cfg = write_tiny_config(dir);
    const Run r = cli("train --config " + q(cfg) + " --override lr=1e36 --override epochs=50 --override max_steps=50 --synth 1 --out " +
                      q(dir / "run"));
    CHECK(r.code == 3);
    CHECK(fs::exists(dir / "run" / "abort.json"));
}

TEST_CASE("infer: output extents and errors") {
    test::TempDir dir("cli");
    const fs::path lr = write_lr_png(dir, 48);
    const fs::path& ckpt = tiny_checkpoint();
    for (const auto& [scale, side] : std::vector<std::pair<std::string, std::size_t>>{{"2", 96}, {"6.7", 322}, {"1", 48}}) {
        const fs::path out = dir / ("hr" + scale + ".png");
        const Run r = cli("infer --image " + q(lr) + " --scale " + scale + " --checkpoint " + q(ckpt) + " --out " + q(out));
        REQUIRE_MESSAGE(r.code == 0, r.output);
        CHECK(load_png(out).shape() == Shape{side, side, 3});
    }
    CHECK(cli("infer --image " + q(lr) + " --scale 12.5 --checkpoint " + q(ckpt) + " --out " + q(dir / "x.png")).code == 2);
    CHECK(cli("infer --image " + q(lr) + " --scale 0.5 --checkpoint " + q(ckpt) + " --out " + q(dir / "x.png")).code == 2);
    std::ofstream(dir / "text.png") << "not an image";
    CHECK(cli("infer --image " + q(dir / "text.png") + " --scale 2 --checkpoint " + q(ckpt) + " --out " +
              q(dir / "x.png")).code == 2);
    CHECK(cli("infer --image " + q(lr) + " --scale 2 --checkpoint " + q(dir / "none.iste") + " --out " +
              q(dir / "x.png")).code == 2);
    CHECK_FALSE(fs::exists(dir / "x.png"));
}

TEST_CASE("eval: two images at scales 2 and 4") {
    test::TempDir dir("cli");
    REQUIRE(cli("synth --n 2 --seed 1 --out " + q(dir / "corpus")).code == 0);
    const Run r = cli("eval --checkpoint " + q(tiny_checkpoint()) + " --corpus " + q(dir / "corpus") +
                      " --scales 2,4 --bicubic --out " + q(dir / "ev"));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    std::istringstream csv(slurp(dir / "ev" / "report.csv"));
    std::string header, line;
    std::getline(csv, header);
    std::set<std::string> scales, metrics;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string s; std::getline(ls, s, ',');) f.push_back(s);
        REQUIRE(f.size() >= 4);
        scales.insert(f[0]);
        metrics.insert(f[1]);
    }
    CHECK(rows == 4);
    CHECK(scales.size() == 2);
    CHECK(metrics == std::set<std::string>{"psnr", "ssim"});
    CHECK(fs::exists(dir / "ev" / "bicubic.csv"));
    CHECK(fs::exists(dir / "ev" / "run.json"));
    CHECK(cli("eval --checkpoint " + q(tiny_checkpoint()) + " --synth 1 --scales 2,x --out " + q(dir / "bad")).code == 2);
    CHECK(cli("eval --checkpoint " + q(tiny_checkpoint()) + " --synth 1 --scales 13 --out " + q(dir / "bad")).code == 2);
}

TEST_CASE("ablate: variants, parameter accounting and csv schema") {
    test::TempDir dir("cli");
    const fs::path cfg = write_tiny_config(dir);
    const Run bad = cli("ablate --variant no-foo --config " + q(cfg) + " --synth 2 --holdout 1 --out " + q(dir / "x"));
    CHECK(bad.code == 2);
    for (const char* name : {"full", "no-lfi", "no-stf", "no-ltd"}) CHECK(bad.output.find(name) != std::string::npos);

    std::string header;
    for (const std::string v : {"full", "no-lfi", "no-stf", "no-ltd"}) {
        CAPTURE(v);
        const fs::path out = dir / v;
        const Run r = cli("ablate --variant " + v + " --config " + q(cfg) + " --synth 2 --holdout 1 --scales 2,3 --out " +
                          q(out));
        REQUIRE_MESSAGE(r.code == 0, r.output);
        const auto run = nlohmann::json::parse(slurp(out / "run.json"));
        CHECK(run["config"]["model"]["use_ltd"] == (v != "no-ltd"));
        CHECK(run["config"]["model"]["use_lfi"] == (v != "no-lfi"));
        CHECK(run["config"]["model"]["use_stf"] == (v != "no-stf"));

        // Parameter line agrees with a count taken from the saved checkpoint.
        const std::size_t stored = IsteModel<float>::load(out / "model.iste").params().count();
        CHECK(r.output.find("parameters " + v + " " + std::to_string(stored) + " expected " + std::to_string(stored)) !=
              std::string::npos);

        std::istringstream csv(slurp(out / "ablation.csv"));
        std::string h, line;
        std::getline(csv, h);
        if (header.empty()) header = h;
        CHECK(h == header);
        std::size_t rows = 0;
        while (std::getline(csv, line)) rows += !line.empty() && line.rfind(v + ",", 0) == 0;
        CHECK(rows == 2);
    }
    CHECK(header == "variant,scale,psnr,ssim,parameters");
}

TEST_CASE("visualize: error maps and retrieval maps") {
    test::TempDir dir("cli");
    save_png(synth_corpus(1, 192, 9)[0], dir / "hr.png");
    const Run r = cli("visualize --checkpoint " + q(tiny_checkpoint()) + " --image " + q(dir / "hr.png") +
                      " --scale 2 --retrieval --out " + q(dir / "vis"));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    for (const char* f : {"prediction.png", "error_iste.png", "error_bicubic.png", "retrieval_arrows.png",
                          "retrieval_confidence.png", "run.json"}) {
        CAPTURE(f);
        CHECK(fs::exists(dir / "vis" / f));
    }
}

TEST_CASE("synth: same seed gives identical files") {
    test::TempDir dir("cli");
    REQUIRE(cli("synth --n 8 --seed 7 --out " + q(dir / "a")).code == 0);
    REQUIRE(cli("synth --n 8 --seed 7 --out " + q(dir / "b")).code == 0);
    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        if (e.path().extension() != ".png") continue;
        ++pngs;
        CHECK(nn::fnv1a64(slurp(e.path())) == nn::fnv1a64(slurp(dir / "b" / e.path().filename())));
    }
    CHECK(pngs == 8);
    REQUIRE(cli("synth --n 1 --seed 8 --out " + q(dir / "c")).code == 0);
    const fs::path first = *std::find_if(fs::directory_iterator(dir / "c"), fs::directory_iterator{},
                                         [](const auto& e) { return e.path().extension() == ".png"; });
    CHECK(slurp(first) != slurp(dir / "a" / first.filename()));
}

}  // TEST_SUITE
