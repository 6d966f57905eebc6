#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "iste/checkpoint.hpp"
#include "iste/evalkit.hpp"
#include "iste/service.hpp"
#include "iste/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iste;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Raised for bad paths or inputs the user supplied.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw UsageError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path default_out() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return fs::path("runs") / buf;
}

void write_run_json(const fs::path& out, const std::string& command, const json& args, const json& config) {
    fs::create_directories(out);
    json j{{"command", command}, {"args", args}, {"config", config}};
    std::ofstream(out / "run.json") << j.dump(2) << "\n";
}

std::vector<double> parse_scales(const std::string& text) {
    std::vector<double> scales;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size() || !(v >= 1.0 && v <= kMaxInferenceScale)) throw std::invalid_argument(item);
            scales.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("bad scale '" + item + "' (expected numbers in [1, 12])");
        }
    }
    if (scales.empty()) throw UsageError("empty scale list");
    return scales;
}

struct CorpusArgs {
    std::string dir;
    std::size_t synth_n = 0;
    std::size_t synth_size = 192;
    std::uint64_t synth_seed = 0;

    void add(CLI::App* app) {
        app->add_option("--corpus", dir, "Directory of PNG images");
        app->add_option("--synth", synth_n, "Generate this many synthetic images instead of reading --corpus");
        app->add_option("--synth-size", synth_size, "Side of synthetic images");
        app->add_option("--synth-seed", synth_seed, "Seed of the synthetic corpus");
    }
    json to_json() const {
        return dir.empty() ? json{{"synth", synth_n}, {"synth_size", synth_size}, {"synth_seed", synth_seed}}
                           : json{{"corpus", dir}};
    }
    std::vector<Image> load() const {
        if (!dir.empty()) {
            if (!fs::is_directory(dir)) throw UsageError("corpus directory not found: " + dir);
            return load_corpus(dir).images;
        }
        if (synth_n == 0) throw UsageError("give --corpus DIR or --synth N");
        return synth_corpus(synth_n, synth_size, synth_seed);
    }
};

TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides,
                              std::optional<std::uint64_t> seed) {
    std::string text = path.empty() ? train_config_to_json(TrainConfig{}) : read_file(path);
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    return train_config_from_json(apply_overrides(text, all));
}

std::string format_params(const ParameterCounts& pc) {
    std::ostringstream os;
    os << "encoder=" << pc.encoder << " lfi=" << pc.lfi << " texture=" << pc.texture << " query=" << pc.query
       << " fusion=" << pc.fusion << " pixel_decoder=" << pc.pixel_decoder << " texture_decoder=" << pc.texture_decoder;
    return os.str();
}

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app) {
        app->add_option("--config", config, "JSON config file");
        app->add_option("--override", overrides, "Dotted key=value assignment, applied after the file")->allow_extra_args(false);
        app->add_option("--out", out, "Output directory (default runs/<timestamp>)");
        app->add_option("--seed", seed, "Seed; overrides the config's seed");
    }
    fs::path out_dir() const { return out.empty() ? default_out() : fs::path(out); }
};

int cmd_train(const Common& c, const CorpusArgs& corpus) {
    const TrainConfig cfg = load_train_config(c.config, c.overrides, c.seed);
    const std::vector<Image> images = corpus.load();
    const fs::path out = c.out_dir();
    write_run_json(out, "train", corpus.to_json(), json::parse(train_config_to_json(cfg)));
    const TrainResult r = train(cfg, images, out, [](const LossRecord& rec) {
        if (rec.step % 50 == 0) std::cerr << "step " << rec.step << " loss " << rec.loss << "\n";
    });
    std::cout << "checkpoint " << r.checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const Common& c, const CorpusArgs& corpus, const std::string& checkpoint, const std::string& scales,
             bool bicubic) {
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    EvalOptions opt;
    opt.scales = parse_scales(scales);
    opt.seed = c.seed.value_or(0);
    const std::vector<Image> images = corpus.load();
    const fs::path out = c.out_dir();
    const std::string run_id = out.filename().string();
    opt.artifact_dir = out / "artifacts" / run_id;
    json args = corpus.to_json();
    args["checkpoint"] = checkpoint;
    args["scales"] = opt.scales;
    args["seed"] = opt.seed;
    const IsteModel<float> model = IsteModel<float>::load(checkpoint);
    write_run_json(out, "eval", args, json::parse(config_to_json(model.config())));
    const EvalReport report = evaluate(model, nn::hash_hex(nn::file_hash(checkpoint)), images, opt);
    report.write_csv(out / "report.csv");
    std::cout << report.csv();
    if (bicubic) {
        EvalOptions bopt = opt;
        bopt.artifact_dir.reset();
        const EvalReport b = evaluate_bicubic(images, bopt);
        b.write_csv(out / "bicubic.csv");
        std::cout << b.csv();
    }
    return 0;
}

int cmd_infer(const std::string& image_path, double scale, const std::string& checkpoint, const std::string& out) {
    if (!(scale >= 1.0 && scale <= kMaxInferenceScale)) throw UsageError("--scale must lie in [1, 12]");
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    Image lr;
    try {
        lr = load_png(image_path);
    } catch (const IoError& e) {
        throw UsageError(std::string("not a readable PNG image: ") + e.what());
    }
    const IsteModel<float> model = IsteModel<float>::load(checkpoint);
    const Image hr = model.predict_image(lr, scale);
    save_png(hr, out);
    std::cout << out << " " << hr.dim(1) << "x" << hr.dim(0) << "\n";
    return 0;
}

int cmd_ablate(const Common& c, const CorpusArgs& corpus, const std::string& variant, const std::string& scales,
               std::size_t holdout) {
    const auto& names = variant_names();
    if (std::find(names.begin(), names.end(), variant) == names.end()) {
        throw UsageError("unknown variant '" + variant + "' (valid: full, no-lfi, no-stf, no-ltd)");
    }
    TrainConfig cfg = load_train_config(c.config, c.overrides, c.seed);
    cfg.model = apply_variant(cfg.model, variant);
    std::vector<Image> images = corpus.load();
    if (holdout == 0 || holdout >= images.size()) throw UsageError("--holdout must leave at least one training image");
    const std::vector<Image> held(images.end() - static_cast<std::ptrdiff_t>(holdout), images.end());
    images.resize(images.size() - holdout);

    const fs::path out = c.out_dir();
    json args = corpus.to_json();
    args["variant"] = variant;
    args["holdout"] = holdout;
    args["train_images"] = images.size();
    write_run_json(out, "ablate", args, json::parse(train_config_to_json(cfg)));

    TrainConfig effective = cfg;
    effective.model.seed = cfg.seed;
    const ParameterCounts expected = expected_parameter_counts(effective.model);
    const TrainResult r = train(cfg, images, out);
    const std::size_t actual = r.model.params().count();
    std::cout << "parameters " << variant << " " << actual << " expected " << expected.total() << " ("
              << format_params(expected) << ")\n";
    if (actual != expected.total()) throw std::runtime_error("parameter count does not match the configuration");

    EvalOptions opt;
    opt.scales = parse_scales(scales);
    opt.seed = cfg.seed;
    const EvalReport report = evaluate(r.model, nn::hash_hex(nn::file_hash(r.checkpoint)), held, opt);
    std::ofstream csv(out / "ablation.csv");
    csv << "variant,scale,psnr,ssim,parameters\n";
    for (double m : opt.scales) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%g,%.6f,%.6f,%zu\n", variant.c_str(), m, report.value(m, "psnr"),
                      report.value(m, "ssim"), actual);
        csv << line;
        std::cout << line;
    }
    return 0;
}

int cmd_visualize(const Common& c, const std::string& checkpoint, const std::string& image_path, double scale,
                  bool retrieval) {
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    if (!(scale >= 1.0 && scale <= kMaxInferenceScale)) throw UsageError("--scale must lie in [1, 12]");
    Image hr;
    try {
        hr = load_png(image_path);
    } catch (const IoError& e) {
        throw UsageError(std::string("not a readable PNG image: ") + e.what());
    }
    const IsteModel<float> model = IsteModel<float>::load(checkpoint);
    const fs::path out = c.out_dir();
    write_run_json(out, "visualize",
                   json{{"checkpoint", checkpoint}, {"image", image_path}, {"scale", scale}, {"retrieval", retrieval}},
                   json::parse(config_to_json(model.config())));

    const EvalPair pair = make_eval_pair(hr, scale, DegradeConfig{}, c.seed.value_or(0));
    const Image pred = model.predict_image(pair.lr, scale);
    const Image bic = bicubic_upscale(pair.lr, scale);
    // Shared colour scale so the two maps are comparable.
    double vmax = 0.0;
    for (const Image* img : {&pred, &bic}) {
        const Tensor<double> e = abs_error(*img, pair.hr);
        vmax = std::max(vmax, *std::max_element(e.vec().begin(), e.vec().end()));
    }
    save_png(pred, out / "prediction.png");
    error_map(pred, pair.hr, out / "error_iste.png", vmax);
    error_map(bic, pair.hr, out / "error_bicubic.png", vmax);
    std::cout << "psnr iste " << psnr(pred, pair.hr) << " bicubic " << psnr(bic, pair.hr) << "\n";

    if (retrieval) {
        if (!model.config().use_stf) throw UsageError("--retrieval needs a model with texture fusion");
        // First retrieval block of the HR grid, as used during inference.
        const CoordSet full = make_coord_set(pair.lr.dim(0), pair.lr.dim(1), scale);
        const auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(model.config().block)));
        const std::size_t bh = std::min(side, full.hr_h), bw = std::min(side, full.hr_w);
        std::vector<std::size_t> order;
        for (std::size_t y = 0; y < bh; ++y)
            for (std::size_t x = 0; x < bw; ++x) order.push_back(y * full.hr_w + x);
        nn::NoGradGuard no_grad;
        const ForwardResult<float> fr = model.forward(pair.lr, full.select(order));
        const std::vector<double> conf(fr.retrieval.confidence.begin(), fr.retrieval.confidence.end());
        const auto arrows = retrieval_map(fr.retrieval.index, conf, bh, bw,
                                          {out / "retrieval_arrows.png", out / "retrieval_confidence.png"});
        std::cout << "retrieval arrows " << arrows.size() << "\n";
    }
    return 0;
}

int cmd_synth(std::size_t n, std::size_t size, std::uint64_t seed, const std::string& out) {
    const fs::path dir = out.empty() ? default_out() : fs::path(out);
    write_corpus(synth_corpus(n, size, seed), dir);
    write_run_json(dir, "synth", json{{"n", n}, {"size", size}, {"seed", seed}}, json::object());
    std::cout << "wrote " << n << " images to " << dir.string() << "\n";
    return 0;
}

TileService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

int cmd_serve(ServiceOptions opt) {
    if (!fs::exists(opt.checkpoint)) throw UsageError("checkpoint not found: " + opt.checkpoint.string());
    if (!fs::is_directory(opt.images)) throw UsageError("image directory not found: " + opt.images.string());
    TileService service(opt);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::thread loader([&] {
        service.load();
        std::cerr << "loaded " << service.images().size() << " images, model " << service.model_hash() << "\n";
    });
    std::cerr << "listening on " << opt.host << ":" << opt.port << "\n";
    try {
        service.serve_forever();
    } catch (...) {
        loader.join();
        throw;
    }
    loader.join();
    g_service = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Implicit texture-aware arbitrary-scale super-resolution"};
    app.require_subcommand(1);

    Common common_train, common_eval, common_ablate, common_vis;
    CorpusArgs corpus_train, corpus_eval, corpus_ablate;

    auto* train_cmd = app.add_subcommand("train", "Train a model");
    common_train.add(train_cmd);
    corpus_train.add(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    common_eval.add(eval_cmd);
    corpus_eval.add(eval_cmd);
    std::string eval_ckpt, eval_scales = "2,3,4,6,8";
    bool eval_bicubic = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--scales", eval_scales, "Comma-separated scale list");
    eval_cmd->add_flag("--bicubic", eval_bicubic, "Also report the bicubic baseline");

    auto* infer_cmd = app.add_subcommand("infer", "Upscale one image");
    std::string infer_image, infer_ckpt, infer_out;
    double infer_scale = 2.0;
    infer_cmd->add_option("--image", infer_image)->required();
    infer_cmd->add_option("--scale", infer_scale)->required();
    infer_cmd->add_option("--checkpoint", infer_ckpt)->required();
    infer_cmd->add_option("--out", infer_out)->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate an ablation variant");
    common_ablate.add(ablate_cmd);
    corpus_ablate.add(ablate_cmd);
    std::string variant, ablate_scales = "2,3,4,6,8";
    std::size_t holdout = 8;
    ablate_cmd->add_option("--variant", variant)->required();
    ablate_cmd->add_option("--scales", ablate_scales);
    ablate_cmd->add_option("--holdout", holdout, "Last N corpus images are held out for evaluation");

    auto* vis_cmd = app.add_subcommand("visualize", "Error maps and retrieval maps");
    common_vis.add(vis_cmd);
    std::string vis_ckpt, vis_image;
    double vis_scale = 2.0;
    bool vis_retrieval = false;
    vis_cmd->add_option("--checkpoint", vis_ckpt)->required();
    vis_cmd->add_option("--image", vis_image)->required();
    vis_cmd->add_option("--scale", vis_scale);
    vis_cmd->add_flag("--retrieval", vis_retrieval);

    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus");
    std::size_t synth_n = 8, synth_size = 192;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth_cmd->add_option("--n", synth_n);
    synth_cmd->add_option("--size", synth_size);
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--out", synth_out);

    auto* serve_cmd = app.add_subcommand("serve", "Serve super-resolved tiles over HTTP");
    ServiceOptions sopt;
    std::string serve_ckpt, serve_images, serve_static, serve_cors;
    serve_cmd->add_option("--checkpoint", serve_ckpt)->required();
    serve_cmd->add_option("--images", serve_images)->required();
    serve_cmd->add_option("--host", sopt.host);
    serve_cmd->add_option("--port", sopt.port);
    serve_cmd->add_option("--workers", sopt.workers, "Inference workers (default: CPU count)");
    serve_cmd->add_option("--queue", sopt.queue_capacity, "Waiting requests before 503");
    serve_cmd->add_option("--cache", sopt.cache_capacity, "Tile cache entries");
    serve_cmd->add_option("--cors-origin", serve_cors, "Allowed CORS origin");
    serve_cmd->add_option("--static", serve_static, "Directory served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(common_train, corpus_train);
        if (*eval_cmd) return cmd_eval(common_eval, corpus_eval, eval_ckpt, eval_scales, eval_bicubic);
        if (*infer_cmd) return cmd_infer(infer_image, infer_scale, infer_ckpt, infer_out);
        if (*ablate_cmd) return cmd_ablate(common_ablate, corpus_ablate, variant, ablate_scales, holdout);
        if (*vis_cmd) return cmd_visualize(common_vis, vis_ckpt, vis_image, vis_scale, vis_retrieval);
        if (*synth_cmd) return cmd_synth(synth_n, synth_size, synth_seed, synth_out);
        if (*serve_cmd) {
            sopt.checkpoint = serve_ckpt;
            sopt.images = serve_images;
            if (!serve_cors.empty()) sopt.cors_origin = serve_cors;
            if (!serve_static.empty()) sopt.static_dir = serve_static;
            return cmd_serve(sopt);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
