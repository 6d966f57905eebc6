#include "iste/train.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace iste {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (cfg.patch < 8) fail("patch must be at least 8");
    if (!(cfg.scale_min >= 1.0) || !(cfg.scale_max >= cfg.scale_min)) fail("need 1 <= scale_min <= scale_max");
    if (cfg.scale_max > kMaxInferenceScale) fail("scale_max must not exceed 12");
    if (cfg.samples_per_patch == 0) fail("samples_per_patch must be positive");
    if (cfg.samples_per_patch > cfg.patch * cfg.patch * 16) fail("samples_per_patch exceeds patch^2 * 16");
    if (cfg.samples_per_patch > cfg.patch * cfg.patch) {
        // Must fit the smallest HR patch the scale range can produce.
        const std::size_t side = scaled_extent(cfg.patch, cfg.scale_min);
        if (cfg.samples_per_patch > side * side) fail("samples_per_patch exceeds the HR patch at scale_min");
    }
    if (!(cfg.lr > 0.0)) fail("lr must be positive");
    if (cfg.epochs == 0) fail("epochs must be positive");
    if (cfg.batch_size == 0) fail("batch_size must be positive");
    if (cfg.blur_kernel % 2 == 0) fail("blur_kernel must be odd");
    if (!(cfg.blur_sigma > 0.0)) fail("blur_sigma must be positive");
}

std::string train_config_to_json(const TrainConfig& cfg, int indent) {
    json j;
    j["model"] = json::parse(config_to_json(cfg.model));
    j["patch"] = cfg.patch;
    j["scale_min"] = cfg.scale_min;
    j["scale_max"] = cfg.scale_max;
    j["samples_per_patch"] = cfg.samples_per_patch;
    j["lr"] = cfg.lr;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["blur_kernel"] = cfg.blur_kernel;
    j["blur_sigma"] = cfg.blur_sigma;
    j["seed"] = cfg.seed;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["max_steps"] = cfg.max_steps;
    j["lr_halve_every"] = cfg.lr_halve_every;
    return j.dump(indent);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::vector<std::string> known{"model",      "patch",      "scale_min",  "scale_max",
                                                "samples_per_patch", "lr",  "epochs",     "batch_size",
                                                "blur_kernel", "blur_sigma", "seed",      "checkpoint_every",
                                                "max_steps",  "lr_halve_every"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("train config: unknown field '" + key + "'");
        }
    }
    TrainConfig cfg;
    try {
        if (j.contains("model")) cfg.model = config_from_json(j["model"].dump());
        cfg.patch = j.value("patch", cfg.patch);
        cfg.scale_min = j.value("scale_min", cfg.scale_min);
        cfg.scale_max = j.value("scale_max", cfg.scale_max);
        cfg.samples_per_patch = j.value("samples_per_patch", cfg.samples_per_patch);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.blur_kernel = j.value("blur_kernel", cfg.blur_kernel);
        cfg.blur_sigma = j.value("blur_sigma", cfg.blur_sigma);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
        cfg.max_steps = j.value("max_steps", cfg.max_steps);
        cfg.lr_halve_every = j.value("lr_halve_every", cfg.lr_halve_every);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    cfg.model.seed = cfg.seed;
    validate(cfg);
    return cfg;
}

std::string apply_overrides(const std::string& text, const std::vector<std::string>& overrides) {
    json j;
    try {
        j = text.empty() ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not key=value");
        const std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
            if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (node->is_null()) *node = json::object();
            start = dot + 1;
        }
    }
    return j.dump(2);
}

double l1_value(const Tensor<float>& pred, const Tensor<float>& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("l1: shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::abs(static_cast<double>(pred[i]) - gt[i]);
    return pred.numel() ? acc / static_cast<double>(pred.numel()) : 0.0;
}

TrainingBatch make_batch(const TrainConfig& cfg, const std::vector<Image>& corpus, std::size_t step) {
    if (corpus.empty()) throw ConfigError("training corpus is empty");
    const std::size_t n = corpus.size(), spe = cfg.steps_per_epoch(n);
    TrainingBatch b;
    b.step = step;
    b.epoch = step / spe;
    const std::size_t within = step % spe;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5eed0000ULL + b.epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    std::mt19937_64 rng(derive_seed(cfg.seed, step));
    b.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * uniform01(rng);
    const DegradeConfig dc = cfg.degrade();
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const Image& img = corpus[order[(within * cfg.batch_size + i) % n]];
        DegradedPair pair = degrade(img, b.scale, dc, rng);
        SampledPairs sp = sample_pairs(pair.hr, cfg.patch, cfg.patch, cfg.samples_per_patch, rng);
        b.lr_patches.push_back(std::move(pair.lr));
        b.coord_sets.push_back(std::move(sp.coords));
        b.gt_rgb.push_back(std::move(sp.rgb));
    }
    return b;
}

namespace {

// Builds batches ahead of the optimizer, at most `capacity` waiting.
class BatchPrefetcher {
   public:
    BatchPrefetcher(const TrainConfig& cfg, const std::vector<Image>& corpus, std::size_t total, std::size_t capacity)
        : capacity_(capacity) {
        worker_ = std::thread([this, &cfg, &corpus, total] {
            for (std::size_t s = 0; s < total; ++s) {
                TrainingBatch batch;
                try {
                    batch = make_batch(cfg, corpus, s);
                } catch (...) {
                    std::lock_guard lock(mu_);
                    error_ = std::current_exception();
                    cv_.notify_all();
                    return;
                }
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stop_ || queue_.size() < capacity_; });
                if (stop_) return;
                queue_.push_back(std::move(batch));
                cv_.notify_all();
            }
        });
    }

    ~BatchPrefetcher() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    TrainingBatch next() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty() || error_; });
        if (queue_.empty()) std::rethrow_exception(error_);
        TrainingBatch b = std::move(queue_.front());
        queue_.pop_front();
        cv_.notify_all();
        return b;
    }

   private:
    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TrainingBatch> queue_;
    std::exception_ptr error_;
    bool stop_ = false;
    std::thread worker_;
};

void write_abort(const std::filesystem::path& out_dir, const TrainConfig& cfg, const TrainingBatch& b,
                 const std::string& what) {
    json j;
    j["reason"] = what;
    j["seed"] = cfg.seed;
    j["step"] = b.step;
    j["epoch"] = b.epoch;
    j["scale"] = b.scale;
    j["batch_seed"] = derive_seed(cfg.seed, b.step);
    std::ofstream(out_dir / "abort.json") << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const std::vector<Image>& corpus, const std::filesystem::path& out_dir,
                  const std::function<void(const LossRecord&)>& on_step) {
    TrainConfig cfg = cfg_in;
    cfg.model.seed = cfg.seed;
    validate(cfg);
    if (corpus.empty()) throw ConfigError("training corpus is empty");
    std::filesystem::create_directories(out_dir);

    IsteModel<float> model = IsteModel<float>::create(cfg.model);
    nn::AdamState<float> adam;
    adam.lr = static_cast<float>(cfg.lr);

    const std::size_t spe = cfg.steps_per_epoch(corpus.size());
    std::size_t total = cfg.epochs * spe;
    if (cfg.max_steps) total = std::min(total, cfg.max_steps);

    std::ofstream log(out_dir / "loss.csv");
    if (!log) throw IoError("cannot write " + (out_dir / "loss.csv").string());
    log << "step,epoch,scale,loss\n";

    std::vector<LossRecord> losses;
    BatchPrefetcher prefetch(cfg, corpus, total, 2);
    for (std::size_t s = 0; s < total; ++s) {
        const TrainingBatch batch = prefetch.next();
        if (cfg.lr_halve_every) {
            const auto halvings = static_cast<int>(batch.epoch / cfg.lr_halve_every);
            adam.lr = static_cast<float>(cfg.lr * std::pow(0.5, halvings));
        }
        double loss_value = 0.0;
        try {
            nn::Var<float> loss;
            for (std::size_t i = 0; i < batch.lr_patches.size(); ++i) {
                const ForwardResult<float> fr = model.forward(batch.lr_patches[i], batch.coord_sets[i]);
                const nn::Var<float> li = nn::l1_loss(fr.prediction, batch.gt_rgb[i]);
                loss = loss ? nn::add(loss, li) : li;
            }
            loss = nn::scale(loss, 1.0f / static_cast<float>(batch.lr_patches.size()));
            loss_value = loss.value()[0];
            if (!std::isfinite(loss_value)) throw NonFiniteError("loss is not finite");
            nn::backward(loss);
            nn::adam_step(model.params(), adam);
        } catch (const NonFiniteError& e) {
            write_abort(out_dir, cfg, batch, e.what());
            throw TrainingAborted("non-finite value at step " + std::to_string(batch.step + 1) + " (seed " +
                                      std::to_string(cfg.seed) + ", batch seed " +
                                      std::to_string(derive_seed(cfg.seed, batch.step)) + "): " + e.what(),
                                  cfg.seed, batch.step);
        }
        const LossRecord rec{batch.step + 1, batch.epoch + 1, batch.scale, loss_value};
        char line[128];
        std::snprintf(line, sizeof(line), "%zu,%zu,%.6f,%.9g\n", rec.step, rec.epoch, rec.scale, rec.loss);
        log << line << std::flush;
        losses.push_back(rec);
        if (on_step) on_step(rec);

        const bool epoch_end = (s + 1) % spe == 0;
        if (epoch_end && cfg.checkpoint_every && (batch.epoch + 1) % cfg.checkpoint_every == 0) {
            model.save(out_dir / ("checkpoint_e" + std::to_string(batch.epoch + 1) + ".iste"));
        }
    }
    const std::filesystem::path checkpoint = out_dir / "model.iste";
    model.save(checkpoint);
    return TrainResult{std::move(model), std::move(losses), checkpoint};
}

}  // namespace iste
