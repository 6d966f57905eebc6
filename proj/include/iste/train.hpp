#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iste/data.hpp"
#include "iste/model.hpp"

namespace iste {

struct TrainConfig {
    ModelConfig model;
    std::size_t patch = 48;
    double scale_min = 1.0;
    double scale_max = 4.0;
    std::size_t samples_per_patch = 2304;
    double lr = 1e-4;
    std::size_t epochs = 1;
    std::size_t batch_size = 16;
    std::size_t blur_kernel = 5;
    double blur_sigma = 1.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
    std::size_t max_steps = 0;         // 0: run all epochs
    std::size_t lr_halve_every = 0;    // epochs; 0 keeps the rate constant

    DegradeConfig degrade() const { return {patch, blur_kernel, blur_sigma}; }
    std::size_t steps_per_epoch(std::size_t n_images) const { return (n_images + batch_size - 1) / batch_size; }
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

std::string train_config_to_json(const TrainConfig& cfg, int indent = 2);
/// Unknown keys are rejected so typos in config files do not pass silently.
TrainConfig train_config_from_json(const std::string& json);

/// Applies "a.b.c=value" assignments to a JSON document. Values parse as
/// JSON when possible, otherwise they are taken as strings.
std::string apply_overrides(const std::string& json, const std::vector<std::string>& overrides);

/// One training step's inputs.
struct TrainingBatch {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double scale = 1.0;
    std::vector<Image> lr_patches;
    std::vector<CoordSet> coord_sets;
    std::vector<Tensor<float>> gt_rgb;
};

/// Deterministic in (cfg.seed, step): the image order comes from a per-epoch
/// shuffle and every random draw of the step from its own stream.
TrainingBatch make_batch(const TrainConfig& cfg, const std::vector<Image>& corpus, std::size_t step);

struct LossRecord {
    std::size_t step;
    std::size_t epoch;
    double scale;
    double loss;
};

/// Raised when the loss or any intermediate value becomes non-finite.
class TrainingAborted : public NonFiniteError {
   public:
    TrainingAborted(const std::string& what, std::uint64_t seed, std::size_t step)
        : NonFiniteError(what), seed(seed), step(step) {}
    std::uint64_t seed;
    std::size_t step;
};

struct TrainResult {
    IsteModel<float> model;
    std::vector<LossRecord> losses;
    std::filesystem::path checkpoint;
};

/// Per step: one scale, batch of degraded patches, L1 loss, Adam update.
/// Writes loss.csv (step,epoch,scale,loss) and checkpoints under out_dir.
/// On a non-finite value writes abort.json and throws TrainingAborted.
TrainResult train(const TrainConfig& cfg, const std::vector<Image>& corpus, const std::filesystem::path& out_dir,
                  const std::function<void(const LossRecord&)>& on_step = {});

/// Mean absolute error over all entries.
double l1_value(const Tensor<float>& pred, const Tensor<float>& gt);

}  // namespace iste
