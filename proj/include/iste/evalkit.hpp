#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iste/data.hpp"
#include "iste/image.hpp"
#include "iste/model.hpp"

namespace iste {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels; exact matches report kPsnrCap.
double psnr(const Image& pred, const Image& gt);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double c1 = 1e-4;  // (0.01)^2
    double c2 = 9e-4;  // (0.03)^2
};

/// Single-scale SSIM on luma, averaged over all fully valid windows.
double ssim(const Image& pred, const Image& gt, const SsimOptions& opt = {});

/// Per-pixel channel-mean |pred - gt|.
Tensor<double> abs_error(const Image& pred, const Image& gt);

/// Monotone dark-to-bright colormap, v in [0, 1].
std::array<float, 3> heat_color(double v);

/// Colormapped error image. vmax <= 0 scales by the largest error.
Image error_image(const Image& pred, const Image& gt, double vmax = 0.0);
void error_map(const Image& pred, const Image& gt, const std::filesystem::path& path, double vmax = 0.0);

struct Arrow {
    std::size_t from;  // source pixel t_i (row-major in the grid)
    std::size_t to;    // query pixel i
    double confidence;
};

/// Arrows for the ceil(fraction * N) most confident queries, from the
/// retrieved position to the query; zero-length arrows are dropped.
std::vector<Arrow> select_arrows(const std::vector<std::size_t>& index, const std::vector<double>& confidence,
                                 double fraction = 0.01);

struct RetrievalMapPaths {
    std::filesystem::path arrows;
    std::filesystem::path heatmap;
};

/// Arrow plot over a grey grid and a confidence heatmap, both for an
/// h x w grid of queries. Returns the arrows drawn.
std::vector<Arrow> retrieval_map(const std::vector<std::size_t>& index, const std::vector<double>& confidence,
                                 std::size_t h, std::size_t w, const RetrievalMapPaths& paths,
                                 double fraction = 0.01);

/// Bicubic upscaling onto the same pixel-center grid as make_coord_set.
Image bicubic_upscale(const Image& image, double m);

/// LR/HR pair used for evaluation: lr = floor(side / m) pixels per side,
/// HR = seeded random crop of round(m * lr), degraded like training data.
struct EvalPair {
    Image lr;
    Image hr;
};
EvalPair make_eval_pair(const Image& image, double m, const DegradeConfig& cfg, std::uint64_t seed);

struct ReportRow {
    double scale;
    std::string metric;
    double value;
    std::size_t n_images;
    std::string checkpoint_hash;
};

struct EvalReport {
    std::vector<ReportRow> rows;
    std::vector<std::filesystem::path> artifacts;

    std::string csv() const;
    void write_csv(const std::filesystem::path& path) const;
    /// Mean metric at a scale; throws RangeError if absent.
    double value(double scale, const std::string& metric) const;
};

struct EvalOptions {
    std::vector<double> scales{2, 3, 4, 6, 8};
    std::uint64_t seed = 0;
    DegradeConfig degrade;
    std::optional<std::filesystem::path> artifact_dir;  // error maps when set
};

/// Mean PSNR and SSIM of the model per scale.
EvalReport evaluate(const IsteModel<float>& model, const std::string& checkpoint_hash,
                    const std::vector<Image>& images, const EvalOptions& opt);
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Image>& images,
                    const EvalOptions& opt);

/// Same protocol with bicubic upscaling in place of the model; rows carry
/// checkpoint_hash "bicubic".
EvalReport evaluate_bicubic(const std::vector<Image>& images, const EvalOptions& opt);

}  // namespace iste
