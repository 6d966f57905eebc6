#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iste/coords.hpp"
#include "iste/decoders.hpp"
#include "iste/encoder.hpp"
#include "iste/lfi.hpp"
#include "iste/stf.hpp"
#include "iste/texture_learner.hpp"

namespace iste {

inline constexpr double kMaxInferenceScale = 12.0;

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t lfi_dim = 64;
    bool lfi_grouped = false;
    std::size_t texture_dim = 256;
    std::size_t phase_hidden = 64;
    std::size_t fusion_hidden = 256;
    std::vector<std::size_t> pixel_decoder_hidden{256, 256, 256};
    std::vector<std::size_t> texture_decoder_hidden{256};
    std::size_t block = kDefaultRetrievalBlock;
    bool use_lfi = true;
    bool use_stf = true;
    bool use_ltd = true;
    std::uint64_t seed = 0;

    bool uses_texture_learner() const { return use_stf || use_ltd; }
    bool operator==(const ModelConfig&) const = default;
};

/// Named ablation variants: full, no-lfi, no-stf, no-ltd.
ModelConfig apply_variant(ModelConfig cfg, const std::string& variant);
const std::vector<std::string>& variant_names();

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json);
std::uint64_t config_hash(const ModelConfig& cfg);

/// Scalar count of each sub-module's parameters for the given config,
/// computed from the config alone.
struct ParameterCounts {
    std::size_t encoder = 0, lfi = 0, texture = 0, query = 0, fusion = 0, pixel_decoder = 0, texture_decoder = 0;
    std::size_t total() const { return encoder + lfi + texture + query + fusion + pixel_decoder + texture_decoder; }
};
ParameterCounts expected_parameter_counts(const ModelConfig& cfg);

/// Per-image state computed once and reused for every coordinate block.
template <typename T>
struct EncodedImage {
    std::size_t h = 0, w = 0;
    nn::Var<T> features;        // F_LR
    nn::Var<T> pixel_features;  // F_LFI (or F_LR without the interactor)
    TextureFieldMaps<T> texture_maps;
};

template <typename T>
struct ForwardResult {
    nn::Var<T> prediction;  // (N, 3)
    nn::Var<T> pixel;       // I_LPD
    nn::Var<T> texture;     // I_LTD, empty without the texture decoder
    RetrievalResult<T> retrieval;
};

template <typename T>
class IsteModel {
   public:
    static IsteModel create(const ModelConfig& cfg);
    /// Binds existing parameters; throws CheckpointError when they do not
    /// match the configuration (missing, extra or mis-shaped entries).
    static IsteModel from_params(const ModelConfig& cfg, nn::ParamStore<T> params);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    EncodedImage<T> encode(const nn::Var<T>& image) const;
    /// `fixed` replays an earlier retrieval instead of searching again.
    ForwardResult<T> decode(const EncodedImage<T>& enc, const CoordSet& coords,
                            const RetrievalResult<T>* fixed = nullptr) const;
    ForwardResult<T> forward(const nn::Var<T>& image, const CoordSet& coords) const;
    ForwardResult<T> forward(const Tensor<T>& image, const CoordSet& coords) const {
        return forward(nn::constant(image), coords);
    }

    /// Full HR grid of (round(m*h), round(m*w), 3), clamped to [0, 1].
    /// Coordinates are processed in square HR tiles that double as retrieval blocks.
    Tensor<T> predict_image(const Tensor<T>& image, double scale) const;

    /// out_h x out_w pixel centers spread over the rectangle
    /// [y0, y0 + h) x [x0, x0 + w) of `image`, in its pixel units.
    Tensor<T> predict_region(const Tensor<T>& image, double y0, double x0, double h, double w, std::size_t out_h,
                             std::size_t out_w) const;

    void save(const std::filesystem::path& path) const;
    static IsteModel load(const std::filesystem::path& path);

   private:
    IsteModel(ModelConfig cfg, nn::ParamStore<T> params);
    void bind();
    Tensor<T> decode_grid(const EncodedImage<T>& enc, const CoordSet& grid) const;

    ModelConfig cfg_;
    nn::ParamStore<T> params_;
    Encoder<T> encoder_;
    LfiParams<T> lfi_;
    TextureLearner<T> texture_;
    StfParams<T> stf_;
    nn::Mlp<T> pixel_decoder_;
    nn::Mlp<T> texture_decoder_;
};

/// HR coordinate indices grouped into square tiles of `tile` pixels per side, row-major within each tile.
std::vector<std::vector<std::size_t>> tile_order_blocks(std::size_t hr_h, std::size_t hr_w, std::size_t tile);

}  // namespace iste
