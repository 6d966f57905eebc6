#include "iste/model.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"

#include "iste/checkpoint.hpp"

namespace iste {

using nlohmann::json;

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{"full", "no-lfi", "no-stf", "no-ltd"};
    return names;
}

ModelConfig apply_variant(ModelConfig cfg, const std::string& variant) {
    cfg.use_lfi = cfg.use_stf = cfg.use_ltd = true;
    if (variant == "full") return cfg;
    if (variant == "no-lfi") {
        cfg.use_lfi = false;
    } else if (variant == "no-stf") {
        cfg.use_stf = false;
    } else if (variant == "no-ltd") {
        cfg.use_ltd = false;
    } else {
        throw ConfigError("unknown variant '" + variant + "' (valid: full, no-lfi, no-stf, no-ltd)");
    }
    return cfg;
}

std::string config_to_json(const ModelConfig& cfg) {
    json j;
    j["encoder"] = {{"channels", cfg.encoder.channels}, {"n_blocks", cfg.encoder.n_blocks}, {"kernel", cfg.encoder.kernel}};
    j["lfi_dim"] = cfg.lfi_dim;
    j["lfi_grouped"] = cfg.lfi_grouped;
    j["texture_dim"] = cfg.texture_dim;
    j["phase_hidden"] = cfg.phase_hidden;
    j["fusion_hidden"] = cfg.fusion_hidden;
    j["pixel_decoder_hidden"] = cfg.pixel_decoder_hidden;
    j["texture_decoder_hidden"] = cfg.texture_decoder_hidden;
    j["block"] = cfg.block;
    j["use_lfi"] = cfg.use_lfi;
    j["use_stf"] = cfg.use_stf;
    j["use_ltd"] = cfg.use_ltd;
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    ModelConfig cfg;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::vector<std::string> known{
        "encoder",     "lfi_dim", "lfi_grouped", "texture_dim", "phase_hidden", "fusion_hidden", "pixel_decoder_hidden",
        "texture_decoder_hidden", "block", "use_lfi", "use_stf", "use_ltd", "seed"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("model config: unknown field '" + key + "'");
        }
    }
    try {
        if (j.contains("encoder")) {
            const json& e = j["encoder"];
            cfg.encoder.channels = e.value("channels", cfg.encoder.channels);
            cfg.encoder.n_blocks = e.value("n_blocks", cfg.encoder.n_blocks);
            cfg.encoder.kernel = e.value("kernel", cfg.encoder.kernel);
        }
        cfg.lfi_dim = j.value("lfi_dim", cfg.lfi_dim);
        cfg.lfi_grouped = j.value("lfi_grouped", cfg.lfi_grouped);
        cfg.texture_dim = j.value("texture_dim", cfg.texture_dim);
        cfg.phase_hidden = j.value("phase_hidden", cfg.phase_hidden);
        cfg.fusion_hidden = j.value("fusion_hidden", cfg.fusion_hidden);
        cfg.pixel_decoder_hidden = j.value("pixel_decoder_hidden", cfg.pixel_decoder_hidden);
        cfg.texture_decoder_hidden = j.value("texture_decoder_hidden", cfg.texture_decoder_hidden);
        cfg.block = j.value("block", cfg.block);
        cfg.use_lfi = j.value("use_lfi", cfg.use_lfi);
        cfg.use_stf = j.value("use_stf", cfg.use_stf);
        cfg.use_ltd = j.value("use_ltd", cfg.use_ltd);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config field: ") + e.what());
    }
    return cfg;
}

std::uint64_t config_hash(const ModelConfig& cfg) { return nn::fnv1a64(config_to_json(cfg)); }

namespace {

std::size_t mlp_count(const std::vector<std::size_t>& dims) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) n += dims[i] * dims[i + 1] + dims[i + 1];
    return n;
}

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> dims{in};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return dims;
}

std::vector<nn::Activation> hidden_acts(const std::vector<std::size_t>& dims) {
    return nn::relu_hidden(dims.size() - 1);
}

void validate(const ModelConfig& cfg) {
    if (cfg.encoder.channels == 0 || cfg.texture_dim == 0 || cfg.lfi_dim == 0 || cfg.phase_hidden == 0 ||
        cfg.fusion_hidden == 0) {
        throw ConfigError("model config: widths must be positive");
    }
    if (cfg.encoder.kernel % 2 == 0) throw ConfigError("model config: encoder kernel must be odd");
    if (cfg.block == 0) throw ConfigError("model config: retrieval block must be positive");
}

}  // namespace

ParameterCounts expected_parameter_counts(const ModelConfig& cfg) {
    ParameterCounts pc;
    const std::size_t c = cfg.encoder.channels, k2 = cfg.encoder.kernel * cfg.encoder.kernel, d = cfg.texture_dim;
    pc.encoder = (k2 * 3 * c + c) + 2 * cfg.encoder.n_blocks * (k2 * c * c + c) + (k2 * c * c + c);
    if (cfg.use_lfi) {
        const std::size_t groups = cfg.lfi_grouped ? 3 : 1;
        pc.lfi = (c * cfg.lfi_dim + cfg.lfi_dim) + groups * (c * cfg.lfi_dim + cfg.lfi_dim) + groups * (c * c + c);
    }
    if (cfg.uses_texture_learner()) {
        pc.texture = 3 * (9 * c * d + d) + mlp_count({2, cfg.phase_hidden, d});
    }
    pc.query = c * d + d;
    if (cfg.use_stf) pc.fusion = mlp_count({2 * d, cfg.fusion_hidden, d});
    pc.pixel_decoder = mlp_count(chain(d + kDecoderGeometryInputs, cfg.pixel_decoder_hidden, 3));
    if (cfg.use_ltd) pc.texture_decoder = mlp_count(chain(d, cfg.texture_decoder_hidden, 3));
    return pc;
}

template <typename T>
IsteModel<T>::IsteModel(ModelConfig cfg, nn::ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {}

template <typename T>
IsteModel<T> IsteModel<T>::create(const ModelConfig& cfg) {
    validate(cfg);
    nn::ParamStore<T> params(cfg.seed);
    const std::size_t c = cfg.encoder.channels, d = cfg.texture_dim;
    Encoder<T>::create(params, cfg.encoder);
    if (cfg.use_lfi) LfiParams<T>::create(params, c, cfg.lfi_dim, cfg.lfi_grouped);
    if (cfg.uses_texture_learner()) TextureLearner<T>::create(params, c, d, cfg.phase_hidden);
    StfParams<T>::create(params, c, d, cfg.fusion_hidden, cfg.use_stf);
    const auto pdims = chain(d + kDecoderGeometryInputs, cfg.pixel_decoder_hidden, 3);
    nn::Mlp<T>::create(params, "decoder.pixel", pdims, hidden_acts(pdims));
    if (cfg.use_ltd) {
        const auto tdims = chain(d, cfg.texture_decoder_hidden, 3);
        nn::Mlp<T>::create(params, "decoder.texture", tdims, hidden_acts(tdims));
    }
    IsteModel model(cfg, std::move(params));
    model.bind();
    return model;
}

template <typename T>
IsteModel<T> IsteModel<T>::from_params(const ModelConfig& cfg, nn::ParamStore<T> params) {
    validate(cfg);
    const IsteModel reference = create(cfg);
    const auto& want = reference.params().entries();
    const auto& have = params.entries();
    if (want.size() != have.size()) {
        throw CheckpointError("parameters do not match the model config: expected " + std::to_string(want.size()) +
                              " tensors, found " + std::to_string(have.size()));
    }
    for (const auto& [name, var] : want) {
        if (!params.contains(name)) throw CheckpointError("parameters do not match the model config: missing " + name);
        if (params.get(name).shape() != var.shape()) {
            throw CheckpointError("parameter " + name + " has shape " + shape_str(params.get(name).shape()) +
                                  ", config expects " + shape_str(var.shape()));
        }
    }
    IsteModel model(cfg, std::move(params));
    model.bind();
    return model;
}

template <typename T>
void IsteModel<T>::bind() {
    encoder_ = Encoder<T>::bind(params_, cfg_.encoder);
    if (cfg_.use_lfi) lfi_ = LfiParams<T>::bind(params_);
    if (cfg_.uses_texture_learner()) texture_ = TextureLearner<T>::bind(params_);
    stf_ = StfParams<T>::bind(params_, cfg_.use_stf);
    pixel_decoder_ = nn::Mlp<T>::bind(params_, "decoder.pixel", nn::relu_hidden(cfg_.pixel_decoder_hidden.size() + 1));
    if (cfg_.use_ltd) {
        texture_decoder_ =
            nn::Mlp<T>::bind(params_, "decoder.texture", nn::relu_hidden(cfg_.texture_decoder_hidden.size() + 1));
    }
}

template <typename T>
EncodedImage<T> IsteModel<T>::encode(const nn::Var<T>& image) const {
    EncodedImage<T> enc;
    enc.features = encoder_.encode(image);
    enc.h = image.dim(0);
    enc.w = image.dim(1);
    enc.pixel_features = cfg_.use_lfi ? lfi_attend(enc.features, lfi_).features : enc.features;
    if (cfg_.uses_texture_learner()) enc.texture_maps = texture_.maps(enc.features);
    return enc;
}

template <typename T>
ForwardResult<T> IsteModel<T>::decode(const EncodedImage<T>& enc, const CoordSet& coords,
                                      const RetrievalResult<T>* fixed) const {
    if (coords.lr_h != enc.h || coords.lr_w != enc.w) {
        throw ShapeError("forward: coordinate set built for a different LR size");
    }
    ForwardResult<T> out;
    nn::Var<T> texture;
    if (cfg_.uses_texture_learner()) {
        texture = texture_features(enc.texture_maps, coords, texture_.phase(coords.cell_pixels()));
    }
    nn::Var<T> fused;
    if (cfg_.use_stf) {
        StfOutput<T> stf = stf_forward(enc.pixel_features, texture, coords, stf_, cfg_.block, fixed);
        fused = stf.features;
        out.retrieval = std::move(stf.retrieval);
    } else {
        fused = lift_queries(enc.pixel_features, coords, stf_);
    }
    out.pixel = lpd_decode(fused, coords, pixel_decoder_);
    out.prediction = out.pixel;
    if (cfg_.use_ltd) {
        out.texture = ltd_decode(texture, texture_decoder_);
        out.prediction = nn::add(out.pixel, out.texture);
    }
    return out;
}

template <typename T>
ForwardResult<T> IsteModel<T>::forward(const nn::Var<T>& image, const CoordSet& coords) const {
    return decode(encode(image), coords);
}

std::vector<std::vector<std::size_t>> tile_order_blocks(std::size_t hr_h, std::size_t hr_w, std::size_t tile) {
    if (tile == 0) throw ConfigError("tile_order_blocks: tile must be positive");
    std::vector<std::vector<std::size_t>> blocks;
    for (std::size_t y0 = 0; y0 < hr_h; y0 += tile) {
        for (std::size_t x0 = 0; x0 < hr_w; x0 += tile) {
            std::vector<std::size_t> b;
            for (std::size_t y = y0; y < std::min(hr_h, y0 + tile); ++y)
                for (std::size_t x = x0; x < std::min(hr_w, x0 + tile); ++x) b.push_back(y * hr_w + x);
            blocks.push_back(std::move(b));
        }
    }
    return blocks;
}

template <typename T>
Tensor<T> IsteModel<T>::decode_grid(const EncodedImage<T>& enc, const CoordSet& grid) const {
    Tensor<T> out({grid.hr_h, grid.hr_w, 3});
    const auto tile = static_cast<std::size_t>(std::sqrt(static_cast<double>(cfg_.block)));
    for (const auto& block : tile_order_blocks(grid.hr_h, grid.hr_w, std::max<std::size_t>(1, tile))) {
        const ForwardResult<T> r = decode(enc, grid.select(block));
        const Tensor<T>& pred = r.prediction.value();
        for (std::size_t i = 0; i < block.size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) out[block[i] * 3 + c] = std::clamp(pred.at(i, c), T(0), T(1));
    }
    return out;
}

template <typename T>
Tensor<T> IsteModel<T>::predict_image(const Tensor<T>& image, double scale) const {
    if (!(scale >= 1.0 && scale <= kMaxInferenceScale)) {
        throw ConfigError("scale must lie in [1, 12], got " + std::to_string(scale));
    }
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("predict_image: expected an (h, w, 3) image");
    nn::NoGradGuard no_grad;
    const EncodedImage<T> enc = encode(nn::constant(image));
    return decode_grid(enc, make_coord_set(image.dim(0), image.dim(1), scale));
}

template <typename T>
Tensor<T> IsteModel<T>::predict_region(const Tensor<T>& image, double y0, double x0, double h, double w,
                                       std::size_t out_h, std::size_t out_w) const {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("predict_region: expected an (h, w, 3) image");
    const auto ih = static_cast<double>(image.dim(0)), iw = static_cast<double>(image.dim(1));
    if (!(h > 0 && w > 0 && y0 >= 0 && x0 >= 0 && y0 + h <= ih && x0 + w <= iw) || out_h == 0 || out_w == 0) {
        throw RangeError("predict_region: rectangle outside the image");
    }
    const double sy = static_cast<double>(out_h) / h, sx = static_cast<double>(out_w) / w;
    if (!(sy >= 1.0 - 1e-9 && sx >= 1.0 - 1e-9 && sy <= kMaxInferenceScale + 1e-9 && sx <= kMaxInferenceScale + 1e-9)) {
        throw ConfigError("predict_region: output density must lie in [1, 12] pixels per input pixel");
    }
    std::vector<Point2> coords;
    coords.reserve(out_h * out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        const double y = std::clamp((y0 + (static_cast<double>(i) + 0.5) / sy) / ih * 2.0 - 1.0, -1.0, 1.0);
        for (std::size_t j = 0; j < out_w; ++j) {
            coords.push_back({y, std::clamp((x0 + (static_cast<double>(j) + 0.5) / sx) / iw * 2.0 - 1.0, -1.0, 1.0)});
        }
    }
    nn::NoGradGuard no_grad;
    const EncodedImage<T> enc = encode(nn::constant(image));
    CoordSet grid = make_coord_set(image.dim(0), image.dim(1), std::max(image.dim(0), scaled_extent(image.dim(0), sy)),
                                   std::max(image.dim(1), scaled_extent(image.dim(1), sx)), std::move(coords));
    grid.hr_h = out_h;
    grid.hr_w = out_w;
    grid.scale = sy;
    grid.cell = {2.0 / (sy * ih), 2.0 / (sx * iw)};
    return decode_grid(enc, grid);
}

template <typename T>
void IsteModel<T>::save(const std::filesystem::path& path) const {
    nn::save_checkpoint(params_, path, config_to_json(cfg_), config_hash(cfg_));
}

template <typename T>
IsteModel<T> IsteModel<T>::load(const std::filesystem::path& path) {
    nn::Checkpoint<T> ck = nn::load_checkpoint<T>(path);
    const ModelConfig cfg = config_from_json(ck.config_json);
    if (config_hash(cfg) != ck.config_hash) {
        throw CheckpointError(path.string() + ": stored config does not match its hash");
    }
    return from_params(cfg, std::move(ck.params));
}

template class IsteModel<float>;
template class IsteModel<double>;

}  // namespace iste
