#include "iste/stf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace iste {

namespace {

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out = x;
    for (std::size_t r = 0; r < n; ++r) {
        T* row = out.data() + r * d;
        T ss = 0;
        for (std::size_t c = 0; c < d; ++c) ss += row[c] * row[c];
        const T norm = std::max(std::sqrt(ss), static_cast<T>(kNormEpsilon));
        for (std::size_t c = 0; c < d; ++c) row[c] /= norm;
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& queries, const Tensor<T>& keys) {
    if (queries.rank() != 2 || keys.rank() != 2 || queries.dim(1) != keys.dim(1)) {
        throw ShapeError("similarity_matrix: queries " + shape_str(queries.shape()) + " and keys " +
                         shape_str(keys.shape()) + " must be matrices of equal width");
    }
    const std::size_t n = queries.dim(0), m = keys.dim(0), d = queries.dim(1);
    const Tensor<T> qn = normalize_rows(queries), kn = normalize_rows(keys);
    Tensor<T> r({n, m});
    nn::gemm<T>(false, true, n, m, d, T(1), qn.data(), d, kn.data(), d, T(0), r.data(), m);
    for (auto& v : r.vec()) v = std::clamp(v, T(-1), T(1));
    return r;
}

template <typename T>
RetrievalResult<T> retrieve(const Tensor<T>& similarity, const Tensor<T>& values) {
    if (similarity.rank() != 2) throw ShapeError("retrieve: similarity must be a matrix");
    const std::size_t n = similarity.dim(0), m = similarity.dim(1);
    const bool gather = !values.empty();
    if (gather && (values.rank() != 2 || values.dim(0) != m)) {
        throw ShapeError("retrieve: value rows must match similarity columns");
    }
    RetrievalResult<T> out;
    out.index.resize(n);
    out.confidence.resize(n);
    const std::size_t d = gather ? values.dim(1) : 0;
    if (gather) out.retrieved = Tensor<T>({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = similarity.data() + i * m;
        std::size_t best = 0;
        for (std::size_t j = 1; j < m; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out.index[i] = best;
        out.confidence[i] = m ? row[best] : T(0);
        if (gather) std::copy_n(values.data() + best * d, d, out.retrieved.data() + i * d);
    }
    return out;
}

template <typename T>
StfParams<T> StfParams<T>::create(nn::ParamStore<T>& params, std::size_t in_channels, std::size_t texture_dim,
                                  std::size_t fusion_hidden, bool with_fusion) {
    StfParams p;
    const T bound = static_cast<T>(std::sqrt(3.0 / static_cast<double>(in_channels)));
    p.query = {params.add_uniform("stf.query.weight", {in_channels, texture_dim}, bound),
               params.add_zeros("stf.query.bias", {texture_dim})};
    if (with_fusion) {
        p.fusion = nn::Mlp<T>::create(params, "stf.fuse", {2 * texture_dim, fusion_hidden, texture_dim},
                                      nn::relu_hidden(2));
    }
    return p;
}

template <typename T>
StfParams<T> StfParams<T>::bind(const nn::ParamStore<T>& params, bool with_fusion) {
    StfParams p;
    p.query = {params.get("stf.query.weight"), params.get("stf.query.bias")};
    if (with_fusion) p.fusion = nn::Mlp<T>::bind(params, "stf.fuse", nn::relu_hidden(2));
    return p;
}

template <typename T>
nn::Var<T> fuse(const nn::Var<T>& queries, const nn::Var<T>& retrieved, const std::vector<T>& confidence,
                const nn::Mlp<T>& fusion) {
    if (queries.shape() != retrieved.shape()) throw ShapeError("fuse: queries and retrieved features differ in shape");
    if (confidence.size() != queries.dim(0)) throw ShapeError("fuse: one confidence per query required");
    if (fusion.in_dim() != 2 * queries.dim(1)) throw ShapeError("fuse: fusion MLP input must be twice the query width");
    const nn::Var<T> z = nn::mlp_forward(nn::concat_cols<T>({queries, retrieved}), fusion);
    Tensor<T> s({confidence.size(), 1}, confidence);
    return nn::add(queries, nn::scale_rows(z, nn::constant(std::move(s))));
}

template <typename T>
nn::Var<T> lift_queries(const nn::Var<T>& pixel_features, const CoordSet& coords, const StfParams<T>& params) {
    const Shape& s = pixel_features.shape();
    if (s.size() != 3 || s[0] != coords.lr_h || s[1] != coords.lr_w) {
        throw ShapeError("lift_queries: pixel features do not match the coordinate set's LR grid");
    }
    const nn::Var<T> sampled = nn::gather_rows(nn::reshape(pixel_features, {s[0] * s[1], s[2]}), coords.nearest_index);
    return nn::linear(sampled, params.query.weight, params.query.bias);
}

template <typename T>
StfOutput<T> stf_forward(const nn::Var<T>& pixel_features, const nn::Var<T>& texture, const CoordSet& coords,
                         const StfParams<T>& params, std::size_t block, const RetrievalResult<T>* fixed) {
    const std::size_t n = coords.size();
    if (texture.shape().size() != 2 || texture.dim(0) != n) {
        throw ShapeError("stf_forward: texture features must be aligned with the coordinates");
    }
    if (!params.has_fusion()) throw ConfigError("stf_forward: fusion MLP missing");
    if (block == 0) throw ConfigError("stf_forward: block size must be positive");
    StfOutput<T> out;
    if (n == 0) {
        out.features = nn::constant(Tensor<T>({0, texture.dim(1)}));
        return out;
    }
    const nn::Var<T> q = lift_queries(pixel_features, coords, params);
    const std::size_t d = q.dim(1);
    if (texture.dim(1) != d) throw ShapeError("stf_forward: query and texture widths differ");

    if (fixed != nullptr) {
        if (fixed->index.size() != n || fixed->confidence.size() != n) {
            throw ShapeError("stf_forward: fixed retrieval does not match the coordinates");
        }
        out.retrieval.index = fixed->index;
        out.retrieval.confidence = fixed->confidence;
    } else {
        out.retrieval.index.resize(n);
        out.retrieval.confidence.resize(n);
    }
    for (std::size_t b0 = 0; fixed == nullptr && b0 < n; b0 += block) {
        const std::size_t b1 = std::min(n, b0 + block);
        Tensor<T> qb({b1 - b0, d}), kb({b1 - b0, d});
        std::copy_n(q.value().data() + b0 * d, (b1 - b0) * d, qb.data());
        std::copy_n(texture.value().data() + b0 * d, (b1 - b0) * d, kb.data());
        const RetrievalResult<T> r = retrieve(similarity_matrix(qb, kb), Tensor<T>());
        for (std::size_t i = 0; i < b1 - b0; ++i) {
            out.retrieval.index[b0 + i] = b0 + r.index[i];
            out.retrieval.confidence[b0 + i] = r.confidence[i];
        }
    }
    const nn::Var<T> retrieved = nn::gather_rows(texture, out.retrieval.index);
    out.features = fuse(q, retrieved, out.retrieval.confidence, params.fusion);
    return out;
}

template Tensor<float> similarity_matrix<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> similarity_matrix<double>(const Tensor<double>&, const Tensor<double>&);
template RetrievalResult<float> retrieve<float>(const Tensor<float>&, const Tensor<float>&);
template RetrievalResult<double> retrieve<double>(const Tensor<double>&, const Tensor<double>&);
template struct StfParams<float>;
template struct StfParams<double>;
template nn::Var<float> fuse<float>(const nn::Var<float>&, const nn::Var<float>&, const std::vector<float>&,
                                    const nn::Mlp<float>&);
template nn::Var<double> fuse<double>(const nn::Var<double>&, const nn::Var<double>&, const std::vector<double>&,
                                      const nn::Mlp<double>&);
template nn::Var<float> lift_queries<float>(const nn::Var<float>&, const CoordSet&, const StfParams<float>&);
template nn::Var<double> lift_queries<double>(const nn::Var<double>&, const CoordSet&, const StfParams<double>&);
template StfOutput<float> stf_forward<float>(const nn::Var<float>&, const nn::Var<float>&, const CoordSet&,
                                             const StfParams<float>&, std::size_t,
                                             const RetrievalResult<float>*);
template StfOutput<double> stf_forward<double>(const nn::Var<double>&, const nn::Var<double>&, const CoordSet&,
                                               const StfParams<double>&, std::size_t,
                                               const RetrievalResult<double>*);

}  // namespace iste
