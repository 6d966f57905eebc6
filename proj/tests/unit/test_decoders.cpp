#include <cmath>
#include <random>

#include "doctest.h"
#include "iste/decoders.hpp"
#include "iste/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace iste;
using iste::test::leaf;
using iste::test::max_grad_error;
using iste::test::project;
using iste::test::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.encoder = {4, 1, 3};
    c.lfi_dim = 4;
    c.texture_dim = 6;
    c.phase_hidden = 4;
    c.fusion_hidden = 6;
    c.pixel_decoder_hidden = {8};
    c.texture_decoder_hidden = {5};
    c.block = 16;
    c.seed = 21;
    return c;
}

std::size_t linear_count(std::size_t din, std::size_t dout) { return din * dout + dout; }

}  // namespace

TEST_SUITE("implicit-decoders") {

TEST_CASE("pixel centers") {
    CHECK(pixel_centers(1) == std::vector<double>{0.0});
    CHECK(pixel_centers(2) == std::vector<double>{-0.5, 0.5});
    CHECK(pixel_centers(4) == std::vector<double>{-0.75, -0.25, 0.25, 0.75});
    const auto c = pixel_centers(7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(c[i] == doctest::Approx(-c[6 - i]));
        if (i) CHECK(c[i] > c[i - 1]);
    }
    CHECK_THROWS_AS(pixel_centers(0), RangeError);
}

TEST_CASE("scale one gives an all-zero local grid") {
    const auto cs = make_coord_set(5, 7, 1.0);
    CHECK(cs.hr_h == 5);
    CHECK(cs.hr_w == 7);
    for (const auto& g : cs.local_grid) {
        CHECK(g.y == 0.0);
        CHECK(g.x == 0.0);
    }
}

TEST_CASE("2x2 at scale 2: corner HR pixel") {
    const auto cs = make_coord_set(2, 2, 2.0);
    CHECK(cs.hr_h == 4);
    CHECK(cs.hr_w == 4);
    CHECK(cs.hr[0] == Point2{-0.75, -0.75});
    CHECK(cs.nearest_lr[0] == Point2{-0.5, -0.5});
    CHECK(cs.local_grid[0] == Point2{-0.25, -0.25});
    CHECK(cs.nearest_index[15] == 3);
}

TEST_CASE("cell size for a 96x96 HR grid") {
    const auto cs = make_coord_set(48, 48, 2.0);
    CHECK(cs.cell.y == 2.0 / 96.0);
    CHECK(cs.cell.x == 2.0 / 96.0);
    CHECK(cs.cell_pixels().y == doctest::Approx(0.5));
}

TEST_CASE("nearest LR center minimises the L-inf distance and bounds the local grid") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Point2> pts(2000);
    for (auto& p : pts) p = {u(rng), u(rng)};
    const auto cs = make_coord_set(7, 5, 30, 20, pts);
    const auto ys = pixel_centers(7), xs = pixel_centers(5);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = 1e9;
        for (double y : ys)
            for (double x : xs) best = std::min(best, std::max(std::abs(pts[i].y - y), std::abs(pts[i].x - x)));
        const double got = std::max(std::abs(cs.local_grid[i].y), std::abs(cs.local_grid[i].x));
        CHECK(got == doctest::Approx(best));
        CHECK(std::abs(cs.local_grid[i].y) <= 1.0 / 7.0 + 1e-12);
        CHECK(std::abs(cs.local_grid[i].x) <= 1.0 / 5.0 + 1e-12);
    }
}

TEST_CASE("scale below one and empty grids are rejected") {
    CHECK_THROWS_AS(make_coord_set(4, 4, 0.9), RangeError);
    CHECK_THROWS_AS(make_coord_set(0, 4, 2.0), RangeError);
}

TEST_CASE("HR extents use round-half-up") {
    CHECK(scaled_extent(48, 6.7) == 322);
    CHECK(scaled_extent(48, 1.3) == 62);
    CHECK(scaled_extent(3, 2.5) == 8);
    CHECK(scaled_extent(1, 1.5) == 2);
}

TEST_CASE("ensemble weights at the centroid are a quarter each") {
    // Centroid of the four centers around (0, 0) on a 4x4 grid.
    const auto ew = ensemble_weights({0.0, 0.0}, 4, 4);
    for (int t = 0; t < 4; ++t) CHECK(ew.weight[t] == doctest::Approx(0.25));
    CHECK(ew.total_area > 0.0);
}

TEST_CASE("query on a corner puts all weight on that corner's term") {
    const auto c = pixel_centers(4);
    const auto ew = ensemble_weights({c[1], c[2]}, 4, 4);
    CHECK(ew.corner[0] == Point2{c[1], c[2]});
    CHECK(ew.weight[0] == doctest::Approx(1.0));
    for (int t = 1; t < 4; ++t) CHECK(ew.weight[t] == doctest::Approx(0.0));
    CHECK(ew.offset[0] == Point2{0.0, 0.0});
}

TEST_CASE("ensemble weights equal bilinear coefficients") {
    std::mt19937_64 rng(2);
    const std::size_t h = 6, w = 9;
    const auto ys = pixel_centers(h), xs = pixel_centers(w);
    std::uniform_real_distribution<double> uy(ys.front(), ys.back()), ux(xs.front(), xs.back());
    for (int it = 0; it < 500; ++it) {
        Point2 q{uy(rng), ux(rng)};
        if (it % 10 == 0) q.y = ys.back();  // border: two terms share a corner
        if (it % 15 == 0) q.x = xs.front();
        const auto ew = ensemble_weights(q, h, w);
        std::vector<double> per_pixel(h * w, 0.0);
        for (int t = 0; t < 4; ++t) {
            per_pixel[ew.corner_index[t]] += ew.weight[t];
            CHECK(ew.offset[t].y == doctest::Approx(q.y - ys[ew.corner_index[t] / w]));
        }
        for (std::size_t j = 0; j < h * w; ++j)
            CHECK(std::abs(per_pixel[j] - oracle::bilinear_coefficient(q.y, q.x, h, w, j / w, j % w)) < 1e-9);
    }
}

TEST_CASE("ensemble weights form a partition of unity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const auto ew = ensemble_weights({u(rng), u(rng)}, 1 + i % 13, 1 + i % 7);
        double s = 0.0, area = 0.0;
        for (int t = 0; t < 4; ++t) {
            CHECK_MESSAGE(ew.weight[t] >= 0.0, "negative weight");
            s += ew.weight[t];
            area += ew.area[t];
        }
        worst = std::max(worst, std::abs(s - 1.0));
        if (ew.total_area > 0.0) worst = std::max(worst, std::abs(area / ew.total_area - 1.0));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("lpd equals an explicit four-term weighted sum") {
    nn::ParamStore<double> ps(4);
    auto f = nn::Mlp<double>::create(ps, "f", {5 + 4, 7, 3}, nn::relu_hidden(2));
    std::mt19937_64 rng(5);
    for (auto& l : f.layers) l.bias.mutable_value() = random_tensor(l.bias.shape(), rng);
    const auto cs = make_coord_set(3, 4, 2.3);
    const auto feats = random_tensor({cs.size(), 5}, rng);
    const auto out = lpd_decode(nn::constant(feats), cs, f);
    const auto& w1 = f.layers[0].weight.value();
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const auto ew = ensemble_weights(cs.hr[i], 3, 4);
        double want[3] = {0, 0, 0}, opp_area[4], total = 0;
        for (int t = 0; t < 4; ++t) {
            const Point2 o = ew.corner[3 - t];
            total += opp_area[t] = std::abs(cs.hr[i].y - o.y) * std::abs(cs.hr[i].x - o.x);
        }
        for (int t = 0; t < 4; ++t) {
            std::vector<double> in(feats.data() + i * 5, feats.data() + i * 5 + 5);
            in.push_back(ew.offset[t].y * 3.0 / 2.0);
            in.push_back(ew.offset[t].x * 4.0 / 2.0);
            in.push_back(cs.cell.y * 3.0 / 2.0);
            in.push_back(cs.cell.x * 4.0 / 2.0);
            std::vector<double> hid(7);
            for (std::size_t j = 0; j < 7; ++j) {
                double a = f.layers[0].bias.value()[j];
                for (std::size_t k = 0; k < 9; ++k) a += in[k] * w1.at(k, j);
                hid[j] = std::max(a, 0.0);
            }
            for (std::size_t c = 0; c < 3; ++c) {
                double a = f.layers[1].bias.value()[c];
                for (std::size_t j = 0; j < 7; ++j) a += hid[j] * f.layers[1].weight.value().at(j, c);
                want[c] += opp_area[t] / total * a;
            }
        }
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.value().at(i, c) - want[c]) < 1e-6);
    }
}

TEST_CASE("lpd collapses to one evaluation when offsets are ignored") {
    nn::ParamStore<double> ps(6);
    auto f = nn::Mlp<double>::create(ps, "f", {3 + 4, 5, 2}, nn::relu_hidden(2));
    auto& w = f.layers[0].weight.mutable_value();
    for (std::size_t j = 0; j < 5; ++j) {
        w.at(3, j) = 0.0;
        w.at(4, j) = 0.0;
    }
    std::mt19937_64 rng(7);
    const auto cs = make_coord_set(4, 4, 3.0);
    const auto feats = random_tensor({cs.size(), 3}, rng);
    const auto out = lpd_decode(nn::constant(feats), cs, f);
    Tensor<double> in({cs.size(), 7});
    const auto geom = decoder_geometry<double>(cs, 0);
    for (std::size_t i = 0; i < cs.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) in.at(i, k) = feats.at(i, k);
        for (std::size_t k = 0; k < 4; ++k) in.at(i, 3 + k) = geom.at(i, k);
    }
    const auto single = nn::mlp_forward(nn::constant(in), f);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.value()[i] == doctest::Approx(single.value()[i]).epsilon(1e-12));
}

TEST_CASE("lpd at an LR center equals the single corner evaluation") {
    nn::ParamStore<double> ps(8);
    auto f = nn::Mlp<double>::create(ps, "f", {2 + 4, 4, 3}, nn::relu_hidden(2));
    const auto cs = make_coord_set(4, 4, 1.0);  // every HR pixel sits on an LR center
    std::mt19937_64 rng(9);
    const auto feats = random_tensor({cs.size(), 2}, rng);
    const auto out = lpd_decode(nn::constant(feats), cs, f);
    Tensor<double> in({cs.size(), 6});
    for (std::size_t i = 0; i < cs.size(); ++i) {
        in.at(i, 0) = feats.at(i, 0);
        in.at(i, 1) = feats.at(i, 1);
        in.at(i, 4) = cs.cell_pixels().y;
        in.at(i, 5) = cs.cell_pixels().x;
    }
    const auto single = nn::mlp_forward(nn::constant(in), f);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.value()[i] == doctest::Approx(single.value()[i]).epsilon(1e-9));
}

TEST_CASE("ltd single evaluation equals the four-term form") {
    nn::ParamStore<float> ps(10);
    auto g = nn::Mlp<float>::create(ps, "g", {6, 5, 3}, nn::relu_hidden(2));
    std::mt19937_64 rng(11);
    const auto cs = make_coord_set(5, 5, 2.7);
    const auto tex = random_tensor({cs.size(), 6}, rng).cast<float>();
    const auto single = ltd_decode(nn::constant(tex), g).value();
    const auto term = nn::mlp_forward(nn::constant(tex), g).value();
    const auto weights = corner_weights(cs);
    for (std::size_t i = 0; i < cs.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            float four = 0.f;
            for (int t = 0; t < 4; ++t) four += static_cast<float>(weights.at(i, t)) * term.at(i, c);
            CHECK(std::abs(four - single.at(i, c)) <= 1e-7f * std::max(1.f, std::abs(single.at(i, c))) * 4);
        }
    for (auto& l : g.layers) l.weight.mutable_value().fill(0.f);
    g.layers.back().bias.mutable_value() = Tensor<float>({3}, std::vector<float>{0.1f, 0.2f, 0.3f});
    const auto biased = ltd_decode(nn::constant(tex), g).value();
    for (std::size_t i = 0; i < cs.size(); ++i) CHECK(biased.at(i, 2) == 0.3f);
}

TEST_CASE("gradients through lpd and ltd match finite differences") {
    nn::ParamStore<double> ps(13);
    auto f = nn::Mlp<double>::create(ps, "f", {3 + 4, 6, 3}, nn::relu_hidden(2));
    auto g = nn::Mlp<double>::create(ps, "g", {5, 6, 3}, nn::relu_hidden(2));
    std::mt19937_64 rng(14);
    for (const auto& [name, v] : ps.entries()) v.node()->value = random_tensor(v.shape(), rng);
    const auto cs = make_coord_set(4, 5, 1.7);
    auto feats = leaf(random_tensor({cs.size(), 3}, rng));
    auto tex = leaf(random_tensor({cs.size(), 5}, rng));
    std::vector<nn::Var<double>> inputs{feats, tex};
    for (const auto& [name, v] : ps.entries()) inputs.push_back(v);
    CHECK(max_grad_error(inputs, [&] { return project(lpd_decode(feats, cs, f)); }) < 1e-4);
    CHECK(max_grad_error(inputs, [&] { return project(ltd_decode(tex, g)); }) < 1e-4);
}

TEST_CASE("variants: flags and predictions") {
    const auto base = tiny_config();
    CHECK_THROWS_AS(apply_variant(base, "no-encoder"), ConfigError);
    std::mt19937_64 rng(12);
    const auto img = test::random_image(8, 8, rng);
    const auto cs = make_coord_set(8, 8, 2.0);
    for (const auto& v : variant_names()) {
        const auto cfg = apply_variant(base, v);
        auto model = IsteModel<float>::create(cfg);
        const auto r = model.forward(img, cs);
        CHECK(r.prediction.shape() == Shape{256, 3});
        for (const float x : r.prediction.value().vec()) CHECK(std::isfinite(x));
        if (!cfg.use_ltd) {
            CHECK(!r.texture);
            CHECK(r.prediction.value() == r.pixel.value());
        } else {
            for (std::size_t i = 0; i < r.prediction.numel(); ++i) {
                CHECK(r.prediction.value()[i] == doctest::Approx(r.pixel.value()[i] + r.texture.value()[i]));
            }
        }
        CHECK(r.retrieval.index.empty() == !cfg.use_stf);
    }
}

TEST_CASE("full model at default width on 8x8 at scale 2 gives 256 finite rows") {
    ModelConfig cfg;
    auto model = IsteModel<float>::create(cfg);
    std::mt19937_64 rng(13);
    const auto r = model.forward(test::random_image(8, 8, rng), make_coord_set(8, 8, 2.0));
    CHECK(r.prediction.dim(0) == 256);
    for (const float x : r.prediction.value().vec()) CHECK(std::isfinite(x));
}

TEST_CASE("parameter counts follow the module inventory") {
    for (const bool grouped : {false, true}) {
        ModelConfig cfg;
        cfg.lfi_grouped = grouped;
        const std::size_t c = 64, d = 256;
        const std::size_t encoder = linear_count(27, c) + 2 * 4 * linear_count(9 * c, c) + linear_count(9 * c, c);
        const std::size_t groups = grouped ? 3 : 1;
        const std::size_t lfi = linear_count(c, 64) + groups * (linear_count(c, 64) + linear_count(c, c));
        const std::size_t texture = 3 * linear_count(9 * c, d) + linear_count(2, 64) + linear_count(64, d);
        const std::size_t query = linear_count(c, d);
        const std::size_t fusion = linear_count(2 * d, 256) + linear_count(256, d);
        const std::size_t lpd = linear_count(d + 4, 256) + 2 * linear_count(256, 256) + linear_count(256, 3);
        const std::size_t ltd = linear_count(d, 256) + linear_count(256, 3);
        const std::size_t full = encoder + lfi + texture + query + fusion + lpd + ltd;
        const std::map<std::string, std::size_t> want{
            {"full", full}, {"no-lfi", full - lfi}, {"no-stf", full - fusion}, {"no-ltd", full - ltd}};
        for (const auto& v : variant_names()) {
            const auto vc = apply_variant(cfg, v);
            CHECK(IsteModel<float>::create(vc).params().count() == want.at(v));
            CHECK(expected_parameter_counts(vc).total() == want.at(v));
        }
    }
}

TEST_CASE("predict_image output extents") {
    auto model = IsteModel<float>::create(tiny_config());
    std::mt19937_64 rng(14);
    const auto img = test::random_image(48, 48, rng);
    CHECK(model.predict_image(img, 2.0).shape() == Shape{96, 96, 3});
    CHECK(model.predict_image(img, 1.0).shape() == Shape{48, 48, 3});
    const auto big = model.predict_image(img, 6.7);
    CHECK(big.shape() == Shape{322, 322, 3});
    for (const float v : big.vec()) CHECK((v >= 0.f && v <= 1.f));
    const auto small = test::random_image(9, 8, rng);
    CHECK(model.predict_image(small, 12.0).shape() == Shape{108, 96, 3});
    CHECK_THROWS_AS(model.predict_image(small, 12.5), ConfigError);
    CHECK_THROWS_AS(model.predict_image(small, 0.5), ConfigError);
}

TEST_CASE("predict_image tiles agree with one unblocked pass when blocks cover the image") {
    auto cfg = tiny_config();
    cfg.block = 10000;
    auto model = IsteModel<float>::create(cfg);
    std::mt19937_64 rng(15);
    const auto img = test::random_image(12, 10, rng);
    const auto cs = make_coord_set(12, 10, 2.5);
    const auto direct = model.forward(img, cs).prediction.value();
    const auto tiled = model.predict_image(img, 2.5);
    for (std::size_t i = 0; i < direct.numel(); ++i) {
        CHECK(tiled[i] == doctest::Approx(std::clamp(direct[i], 0.f, 1.f)).epsilon(1e-6));
    }
}

TEST_CASE("forward is deterministic") {
    auto a = IsteModel<float>::create(tiny_config());
    auto b = IsteModel<float>::create(tiny_config());
    std::mt19937_64 rng(16);
    const auto img = test::random_image(8, 9, rng);
    const auto cs = make_coord_set(8, 9, 3.1);
    CHECK(a.forward(img, cs).prediction.value() == b.forward(img, cs).prediction.value());
    CHECK(a.forward(img, cs).prediction.value() == a.forward(img, cs).prediction.value());
}

TEST_CASE("end-to-end gradients match finite differences for every variant") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-0.95, 0.95);
    std::vector<Point2> pts(16);
    for (auto& p : pts) p = {u(rng), u(rng)};
    const auto cs = make_coord_set(8, 8, 20, 20, pts);
    for (const auto& v : variant_names()) {
        CAPTURE(v);
        auto model = IsteModel<double>::create(apply_variant(tiny_config(), v));
        for (const auto& [name, p] : model.params().entries()) {
            if (name.ends_with(".bias")) p.node()->value = random_tensor(p.shape(), rng, -0.1, 0.1);
        }
        auto img = leaf(random_tensor({8, 8, 3}, rng, 0.0, 1.0));
        const auto frozen = model.forward(img, cs).retrieval;
        std::vector<nn::Var<double>> inputs{img};
        for (const auto& [name, p] : model.params().entries()) inputs.push_back(p);
        const double err = max_grad_error(
            inputs, [&] { return project(model.decode(model.encode(img), cs, frozen.index.empty() ? nullptr : &frozen).prediction); },
            6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("config json round trip, hash and strict keys") {
    auto cfg = tiny_config();
    cfg.use_stf = false;
    const auto back = config_from_json(config_to_json(cfg));
    CHECK(back == cfg);
    CHECK(config_hash(back) == config_hash(cfg));
    auto other = cfg;
    other.texture_dim = 8;
    CHECK(config_hash(other) != config_hash(cfg));
    CHECK_THROWS_AS(config_from_json("{\"texture_dims\": 3}"), ConfigError);
}

TEST_CASE("checkpoints reject a model with different flags") {
    test::TempDir dir("model");
    auto model = IsteModel<float>::create(tiny_config());
    model.save(dir / "m.iste");
    const auto loaded = IsteModel<float>::load(dir / "m.iste");
    CHECK(loaded.config() == model.config());
    std::mt19937_64 rng(18);
    const auto img = test::random_image(8, 8, rng);
    CHECK(loaded.predict_image(img, 2.0) == model.predict_image(img, 2.0));
    auto params = model.params().cast<float>();
    CHECK_THROWS_AS(IsteModel<float>::from_params(apply_variant(tiny_config(), "no-lfi"), std::move(params)),
                    CheckpointError);
    auto again = model.params().cast<float>();
    CHECK_THROWS_AS(IsteModel<float>::from_params(apply_variant(tiny_config(), "no-ltd"), std::move(again)),
                    CheckpointError);
}

}
