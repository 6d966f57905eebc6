#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "iste/texture_learner.hpp"
#include "support.hpp"

using namespace iste;
using iste::test::leaf;
using iste::test::max_grad_error;
using iste::test::project;
using iste::test::random_tensor;

namespace {

TextureFieldMaps<double> const_maps(const Tensor<double>& amp, const Tensor<double>& fx, const Tensor<double>& fy) {
    return {nn::constant(amp), nn::constant(fx), nn::constant(fy)};
}

nn::Var<double> phase_row(std::size_t d, double v) { return nn::constant(Tensor<double>({1, d}, v)); }

}  // namespace

TEST_SUITE("texture-learner") {

TEST_CASE("scalar texture value") {
    CHECK(texture_value(2.0, 3.0, 0.0, 0.1, 0.0, 0.5) == doctest::Approx(2.0 * std::sin(0.8)));
    CHECK(texture_value(2.0, 3.0, 0.0, 0.1, 0.0, 0.5) == doctest::Approx(1.43471).epsilon(1e-5));
    CHECK(texture_value(5.0, 9.0, -4.0, 0.0, 0.0, 0.0) == 0.0);
}

TEST_CASE("aligned grid with zero phase gives zero features") {
    std::mt19937_64 rng(1);
    const auto cs = make_coord_set(4, 5, 1.0);
    const auto m = const_maps(random_tensor({4, 5, 6}, rng), random_tensor({4, 5, 6}, rng), random_tensor({4, 5, 6}, rng));
    const auto f = texture_features(m, cs, phase_row(6, 0.0));
    REQUIRE(f.shape() == Shape{20, 6});
    for (const double v : f.value().vec()) CHECK(v == 0.0);
}

TEST_CASE("aligned grid gives amp times sin(phase), constant per LR pixel") {
    std::mt19937_64 rng(2);
    const auto amp = random_tensor({3, 3, 4}, rng);
    const auto cs = make_coord_set(3, 3, 1.0);
    const auto f = texture_features(const_maps(amp, random_tensor({3, 3, 4}, rng), random_tensor({3, 3, 4}, rng)), cs,
                                    phase_row(4, 0.3));
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t k = 0; k < 4; ++k) CHECK(f.value().at(i, k) == doctest::Approx(amp[i * 4 + k] * std::sin(0.3)));
}

TEST_CASE("features match the scalar formula at a non-integer scale") {
    std::mt19937_64 rng(3);
    const auto amp = random_tensor({4, 4, 3}, rng), fx = random_tensor({4, 4, 3}, rng, -5, 5),
               fy = random_tensor({4, 4, 3}, rng, -5, 5);
    const auto ph = random_tensor({1, 3}, rng, 0, 1);
    const auto cs = make_coord_set(4, 4, 2.5);
    const auto f = texture_features(const_maps(amp, fx, fy), cs, nn::constant(ph));
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const std::size_t j = cs.nearest_index[i];
        const double dy = (cs.hr[i].y - cs.nearest_lr[i].y) * 2.0, dx = (cs.hr[i].x - cs.nearest_lr[i].x) * 2.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double want = texture_value(amp[j * 3 + k], fx[j * 3 + k], fy[j * 3 + k], dx, dy, ph[k]);
            CHECK(std::abs(f.value().at(i, k) - want) < 1e-12);
            CHECK(std::abs(f.value().at(i, k)) <= std::abs(amp[j * 3 + k]) + 1e-15);
        }
    }
}

TEST_CASE("shifting the phase by 2 pi leaves the features unchanged") {
    std::mt19937_64 rng(4);
    const auto m = const_maps(random_tensor({3, 4, 5}, rng), random_tensor({3, 4, 5}, rng, -4, 4),
                              random_tensor({3, 4, 5}, rng, -4, 4));
    const auto cs = make_coord_set(3, 4, 3.3);
    const auto ph = random_tensor({1, 5}, rng, 0, 1);
    auto shifted = ph;
    for (auto& v : shifted.vec()) v += 2.0 * std::numbers::pi;
    const auto a = texture_features(m, cs, nn::constant(ph)).value();
    const auto b = texture_features(m, cs, nn::constant(shifted)).value();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("coordinates outside the domain are rejected") {
    auto cs = make_coord_set(3, 3, 2.0);
    cs.hr[0].x = 1.25;
    const Tensor<double> z({3, 3, 2});
    CHECK_THROWS_AS(texture_features(const_maps(z, z, z), cs, phase_row(2, 0.0)), RangeError);
    CHECK_THROWS_AS(make_coord_set(3, 3, 6, 6, {{0.0, -1.5}}), RangeError);
}

TEST_CASE("phase network: zero weights give one half, scales differ") {
    nn::ParamStore<double> ps(5);
    auto tl = TextureLearner<double>::create(ps, 4, 8, 16);
    const auto cell2 = make_coord_set(24, 24, 2.0).cell_pixels();
    const auto cell3 = make_coord_set(24, 24, 3.0).cell_pixels();
    std::mt19937_64 rng(6);
    for (auto& l : tl.phase_net.layers) l.bias.mutable_value() = random_tensor(l.bias.shape(), rng, -0.5, 0.5);
    const auto p2 = tl.phase(cell2).value(), p3 = tl.phase(cell3).value(), p2b = tl.phase(cell2).value();
    CHECK(p2 == p2b);
    REQUIRE(p2.shape() == Shape{1, 8});
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(p2[k] > 0.0);
        CHECK(p2[k] < 1.0);
        CHECK(p2[k] != p3[k]);
    }
    for (auto& l : tl.phase_net.layers) {
        l.weight.mutable_value().fill(0.0);
        l.bias.mutable_value().fill(0.0);
    }
    const auto flat = tl.phase(cell2);
    for (const double v : flat.value().vec()) CHECK(v == 0.5);
}

TEST_CASE("field maps keep the LR extent") {
    nn::ParamStore<float> ps(1);
    auto tl = TextureLearner<float>::create(ps, 8, 32, 16);
    const auto maps = tl.maps(nn::constant(Tensor<float>({9, 7, 8}, 0.1f)));
    CHECK(maps.amp.shape() == Shape{9, 7, 32});
    CHECK(maps.freq_x.shape() == Shape{9, 7, 32});
    CHECK(maps.freq_y.shape() == Shape{9, 7, 32});
    CHECK(tl.texture_dim() == 32);
}

TEST_CASE("gradients through the sine path match finite differences") {
    nn::ParamStore<double> ps(7);
    auto tl = TextureLearner<double>::create(ps, 3, 4, 5);
    std::mt19937_64 rng(8);
    for (const auto& [name, v] : ps.entries()) v.node()->value = random_tensor(v.shape(), rng, -0.8, 0.8);
    auto feats = leaf(random_tensor({4, 4, 3}, rng));
    const auto cs = make_coord_set(4, 4, 1.7);
    std::vector<nn::Var<double>> inputs{feats};
    for (const auto& [name, v] : ps.entries()) inputs.push_back(v);
    CHECK(max_grad_error(inputs, [&] {
              return project(texture_features(tl.maps(feats), cs, tl.phase(cs.cell_pixels())));
          }) < 1e-4);
}

}
