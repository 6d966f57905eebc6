#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "iste/autograd.hpp"
#include "iste/tensor.hpp"

namespace iste::test {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

inline Tensor<float> random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(0.f, 1.f);
    Tensor<float> t({h, w, 3});
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

inline nn::Var<double> leaf(Tensor<double> t) { return nn::Var<double>(std::move(t), true); }

/// Fixed random projection to a scalar, so every output entry carries an O(1) gradient.
inline nn::Var<double> project(const nn::Var<double>& out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    Tensor<double> w = random_tensor(out.shape(), rng);
    return nn::sum(nn::mul(out, nn::constant(w)));
}

struct GradCheckStats {
    std::size_t checked = 0;
    std::size_t kinks = 0;  // entries whose +-h step flipped a relu
};

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, over up to `per_tensor` random entries of every input.
/// ReLU networks are piecewise smooth: when the +-h evaluations see different
/// relu sign patterns the step straddles a kink, and that entry is differenced
/// again with a smaller step that stays on one side.
inline double max_grad_error(std::vector<nn::Var<double>> inputs, const std::function<nn::Var<double>()>& loss_fn,
                             std::size_t per_tensor = 16, double h = 1e-4, GradCheckStats* stats = nullptr) {
    for (auto& v : inputs) v.zero_grad();
    nn::Var<double> loss = loss_fn();
    nn::backward(loss);
    auto traced = [&](std::vector<bool>& signs) {
        nn::ReluTrace trace;
        const double value = loss_fn().value()[0];
        signs = trace.signs();
        return value;
    };
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (auto& v : inputs) {
        const Tensor<double> analytic = v.has_grad() ? v.grad() : Tensor<double>(v.shape());
        std::vector<std::size_t> idx(v.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(per_tensor, idx.size()));
        for (const std::size_t i : idx) {
            double& x = v.mutable_value()[i];
            const double saved = x;
            double numeric = 0.0;
            for (double step = h; ; step /= 100.0) {
                std::vector<bool> s_up, s_down;
                x = saved + step;
                const double up = traced(s_up);
                x = saved - step;
                const double down = traced(s_down);
                x = saved;
                numeric = (up - down) / (2.0 * step);
                if (s_up == s_down || step < 1e-9) break;
                if (step == h && stats) ++stats->kinks;
            }
            const double a = analytic[i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, err);
            if (stats) ++stats->checked;
        }
    }
    return worst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
   public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("iste_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

   private:
    std::filesystem::path path_;
};

}  // namespace iste::test
