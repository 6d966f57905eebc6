#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "iste/coords.hpp"
#include "iste/image.hpp"

namespace iste {

struct Corpus {
    std::vector<std::string> names;
    std::vector<Image> images;
    std::vector<std::string> skipped;  // "<file>: <reason>"
    std::size_t size() const { return images.size(); }
};

/// Every *.png in `dir`, sorted by file name. Files that fail to decode or
/// are smaller than min_size on either side are skipped with a warning on
/// stderr. Throws IoError for a missing directory and ConfigError when no
/// image survives.
Corpus load_corpus(const std::filesystem::path& dir, std::size_t min_size = 192);

/// Ellipse "cells" over a background of mixed-frequency sinusoids.
/// Deterministic in (n, size, seed). size >= 192.
std::vector<Image> synth_corpus(std::size_t n, std::size_t size, std::uint64_t seed);
void write_corpus(const std::vector<Image>& images, const std::filesystem::path& dir, const std::string& prefix = "synth");

struct DegradeConfig {
    std::size_t patch = 48;
    std::size_t blur_kernel = 5;
    double blur_sigma = 1.0;
};

struct DegradedPair {
    Image lr;  // (patch, patch, 3)
    Image hr;  // (round(patch*m), round(patch*m), 3)
    std::size_t crop_y = 0, crop_x = 0;
};

/// Random crop of round(patch*m) pixels, bicubic resize to patch x patch,
/// then Gaussian blur.
DegradedPair degrade(const Image& hr_image, double m, const DegradeConfig& cfg, std::mt19937_64& rng);

/// LR input from a given HR crop: bicubic resize to (lr_h, lr_w) then blur.
Image degrade_patch(const Image& hr_patch, std::size_t lr_h, std::size_t lr_w, const DegradeConfig& cfg);

struct SampledPairs {
    CoordSet coords;
    Tensor<float> rgb;  // (k, 3)
    std::vector<std::size_t> pixels;  // row-major HR pixel index of each sample
};

/// k distinct HR pixels chosen uniformly without replacement.
SampledPairs sample_pairs(const Image& hr_patch, std::size_t lr_h, std::size_t lr_w, std::size_t k,
                          std::mt19937_64& rng);

/// Uniform double in [0, 1) from the top 53 bits, independent of the
/// standard library's distribution implementations.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

/// Mixes a base seed with a stream id (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace iste
