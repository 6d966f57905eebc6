#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace iste {

/// A point in the normalized [-1, 1]^2 image domain, row (y) first.
struct Point2 {
    double y = 0.0;
    double x = 0.0;
    bool operator==(const Point2&) const = default;
};

/// Normalized centers of n pixels: -1 + (2i + 1) / n.
std::vector<double> pixel_centers(std::size_t n);

/// round-half-up(m * n), the HR extent for scale m.
std::size_t scaled_extent(std::size_t n, double m);

/// Index of the pixel whose center is nearest (L-inf) to normalized coordinate v.
std::size_t nearest_pixel(double v, std::size_t n);

/// HR query coordinates bound to an LR grid.
struct CoordSet {
    std::size_t lr_h = 0, lr_w = 0;
    std::size_t hr_h = 0, hr_w = 0;
    double scale = 1.0;
    std::vector<Point2> hr;             // (Y', X')
    std::vector<Point2> nearest_lr;     // (Y, X): nearest LR pixel center
    std::vector<std::size_t> nearest_index;  // row-major index of that LR pixel
    std::vector<Point2> local_grid;     // hr - nearest_lr
    Point2 cell;                        // (2/mh, 2/mw)

    std::size_t size() const { return hr.size(); }

    /// Local grid and cell expressed in LR pixel units (normalized * extent / 2).
    Point2 local_grid_pixels(std::size_t i) const {
        return {local_grid[i].y * static_cast<double>(lr_h) / 2.0, local_grid[i].x * static_cast<double>(lr_w) / 2.0};
    }
    Point2 cell_pixels() const {
        return {cell.y * static_cast<double>(lr_h) / 2.0, cell.x * static_cast<double>(lr_w) / 2.0};
    }

    /// Subset in the given order (used to form retrieval blocks).
    CoordSet select(const std::vector<std::size_t>& order) const;
};

/// Full HR grid for an (lr_h, lr_w) input at scale m >= 1, row-major.
CoordSet make_coord_set(std::size_t lr_h, std::size_t lr_w, double m);

/// Arbitrary coordinates inside an HR frame of (hr_h, hr_w) pixels.
/// Throws RangeError for coordinates outside [-1, 1].
CoordSet make_coord_set(std::size_t lr_h, std::size_t lr_w, std::size_t hr_h, std::size_t hr_w,
                        std::vector<Point2> coords);

/// Corner order: 00 upper-left, 01 upper-right, 10 lower-left, 11 lower-right.
struct EnsembleWeights {
    std::array<Point2, 4> corner;            // u_t
    std::array<std::size_t, 4> corner_index;  // row-major LR index of u_t
    std::array<Point2, 4> offset;            // x_q - u_t
    std::array<double, 4> area;              // S_t paired with term t
    double total_area = 0.0;                 // S
    std::array<double, 4> weight;            // S_t / S

};

/// Area weights for the four LR corners around x_q. The term using
/// offset x_q - u_t is weighted by the rectangle between x_q and the
/// diagonally opposite corner, so the nearest corner dominates.
/// Queries outside the domain are clamped to it.
EnsembleWeights ensemble_weights(Point2 q, std::size_t lr_h, std::size_t lr_w);

}  // namespace iste
