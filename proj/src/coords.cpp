#include "iste/coords.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iste/errors.hpp"

namespace iste {

std::vector<double> pixel_centers(std::size_t n) {
    if (n == 0) throw RangeError("pixel_centers: extent must be positive");
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    return c;
}

std::size_t scaled_extent(std::size_t n, double m) {
    return static_cast<std::size_t>(std::floor(m * static_cast<double>(n) + 0.5));
}

std::size_t nearest_pixel(double v, std::size_t n) {
    const double pos = std::floor((v + 1.0) / 2.0 * static_cast<double>(n));
    return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(n - 1)));
}

namespace {

double center(std::size_t i, std::size_t n) {
    return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
}

void fill_nearest(CoordSet& cs) {
    const std::size_t n = cs.hr.size();
    cs.nearest_lr.resize(n);
    cs.nearest_index.resize(n);
    cs.local_grid.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 q = cs.hr[i];
        const std::size_t iy = nearest_pixel(q.y, cs.lr_h), ix = nearest_pixel(q.x, cs.lr_w);
        cs.nearest_lr[i] = {center(iy, cs.lr_h), center(ix, cs.lr_w)};
        cs.nearest_index[i] = iy * cs.lr_w + ix;
        cs.local_grid[i] = {q.y - cs.nearest_lr[i].y, q.x - cs.nearest_lr[i].x};
    }
}

}  // namespace

CoordSet CoordSet::select(const std::vector<std::size_t>& order) const {
    CoordSet out;
    out.lr_h = lr_h;
    out.lr_w = lr_w;
    out.hr_h = hr_h;
    out.hr_w = hr_w;
    out.scale = scale;
    out.cell = cell;
    out.hr.reserve(order.size());
    out.nearest_lr.reserve(order.size());
    out.nearest_index.reserve(order.size());
    out.local_grid.reserve(order.size());
    for (std::size_t i : order) {
        out.hr.push_back(hr.at(i));
        out.nearest_lr.push_back(nearest_lr[i]);
        out.nearest_index.push_back(nearest_index[i]);
        out.local_grid.push_back(local_grid[i]);
    }
    return out;
}

CoordSet make_coord_set(std::size_t lr_h, std::size_t lr_w, double m) {
    if (!(m >= 1.0)) throw RangeError("make_coord_set: scale must be >= 1, got " + std::to_string(m));
    if (lr_h == 0 || lr_w == 0) throw RangeError("make_coord_set: empty LR grid");
    const std::size_t hr_h = scaled_extent(lr_h, m), hr_w = scaled_extent(lr_w, m);
    const auto ys = pixel_centers(hr_h), xs = pixel_centers(hr_w);
    std::vector<Point2> coords;
    coords.reserve(hr_h * hr_w);
    for (double y : ys)
        for (double x : xs) coords.push_back({y, x});
    CoordSet cs = make_coord_set(lr_h, lr_w, hr_h, hr_w, std::move(coords));
    cs.scale = m;
    return cs;
}

CoordSet make_coord_set(std::size_t lr_h, std::size_t lr_w, std::size_t hr_h, std::size_t hr_w,
                        std::vector<Point2> coords) {
    if (lr_h == 0 || lr_w == 0 || hr_h == 0 || hr_w == 0) throw RangeError("make_coord_set: empty grid");
    if (hr_h < lr_h || hr_w < lr_w) throw RangeError("make_coord_set: HR frame smaller than LR grid (scale < 1)");
    for (const Point2& p : coords) {
        if (!(std::abs(p.y) <= 1.0 && std::abs(p.x) <= 1.0)) {
            throw RangeError("coordinate (" + std::to_string(p.y) + ", " + std::to_string(p.x) +
                             ") outside the normalized [-1, 1] domain");
        }
    }
    CoordSet cs;
    cs.lr_h = lr_h;
    cs.lr_w = lr_w;
    cs.hr_h = hr_h;
    cs.hr_w = hr_w;
    cs.scale = static_cast<double>(hr_h) / static_cast<double>(lr_h);
    cs.cell = {2.0 / static_cast<double>(hr_h), 2.0 / static_cast<double>(hr_w)};
    cs.hr = std::move(coords);
    fill_nearest(cs);
    return cs;
}

EnsembleWeights ensemble_weights(Point2 q, std::size_t lr_h, std::size_t lr_w) {
    if (lr_h == 0 || lr_w == 0) throw RangeError("ensemble_weights: empty LR grid");
    constexpr double kShift = 1e-6;
    q.y = std::clamp(q.y, -1.0, 1.0);
    q.x = std::clamp(q.x, -1.0, 1.0);

    // Neighbouring LR rows/columns: shift half an LR pixel each way.
    auto neighbours = [&](double v, std::size_t n, std::array<std::size_t, 2>& idx, std::array<double, 2>& delta) {
        const double half = 1.0 / static_cast<double>(n);
        for (int s = 0; s < 2; ++s) {
            const double shifted = std::clamp(v + (s == 0 ? -half : half) + kShift, -1.0 + kShift, 1.0 - kShift);
            idx[s] = nearest_pixel(shifted, n);
            delta[s] = v - center(idx[s], n);
        }
    };
    std::array<std::size_t, 2> rows{}, cols{};
    std::array<double, 2> dy{}, dx{};
    neighbours(q.y, lr_h, rows, dy);
    neighbours(q.x, lr_w, cols, dx);

    // Separable form of the opposite-rectangle areas; stays defined when
    // both neighbours coincide with the query.
    auto split = [](const std::array<double, 2>& d) -> std::array<double, 2> {
        const double a = std::abs(d[0]), b = std::abs(d[1]);
        if (a + b <= 0.0) return {0.5, 0.5};
        return {b / (a + b), a / (a + b)};
    };
    const auto wy = split(dy), wx = split(dx);

    EnsembleWeights ew;
    for (int t = 0; t < 4; ++t) {
        const int r = t / 2, c = t % 2;
        ew.corner[t] = {center(rows[r], lr_h), center(cols[c], lr_w)};
        ew.corner_index[t] = rows[r] * lr_w + cols[c];
        ew.offset[t] = {dy[r], dx[c]};
        ew.weight[t] = wy[r] * wx[c];
    }
    ew.total_area = 0.0;
    for (int t = 0; t < 4; ++t) {
        const int opp = 3 - t;
        ew.area[t] = std::abs(ew.offset[opp].y) * std::abs(ew.offset[opp].x);
        ew.total_area += ew.area[t];
    }
    return ew;
}

}  // namespace iste
