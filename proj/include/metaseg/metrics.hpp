// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/volume.hpp"

namespace metaseg {

struct MetricsRecord {
    std::string subject;
    double dice = 0;  // percent
    double assd = 0;  // mm
};

// Volume overlap in percent: 100 * 2|A n B| / (|A| + |B|).
// Both masks empty -> 100; exactly one empty -> 0.
inline double dice(const LabelMap& a, const LabelMap& b) {
    if (a.extents != b.extents)
        throw ShapeError("dice: extents differ");
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.voxels.size(); ++i) {
        na += a.voxels[i];
        nb += b.voxels[i];
        inter += a.voxels[i] & b.voxels[i];
    }
    if (na == 0 && nb == 0) return 100.0;
    if (na == 0 || nb == 0) return 0.0;
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Surface voxels: foreground with at least one background 6-neighbor;
// out-of-bounds counts as background.
inline std::vector<std::array<int64_t, 3>> surface_voxels(const LabelMap& m) {
    std::vector<std::array<int64_t, 3>> out;
    const auto ex = m.extents;
    for (int64_t z = 0; z < ex[2]; ++z)
        for (int64_t y = 0; y < ex[1]; ++y)
            for (int64_t x = 0; x < ex[0]; ++x) {
                if (!m.at(x, y, z)) continue;
                const bool boundary =
                    x == 0 || !m.at(x - 1, y, z) || x == ex[0] - 1 || !m.at(x + 1, y, z) ||
                    y == 0 || !m.at(x, y - 1, z) || y == ex[1] - 1 || !m.at(x, y + 1, z) ||
                    z == 0 || !m.at(x, y, z - 1) || z == ex[2] - 1 || !m.at(x, y, z + 1);
                if (boundary) out.push_back({x, y, z});
            }
    return out;
}

namespace detail {

inline constexpr double kEdtInf = 1e30;

// Felzenszwalb-Huttenlocher 1D squared distance transform with samples at
// physical positions i*h; exact lower envelope of parabolas.
inline void edt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& zb, int n, double h) {
    int k = 0;
    v[0] = 0;
    zb[0] = -kEdtInf;
    zb[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        const double qh = q * h;
        double s;
        while (true) {
            const double rh = v[static_cast<size_t>(k)] * h;
            s = ((f[static_cast<size_t>(q)] + qh * qh) -
                 (f[static_cast<size_t>(v[static_cast<size_t>(k)])] + rh * rh)) /
                (2 * qh - 2 * rh);
            if (s <= zb[static_cast<size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        zb[static_cast<size_t>(k)] = s;
        zb[static_cast<size_t>(k) + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        const double qh = q * h;
        while (zb[static_cast<size_t>(k) + 1] < qh) ++k;
        const double rh = v[static_cast<size_t>(k)] * h;
        d[static_cast<size_t>(q)] = (qh - rh) * (qh - rh) + f[static_cast<size_t>(v[static_cast<size_t>(k)])];
    }
}

// Exact anisotropic squared EDT to the nearest seed voxel center.
inline std::vector<double> edt_squared(const std::vector<uint8_t>& seeds,
                                       const std::array<int64_t, 3>& ex,
                                       const std::array<double, 3>& spacing) {
    const int64_t nx = ex[0], ny = ex[1], nz = ex[2];
    std::vector<double> dist(static_cast<size_t>(nx * ny * nz));
    for (size_t i = 0; i < dist.size(); ++i) dist[i] = seeds[i] ? 0.0 : kEdtInf;

    const int nmax = static_cast<int>(std::max({nx, ny, nz}));
    std::vector<double> f(static_cast<size_t>(nmax)), d(static_cast<size_t>(nmax));
    std::vector<int> v(static_cast<size_t>(nmax));
    std::vector<double> zb(static_cast<size_t>(nmax) + 1);

    // x pass
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y) {
            const int64_t base = (z * ny + y) * nx;
            for (int64_t x = 0; x < nx; ++x) f[static_cast<size_t>(x)] = dist[static_cast<size_t>(base + x)];
            edt_1d(f, d, v, zb, static_cast<int>(nx), spacing[0]);
            for (int64_t x = 0; x < nx; ++x) dist[static_cast<size_t>(base + x)] = d[static_cast<size_t>(x)];
        }
    // y pass
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t x = 0; x < nx; ++x) {
            for (int64_t y = 0; y < ny; ++y)
                f[static_cast<size_t>(y)] = dist[static_cast<size_t>((z * ny + y) * nx + x)];
            edt_1d(f, d, v, zb, static_cast<int>(ny), spacing[1]);
            for (int64_t y = 0; y < ny; ++y)
                dist[static_cast<size_t>((z * ny + y) * nx + x)] = d[static_cast<size_t>(y)];
        }
    // z pass
    for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x) {
            for (int64_t z = 0; z < nz; ++z)
                f[static_cast<size_t>(z)] = dist[static_cast<size_t>((z * ny + y) * nx + x)];
            edt_1d(f, d, v, zb, static_cast<int>(nz), spacing[2]);
            for (int64_t z = 0; z < nz; ++z)
                dist[static_cast<size_t>((z * ny + y) * nx + x)] = d[static_cast<size_t>(z)];
        }
    return dist;
}

} // namespace detail

// Average symmetric surface distance in mm. Surfaces are voxel boundaries
// (6-neighborhood), distances Euclidean between voxel centers scaled by
// spacing, computed with an exact distance transform.
inline double assd(const LabelMap& a, const LabelMap& b, const std::array<double, 3>& spacing) {
    if (a.extents != b.extents)
        throw ShapeError("assd: extents differ");
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    if (sa.empty() || sb.empty())
        throw EmptyMaskError("assd requires two non-empty masks");

    std::vector<uint8_t> seed_a(a.voxels.size(), 0), seed_b(b.voxels.size(), 0);
    for (const auto& p : sa) seed_a[static_cast<size_t>(a.index(p[0], p[1], p[2]))] = 1;
    for (const auto& p : sb) seed_b[static_cast<size_t>(b.index(p[0], p[1], p[2]))] = 1;
    const auto dist_to_b = detail::edt_squared(seed_b, a.extents, spacing);
    const auto dist_to_a = detail::edt_squared(seed_a, a.extents, spacing);

    // directional sums kept separate so assd(a,b) == assd(b,a) exactly
    double sum_ab = 0, sum_ba = 0;
    for (const auto& p : sa)
        sum_ab += std::sqrt(dist_to_b[static_cast<size_t>(a.index(p[0], p[1], p[2]))]);
    for (const auto& p : sb)
        sum_ba += std::sqrt(dist_to_a[static_cast<size_t>(b.index(p[0], p[1], p[2]))]);
    return (sum_ab + sum_ba) / static_cast<double>(sa.size() + sb.size());
}

inline double assd(const LabelMap& a, const LabelMap& b) { return assd(a, b, a.spacing); }

} // namespace metaseg
