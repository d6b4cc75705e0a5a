// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/tensor.hpp"
#include "metaseg/unet.hpp"
#include "metaseg/volume.hpp"

namespace metaseg {

namespace detail {

// symmetric (edge-inclusive) reflection index
inline int64_t reflect_index(int64_t i, int64_t n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
}

} // namespace detail

// Whole-volume prediction by tiling overlapping windows over a
// reflection-padded grid, averaging per-voxel class probabilities, then
// taking the argmax with ties broken toward background. `counts_out`, when
// given, receives the per-voxel window coverage of the original grid.
template <typename T>
LabelMap sliding_window_predict(const Network& net, const ParamSet<T>& params, const Volume& vol,
                                int patch_extent, int stride,
                                std::vector<int32_t>* counts_out = nullptr) {
    if (stride < 1 || stride > patch_extent)
        throw ConfigError("stride must lie in [1, patch_extent]");
    if (patch_extent != net.config.patch_extent)
        throw ConfigError("patch_extent does not match the network configuration");

    // pad so windows at multiples of stride tile the whole volume
    std::array<int64_t, 3> padded{};
    for (int a = 0; a < 3; ++a) {
        const int64_t e = vol.extents[static_cast<size_t>(a)];
        if (e <= patch_extent) {
            padded[static_cast<size_t>(a)] = patch_extent;
        } else {
            const int64_t steps = (e - patch_extent + stride - 1) / stride;
            padded[static_cast<size_t>(a)] = patch_extent + steps * stride;
        }
        if (padded[static_cast<size_t>(a)] - e > e)
            throw ConfigError("volume too small to reflection-pad to the window grid");
    }

    Volume pv;
    pv.extents = padded;
    pv.spacing = vol.spacing;
    pv.voxels.resize(static_cast<size_t>(pv.numel()));
    for (int64_t z = 0; z < padded[2]; ++z)
        for (int64_t y = 0; y < padded[1]; ++y)
            for (int64_t x = 0; x < padded[0]; ++x)
                pv.at(x, y, z) = vol.at(detail::reflect_index(x, vol.extents[0]),
                                        detail::reflect_index(y, vol.extents[1]),
                                        detail::reflect_index(z, vol.extents[2]));

    std::vector<double> sum_bg(pv.voxels.size(), 0.0), sum_fg(pv.voxels.size(), 0.0);
    std::vector<int32_t> counts(pv.voxels.size(), 0);
    const int64_t P = patch_extent;
    Tensor<T> patch({net.config.in_channels, P, P, P});

    for (int64_t z0 = 0; z0 + P <= padded[2]; z0 += stride)
        for (int64_t y0 = 0; y0 + P <= padded[1]; y0 += stride)
            for (int64_t x0 = 0; x0 + P <= padded[0]; x0 += stride) {
                int64_t w = 0;
                for (int64_t z = 0; z < P; ++z)
                    for (int64_t y = 0; y < P; ++y)
                        for (int64_t x = 0; x < P; ++x, ++w)
                            patch[w] = static_cast<T>(pv.at(x0 + x, y0 + y, z0 + z));
                const Tensor<T> probs = predict_patch(net, params, patch, Mode::eval, 0);
                const int64_t S = P * P * P;
                w = 0;
                for (int64_t z = 0; z < P; ++z)
                    for (int64_t y = 0; y < P; ++y)
                        for (int64_t x = 0; x < P; ++x, ++w) {
                            const size_t idx =
                                static_cast<size_t>(pv.index(x0 + x, y0 + y, z0 + z));
                            sum_bg[idx] += probs[w];
                            sum_fg[idx] += probs[S + w];
                            counts[idx] += 1;
                        }
            }

    LabelMap out;
    out.extents = vol.extents;
    out.spacing = vol.spacing;
    out.voxels.resize(static_cast<size_t>(vol.numel()));
    if (counts_out) counts_out->resize(out.voxels.size());
    for (int64_t z = 0; z < vol.extents[2]; ++z)
        for (int64_t y = 0; y < vol.extents[1]; ++y)
            for (int64_t x = 0; x < vol.extents[0]; ++x) {
                const size_t pidx = static_cast<size_t>(pv.index(x, y, z));
                const size_t oidx = static_cast<size_t>(out.index(x, y, z));
                out.voxels[oidx] = sum_fg[pidx] > sum_bg[pidx] ? 1 : 0;
                if (counts_out) (*counts_out)[oidx] = counts[pidx];
            }
    return out;
}

// Keeps only the largest foreground component (26-connectivity by default,
// 6 supported); size ties go to the component containing the smallest
// linear voxel index. Union-find over a single raster scan.
inline LabelMap largest_connected_component(const LabelMap& labels, int connectivity = 26) {
    if (connectivity != 26 && connectivity != 6)
        throw ConfigError("connectivity must be 6 or 26");
    const auto ex = labels.extents;
    const int64_t n = labels.numel();
    std::vector<int64_t> parent(static_cast<size_t>(n), -1);

    std::vector<std::array<int64_t, 3>> backward_neighbors;
    for (int64_t dz = -1; dz <= 0; ++dz)
        for (int64_t dy = -1; dy <= 1; ++dy)
            for (int64_t dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                const int64_t manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (connectivity == 6 && manhattan != 1) continue;
                backward_neighbors.push_back({dx, dy, dz});
            }

    const auto find_root = [&](int64_t i) {
        while (parent[static_cast<size_t>(i)] != i) {
            parent[static_cast<size_t>(i)] =
                parent[static_cast<size_t>(parent[static_cast<size_t>(i)])];
            i = parent[static_cast<size_t>(i)];
        }
        return i;
    };

    for (int64_t z = 0; z < ex[2]; ++z)
        for (int64_t y = 0; y < ex[1]; ++y)
            for (int64_t x = 0; x < ex[0]; ++x) {
                const int64_t i = labels.index(x, y, z);
                if (!labels.voxels[static_cast<size_t>(i)]) continue;
                parent[static_cast<size_t>(i)] = i;
                for (const auto& d : backward_neighbors) {
                    const int64_t nx = x + d[0], ny = y + d[1], nz = z + d[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= ex[0] || ny >= ex[1] || nz >= ex[2])
                        continue;
                    const int64_t j = labels.index(nx, ny, nz);
                    if (!labels.voxels[static_cast<size_t>(j)]) continue;
                    const int64_t ri = find_root(i), rj = find_root(j);
                    if (ri != rj) parent[static_cast<size_t>(std::max(ri, rj))] = std::min(ri, rj);
                }
            }

    // component sizes keyed by root; roots are the smallest member index
    std::vector<int64_t> size(static_cast<size_t>(n), 0);
    int64_t best_root = -1;
    for (int64_t i = 0; i < n; ++i) {
        if (parent[static_cast<size_t>(i)] < 0) continue;
        const int64_t r = find_root(i);
        ++size[static_cast<size_t>(r)];
    }
    for (int64_t r = 0; r < n; ++r) {
        if (size[static_cast<size_t>(r)] == 0) continue;
        if (best_root < 0 || size[static_cast<size_t>(r)] > size[static_cast<size_t>(best_root)])
            best_root = r; // first root with max size == smallest linear index on ties
    }

    LabelMap out;
    out.extents = ex;
    out.spacing = labels.spacing;
    out.voxels.assign(static_cast<size_t>(n), 0);
    if (best_root >= 0)
        for (int64_t i = 0; i < n; ++i)
            if (parent[static_cast<size_t>(i)] >= 0 && find_root(i) == best_root)
                out.voxels[static_cast<size_t>(i)] = 1;
    return out;
}

} // namespace metaseg
