// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "metaseg/errors.hpp"
#include "metaseg/kernels.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

// Ground truth for the two-class output: per-voxel channel sum exactly 1,
// entries in {0,1}.
template <typename T>
void validate_one_hot(const Tensor<T>& target) {
    if (target.shape.size() != 4)
        throw ShapeError("one-hot target must be rank-4, got " + shape_str(target.shape));
    const int64_t C = target.shape[0], S = target.numel() / C;
    for (int64_t i = 0; i < S; ++i) {
        T sum = 0;
        for (int64_t c = 0; c < C; ++c) {
            const T v = target[c * S + i];
            if (v != T(0) && v != T(1))
                throw ContractError("one-hot target entries must be 0 or 1");
            sum += v;
        }
        if (sum != T(1)) throw ContractError("one-hot target per-voxel channel sum must be 1");
    }
}

// Generalized Dice loss: 1 - 2 (sum_l w_l sum_n r_ln p_ln) /
// (sum_l w_l sum_n (r_ln + p_ln) + eps), w_l = 1/(sum_n r_ln + eps)^2.
// Differentiable w.r.t. probs; value in [0,1].
template <typename T>
T generalized_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps = 1e-5) {
    if (probs.shape != target.shape)
        throw ShapeError("probs shape " + shape_str(probs.shape) + " != target shape " +
                         shape_str(target.shape));
    validate_one_hot(target);
    const int64_t C = probs.shape[0], S = probs.numel() / C;
    for (int64_t i = 0; i < S; ++i) {
        T sum = 0;
        for (int64_t c = 0; c < C; ++c) sum += probs[c * S + i];
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-3)
            throw ContractError("probs per-voxel channel sums must be 1");
    }
    kernels::GdlSaved<T> sv;
    return static_cast<T>(kernels::gdl_forward(probs, target, eps, sv));
}

// Analytic gradient w.r.t. probs, for direct (non-graph) use.
template <typename T>
Tensor<T> generalized_dice_loss_grad(const Tensor<T>& probs, const Tensor<T>& target,
                                     double eps = 1e-5) {
    if (probs.shape != target.shape)
        throw ShapeError("probs shape " + shape_str(probs.shape) + " != target shape " +
                         shape_str(target.shape));
    kernels::GdlSaved<T> sv;
    kernels::gdl_forward(probs, target, eps, sv);
    Tensor<T> g(probs.shape);
    kernels::gdl_backward(target, sv, T(1), g);
    return g;
}

} // namespace metaseg
