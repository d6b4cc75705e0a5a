// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "gradcheck_common.hpp"
#include "metaseg/loss.hpp"

using namespace metaseg;
using msgtest::random_tensor;

namespace {

// one-hot target over a 2x(n) grid: fg[i] says whether voxel i is class 1
Tensor<double> one_hot(const std::vector<int>& fg, Shape spatial) {
    Shape s{2};
    s.insert(s.end(), spatial.begin(), spatial.end());
    Tensor<double> t(s);
    const int64_t S = t.numel() / 2;
    for (int64_t i = 0; i < S; ++i) {
        t[i] = fg[static_cast<size_t>(i)] ? 0.0 : 1.0;
        t[S + i] = fg[static_cast<size_t>(i)] ? 1.0 : 0.0;
    }
    return t;
}

} // namespace

TEST_CASE("gdl: perfect prediction is near zero, total miss is near one") {
    Rng rng(1);
    std::vector<int> fg(64);
    for (auto& f : fg) f = rng.coin();
    fg[0] = 1;
    fg[1] = 0; // both classes present
    auto target = one_hot(fg, {4, 4, 4});
    Tensor<double> perfect = target;
    REQUIRE(generalized_dice_loss(perfect, target) <= 1e-4);
    REQUIRE(generalized_dice_loss(perfect, target) >= 0.0);

    Tensor<double> wrong(target.shape);
    for (int64_t i = 0; i < target.numel(); ++i) wrong[i] = 1.0 - target[i];
    REQUIRE(generalized_dice_loss(wrong, target) >= 1.0 - 1e-4);
    REQUIRE(generalized_dice_loss(wrong, target) <= 1.0);
}

TEST_CASE("gdl: two-voxel case matches a direct evaluation of the formula") {
    // voxels: first is foreground, second background; fg-channel probs (0.8, 0.4)
    Tensor<double> target({2, 1, 1, 2});
    target[0] = 0.0;
    target[1] = 1.0; // class 0 (background) row
    target[2] = 1.0;
    target[3] = 0.0; // class 1 (foreground) row
    Tensor<double> probs({2, 1, 1, 2});
    probs[2] = 0.8;
    probs[3] = 0.4; // fg channel
    probs[0] = 0.2;
    probs[1] = 0.6; // bg channel

    const double eps = 1e-5;
    // direct scalar evaluation
    const double w0 = 1.0 / ((1.0 + eps) * (1.0 + eps));
    const double w1 = 1.0 / ((1.0 + eps) * (1.0 + eps));
    const double num = w0 * (0.6 * 1.0) + w1 * (0.8 * 1.0);
    const double den = w0 * (1.0 + 0.8) + w1 * (1.0 + 1.2) + eps;
    const double want = 1.0 - 2.0 * num / den;
    REQUIRE(generalized_dice_loss(probs, target, eps) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("gdl: range and permutation invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> fg(27);
        for (auto& f : fg) f = rng.coin();
        auto target = one_hot(fg, {3, 3, 3});
        Tensor<double> probs({2, 3, 3, 3});
        for (int64_t i = 0; i < 27; ++i) {
            const double p = rng.uniform(0.01, 0.99);
            probs[i] = p;
            probs[27 + i] = 1.0 - p;
        }
        const double loss = generalized_dice_loss(probs, target);
        REQUIRE(loss >= 0.0);
        REQUIRE(loss <= 1.0);

        // identical voxel permutation of probs and target
        std::vector<int64_t> perm(27);
        for (int64_t i = 0; i < 27; ++i) perm[static_cast<size_t>(i)] = i;
        for (int64_t i = 26; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)],
                      perm[static_cast<size_t>(rng.uniform_int(0, i))]);
        Tensor<double> probs_p(probs.shape), target_p(target.shape);
        for (int64_t i = 0; i < 27; ++i) {
            probs_p[i] = probs[perm[static_cast<size_t>(i)]];
            probs_p[27 + i] = probs[27 + perm[static_cast<size_t>(i)]];
            target_p[i] = target[perm[static_cast<size_t>(i)]];
            target_p[27 + i] = target[27 + perm[static_cast<size_t>(i)]];
        }
        REQUIRE(generalized_dice_loss(probs_p, target_p) ==
                Catch::Approx(loss).epsilon(1e-12));
    }
}

TEST_CASE("gdl: analytic gradient matches finite differences") {
    Rng rng(11);
    std::vector<int> fg(8);
    for (auto& f : fg) f = rng.coin();
    fg[0] = 1;
    auto target = one_hot(fg, {2, 2, 2});
    Tensor<double> probs = random_tensor({2, 2, 2, 2}, rng, 0.05, 0.95);
    auto analytic = generalized_dice_loss_grad(probs, target);

    const double h = 1e-6;
    double max_scale = 0, max_diff = 0;
    Tensor<double> probe = probs;
    for (int64_t i = 0; i < probs.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        kernels::GdlSaved<double> sv;
        const double fp = kernels::gdl_forward(probe, target, 1e-5, sv);
        probe[i] = orig - h;
        const double fm = kernels::gdl_forward(probe, target, 1e-5, sv);
        probe[i] = orig;
        const double want = (fp - fm) / (2 * h);
        max_scale = std::max(max_scale, std::abs(want));
        max_diff = std::max(max_diff, std::abs(analytic[i] - want));
    }
    REQUIRE(max_diff / max_scale <= 1e-6);
}

TEST_CASE("gdl: contract violations") {
    std::vector<int> fg(8, 1);
    fg[3] = 0;
    auto target = one_hot(fg, {2, 2, 2});
    Tensor<double> probs({2, 2, 2, 2}, 0.5);

    SECTION("shape mismatch") {
        Tensor<double> small({2, 1, 2, 2}, 0.5);
        REQUIRE_THROWS_AS(generalized_dice_loss(small, target), ShapeError);
    }
    SECTION("probs must sum to one per voxel") {
        probs[0] = 0.9; // voxel 0 now sums to 1.4
        REQUIRE_THROWS_AS(generalized_dice_loss(probs, target), ContractError);
    }
    SECTION("target must be one-hot") {
        Tensor<double> bad = target;
        bad[0] = 0.5;
        REQUIRE_THROWS_AS(generalized_dice_loss(probs, bad), ContractError);
        Tensor<double> two = target;
        two[0] = 1.0; // voxel 0 sums to 2 with both channels 1
        two[8] = 1.0;
        REQUIRE_THROWS_AS(generalized_dice_loss(probs, two), ContractError);
    }
}
