// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "metaseg/rng.hpp"
#include "metaseg/stats.hpp"

using namespace metaseg;

namespace {

// Full 2^n enumeration oracle with its own midrank computation.
double enumeration_p(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> absd;
    std::vector<int> sign;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;
        absd.push_back(std::abs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const int n = static_cast<int>(absd.size());
    REQUIRE(n >= 1);
    REQUIRE(n <= 20);
    // midranks, computed directly from sorted positions
    std::vector<double> rank(absd.size());
    for (size_t i = 0; i < absd.size(); ++i) {
        int less = 0, equal = 0;
        for (size_t j = 0; j < absd.size(); ++j) {
            if (absd[j] < absd[i]) ++less;
            if (absd[j] == absd[i]) ++equal;
        }
        rank[i] = less + (equal + 1) / 2.0;
    }
    double w_plus = 0, w_total = 0;
    for (size_t i = 0; i < rank.size(); ++i) {
        w_total += rank[i];
        if (sign[i] > 0) w_plus += rank[i];
    }
    const double w_obs = std::min(w_plus, w_total - w_plus);

    int64_t hits = 0;
    const int64_t total = int64_t(1) << n;
    for (int64_t bits = 0; bits < total; ++bits) {
        double wp = 0;
        for (int i = 0; i < n; ++i)
            if (bits & (int64_t(1) << i)) wp += rank[static_cast<size_t>(i)];
        if (std::min(wp, w_total - wp) <= w_obs + 1e-12) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace

TEST_CASE("wilcoxon: n=5 all-positive differences give exact p = 0.0625") {
    std::vector<double> x{2.0, 3.0, 4.5, 1.2, 7.0};
    std::vector<double> y{1.0, 2.0, 3.0, 1.0, 5.0};
    auto r = wilcoxon_signed_rank(x, y);
    REQUIRE(r.n_effective == 5);
    REQUIRE(r.statistic == 0.0);
    REQUIRE(r.p_value == Catch::Approx(0.0625).margin(1e-15));
    REQUIRE(r.stars == "");
}

TEST_CASE("wilcoxon: identical samples degenerate") {
    std::vector<double> x{1.0, 2.0, 3.0};
    REQUIRE_THROWS_AS(wilcoxon_signed_rank(x, x), DegenerateInputError);
}

TEST_CASE("wilcoxon: contract on lengths") {
    std::vector<double> x{1.0, 2.0};
    std::vector<double> y{1.5};
    REQUIRE_THROWS_AS(wilcoxon_signed_rank(x, y), ContractError);
    std::vector<double> one{1.0};
    REQUIRE_THROWS_AS(wilcoxon_signed_rank(one, one), ContractError);
}

TEST_CASE("wilcoxon: zeros are discarded") {
    std::vector<double> x{5.0, 2.0, 3.0, 4.0};
    std::vector<double> y{5.0, 1.0, 4.0, 2.0};
    auto r = wilcoxon_signed_rank(x, y);
    REQUIRE(r.n_effective == 3);
}

TEST_CASE("wilcoxon: exact path matches full enumeration for n <= 10") {
    Rng rng(17);
    int done = 0;
    while (done < 50) {
        const int n = static_cast<int>(rng.uniform_int(2, 10));
        std::vector<double> x, y;
        bool all_zero = true;
        for (int i = 0; i < n; ++i) {
            // integer samples produce plenty of ties and zero differences
            const double xv = static_cast<double>(rng.uniform_int(0, 8));
            const double yv = static_cast<double>(rng.uniform_int(0, 8));
            x.push_back(xv);
            y.push_back(yv);
            if (xv != yv) all_zero = false;
        }
        if (all_zero) continue;
        auto r = wilcoxon_signed_rank(x, y);
        REQUIRE(r.p_value == Catch::Approx(enumeration_p(x, y)).margin(1e-12));
        ++done;
    }
}

TEST_CASE("wilcoxon: exact and normal approximation agree within 0.01 at n=20") {
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x, y;
        for (int i = 0; i < 20; ++i) {
            x.push_back(rng.uniform(0, 1));
            y.push_back(rng.uniform(0, 1));
        }
        std::vector<double> absd;
        std::vector<int> sign;
        for (size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            absd.push_back(std::abs(d));
            sign.push_back(d > 0 ? 1 : -1);
        }
        const auto dr = detail::doubled_midranks(absd);
        int64_t w2_plus = 0, w2_total = 0;
        for (size_t i = 0; i < dr.size(); ++i) {
            w2_total += dr[i];
            if (sign[i] > 0) w2_plus += dr[i];
        }
        const int64_t w2 = std::min(w2_plus, w2_total - w2_plus);
        const double exact = exact_two_sided_p(dr, w2);
        const double approx = approx_two_sided_p(dr, w2);
        REQUIRE(std::abs(exact - approx) <= 0.01);
    }
}

TEST_CASE("wilcoxon: approximation path engages above n=25") {
    Rng rng(31);
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
        x.push_back(rng.uniform(0, 1) + 0.15);
        y.push_back(rng.uniform(0, 1));
    }
    auto r = wilcoxon_signed_rank(x, y);
    REQUIRE(r.n_effective == 40);
    REQUIRE(r.p_value > 0.0);
    REQUIRE(r.p_value <= 1.0);
    REQUIRE(r.stars == significance_stars(r.p_value));
}

TEST_CASE("significance stars: strict, mutually exclusive bands") {
    REQUIRE(significance_stars(0.2) == "");
    REQUIRE(significance_stars(0.05) == "");
    REQUIRE(significance_stars(0.04) == "*");
    REQUIRE(significance_stars(0.005) == "*");
    REQUIRE(significance_stars(0.004) == "**");
    REQUIRE(significance_stars(0.0005) == "**");
    REQUIRE(significance_stars(0.0004) == "***");
    REQUIRE(significance_stars(0.0) == "***");
    REQUIRE(significance_stars(1.0) == "");
}
