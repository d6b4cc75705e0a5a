// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaseg/errors.hpp"

namespace metaseg {

struct StatsResult {
    double statistic = 0; // W = min(W+, W-)
    double p_value = 1.0;
    int n_effective = 0;
    std::string stars;
};

// Strict significance bands: *** p<0.0005, ** p<0.005, * p<0.05.
inline std::string significance_stars(double p) {
    if (p < 0.0005) return "***";
    if (p < 0.005) return "**";
    if (p < 0.05) return "*";
    return "";
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// midranks of |d|, doubled so they stay integral under ties
inline std::vector<int64_t> doubled_midranks(const std::vector<double>& absd) {
    const size_t n = absd.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return absd[i] < absd[j]; });
    std::vector<int64_t> dr(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
        // ranks i+1 .. j+1 tie; doubled midrank = (i+1) + (j+1)
        const int64_t doubled = static_cast<int64_t>(i + 1 + j + 1);
        for (size_t k = i; k <= j; ++k) dr[order[k]] = doubled;
        i = j + 1;
    }
    return dr;
}

} // namespace detail

// Exact two-sided tail over all 2^n sign assignments: P(min(W+, W-) <= w),
// computed by polynomial multiplication over the doubled midranks.
inline double exact_two_sided_p(const std::vector<int64_t>& dr, int64_t w2) {
    int64_t w2_total = 0;
    for (int64_t r2 : dr) w2_total += r2;
    std::vector<uint64_t> count(static_cast<size_t>(w2_total) + 1, 0);
    count[0] = 1;
    int64_t reach = 0;
    for (int64_t r2 : dr) {
        for (int64_t t = reach; t >= 0; --t)
            if (count[static_cast<size_t>(t)])
                count[static_cast<size_t>(t + r2)] += count[static_cast<size_t>(t)];
        reach += r2;
    }
    uint64_t tail = 0;
    for (int64_t t = 0; t <= w2_total; ++t)
        if (std::min(t, w2_total - t) <= w2) tail += count[static_cast<size_t>(t)];
    return static_cast<double>(tail) / std::ldexp(1.0, static_cast<int>(dr.size()));
}

// Normal approximation with continuity and tie correction.
inline double approx_two_sided_p(const std::vector<int64_t>& dr, int64_t w2) {
    const double nd = static_cast<double>(dr.size());
    const double mu = nd * (nd + 1.0) / 4.0;
    double tie_term = 0;
    std::vector<int64_t> sorted_dr = dr;
    std::sort(sorted_dr.begin(), sorted_dr.end());
    size_t i = 0;
    while (i < sorted_dr.size()) {
        size_t j = i;
        while (j + 1 < sorted_dr.size() && sorted_dr[j + 1] == sorted_dr[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
    const double w = static_cast<double>(w2) / 2.0;
    const double z = (w - mu + 0.5) / std::sqrt(var);
    return std::min(1.0, 2.0 * detail::normal_cdf(z));
}

// Paired two-sided Wilcoxon signed-rank test. Zero differences are
// discarded; ties get midranks. Exact tail by sign-assignment counting for
// n_effective <= 25 (equivalent to full 2^n enumeration), otherwise the
// normal approximation.
inline StatsResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ContractError("wilcoxon_signed_rank requires paired samples of equal length >= 2");
    std::vector<double> absd;
    std::vector<int> sign;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;
        absd.push_back(std::abs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const int n = static_cast<int>(absd.size());
    if (n == 0) throw DegenerateInputError("all paired differences are zero");

    const auto dr = detail::doubled_midranks(absd);
    int64_t w2_plus = 0, w2_total = 0;
    for (size_t i = 0; i < dr.size(); ++i) {
        w2_total += dr[i];
        if (sign[i] > 0) w2_plus += dr[i];
    }
    const int64_t w2 = std::min(w2_plus, w2_total - w2_plus);

    StatsResult r;
    r.statistic = static_cast<double>(w2) / 2.0;
    r.n_effective = n;
    r.p_value = n <= 25 ? exact_two_sided_p(dr, w2) : approx_two_sided_p(dr, w2);
    r.stars = significance_stars(r.p_value);
    return r;
}

} // namespace metaseg
