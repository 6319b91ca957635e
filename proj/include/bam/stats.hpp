// SPDX-License-Identifier: Apache-2.0
//
// Significance-testing protocol over multi-seed trial grids: medians,
// bootstrap hypothesis tests, Mann-Whitney U (exact by enumeration for small
// samples) and Holm-Bonferroni correction.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bam/rng.hpp"

namespace bam::stats {

/// P(Z > z) for a standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / 1.4142135623730951); }

namespace detail {

// Regularized incomplete gamma functions, series + continued fraction.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

inline double median_sorted(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Upper tail of the chi-square distribution with dof degrees of freedom.
inline double chi_square_sf(double x, int dof) {
    if (dof < 1) throw std::invalid_argument("chi_square_sf: dof must be positive");
    return detail::gamma_q(0.5 * dof, 0.5 * x);
}

/// Standard median; mean of the central pair for even counts.
inline double median_of_trials(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("median_of_trials: empty input");
    return detail::median_sorted(scores);
}

/// One-sided bootstrap p-value for the hypothesis "a > b", statistic =
/// difference of medians, +1-smoothed: p = (1 + #{diff <= 0}) / (B + 1).
/// Deterministic in the seed; resample index draws do not depend on the data.
inline double bootstrap_test(const std::vector<double>& scores_a,
                             const std::vector<double>& scores_b, int resamples,
                             std::uint64_t seed) {
    if (scores_a.size() < 5 || scores_b.size() < 5)
        throw std::invalid_argument("bootstrap_test: need at least 5 trials per side");
    if (resamples < 1000)
        throw std::invalid_argument("bootstrap_test: need at least 1000 resamples");
    Rng rng = Rng(seed).fork("bootstrap");
    std::vector<double> ra(scores_a.size()), rb(scores_b.size());
    long not_greater = 0;
    for (int r = 0; r < resamples; ++r) {
        for (auto& v : ra) v = scores_a[rng.next_index(scores_a.size())];
        for (auto& v : rb) v = scores_b[rng.next_index(scores_b.size())];
        const double diff = detail::median_sorted(ra) - detail::median_sorted(rb);
        if (diff <= 0.0) ++not_greater;
    }
    return static_cast<double>(1 + not_greater) / static_cast<double>(resamples + 1);
}

struct MannWhitneyResult {
    double u;      // U statistic of the first sample
    double p;      // two-sided p-value
    bool exact;    // true when computed by full enumeration
};

namespace detail {

inline double u_statistic(const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double x : a)
        for (double y : b) {
            if (x > y)
                u += 1.0;
            else if (x == y)
                u += 0.5;
        }
    return u;
}

/// Exact two-sided p by enumerating every assignment of the pooled values to
/// the two groups: p = P(|U - mu| >= |U_obs - mu|).
inline double exact_two_sided_p(const std::vector<double>& pooled, std::size_t n_a,
                                double u_obs) {
    const std::size_t n = pooled.size();
    const double mu = 0.5 * static_cast<double>(n_a) * static_cast<double>(n - n_a);
    const double dev = std::fabs(u_obs - mu) - 1e-9;
    // Odometer over index combinations of size n_a.
    std::vector<std::size_t> comb(n_a);
    std::iota(comb.begin(), comb.end(), std::size_t{0});
    long total = 0, as_extreme = 0;
    std::vector<char> in_a(n);
    while (true) {
        std::fill(in_a.begin(), in_a.end(), 0);
        for (auto i : comb) in_a[i] = 1;
        double u = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_a[i]) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (in_a[j]) continue;
                if (pooled[i] > pooled[j])
                    u += 1.0;
                else if (pooled[i] == pooled[j])
                    u += 0.5;
            }
        }
        ++total;
        if (std::fabs(u - mu) >= dev) ++as_extreme;
        // advance combination
        std::size_t k = n_a;
        while (k > 0) {
            --k;
            if (comb[k] != k + n - n_a) {
                ++comb[k];
                for (std::size_t j = k + 1; j < n_a; ++j) comb[j] = comb[j - 1] + 1;
                break;
            }
            if (k == 0) return static_cast<double>(as_extreme) / static_cast<double>(total);
        }
        if (n_a == 0) break;
    }
    return static_cast<double>(as_extreme) / static_cast<double>(total);
}

}  // namespace detail

/// Mann-Whitney U test: U_a counts pairs where a beats b, ties counting 1/2.
/// Exact enumeration when n_a + n_b <= 12, otherwise the normal approximation
/// with tie correction and continuity correction.
inline MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                        const std::vector<double>& b) {
    if (a.empty() || b.empty())
        throw std::invalid_argument("mann_whitney_u: both samples must be nonempty");
    const double u = detail::u_statistic(a, b);
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;

    if (n <= 12) {
        std::vector<double> pooled = a;
        pooled.insert(pooled.end(), b.begin(), b.end());
        return {u, detail::exact_two_sided_p(pooled, na, u), true};
    }

    const double mu = 0.5 * static_cast<double>(na) * static_cast<double>(nb);
    // Tie correction over the pooled sample.
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::sort(pooled.begin(), pooled.end());
    double tie_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[j + 1] == pooled[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    const double nn = static_cast<double>(n);
    const double var = (static_cast<double>(na) * static_cast<double>(nb) / 12.0) *
                       ((nn + 1.0) - tie_sum / (nn * (nn - 1.0)));
    if (var <= 0.0) return {u, 1.0, false};
    const double z = (std::fabs(u - mu) - 0.5) / std::sqrt(var);
    const double p = z <= 0.0 ? 1.0 : std::min(1.0, 2.0 * normal_sf(z));
    return {u, p, false};
}

struct HolmResult {
    std::vector<bool> reject;        // per hypothesis, original order
    std::vector<double> adjusted_p;  // per hypothesis, original order
};

/// Holm-Bonferroni step-down correction at family level alpha.
inline HolmResult holm_bonferroni(const std::vector<double>& p_values, double alpha) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw std::invalid_argument("holm_bonferroni: alpha must be in (0,1)");
    for (double p : p_values)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("holm_bonferroni: p-values must lie in [0,1]");
    const std::size_t m = p_values.size();
    HolmResult out;
    out.reject.assign(m, false);
    out.adjusted_p.assign(m, 0.0);
    if (m == 0) return out;

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return p_values[x] < p_values[y]; });

    bool still_rejecting = true;
    double running_max = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double p = p_values[order[i]];
        const double scale = static_cast<double>(m - i);
        running_max = std::max(running_max, std::min(1.0, scale * p));
        out.adjusted_p[order[i]] = running_max;
        if (still_rejecting && p <= alpha / scale)
            out.reject[order[i]] = true;
        else
            still_rejecting = false;
    }
    return out;
}

}  // namespace bam::stats
