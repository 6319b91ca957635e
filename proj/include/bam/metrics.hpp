// SPDX-License-Identifier: Apache-2.0
//
// Per-task evaluation metrics. All of these are pure and are checked against
// brute-force oracles in the test suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bam::metrics {

enum class Metric { accuracy, matthews, spearman };

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::accuracy: return "accuracy";
        case Metric::matthews: return "matthews";
        case Metric::spearman: return "spearman";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "accuracy") return Metric::accuracy;
    if (s == "matthews") return Metric::matthews;
    if (s == "spearman") return Metric::spearman;
    throw std::invalid_argument("unknown metric: " + s);
}

/// Index of the largest probability, lowest index winning ties.
inline std::size_t argmax_class(const std::vector<double>& probs) {
    if (probs.empty()) throw std::invalid_argument("argmax_class: empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
    if (predicted.size() != gold.size() || predicted.empty())
        throw std::invalid_argument("accuracy: inputs must have equal nonzero length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (predicted[i] == gold[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

/// Matthews correlation coefficient for binary labels; 0 when any
/// confusion-matrix margin is empty.
inline double matthews_corr(const std::vector<int>& predicted, const std::vector<int>& gold) {
    if (predicted.size() != gold.size() || predicted.empty())
        throw std::invalid_argument("matthews_corr: inputs must have equal nonzero length");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predicted[i] != 0 && predicted[i] != 1)
            throw std::invalid_argument("matthews_corr: predictions must be binary");
        if (gold[i] != 0 && gold[i] != 1)
            throw std::invalid_argument("matthews_corr: gold labels must be binary");
        if (predicted[i] == 1)
            (gold[i] == 1 ? tp : fp) += 1;
        else
            (gold[i] == 1 ? fn : tn) += 1;
    }
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

namespace detail {

/// Average ranks (1-based), ties getting the mean of their rank block.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;  // constant input convention
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

/// Spearman rank correlation with average ranks for ties; 0 when either side
/// is constant.
inline double spearman_corr(const std::vector<double>& predicted,
                            const std::vector<double>& gold) {
    if (predicted.size() != gold.size())
        throw std::invalid_argument("spearman_corr: length mismatch");
    if (predicted.size() < 2)
        throw std::invalid_argument("spearman_corr: need at least 2 points");
    return detail::pearson(detail::average_ranks(predicted), detail::average_ranks(gold));
}

/// Unweighted mean of per-task scores.
inline double average_score(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("average_score: empty input");
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

}  // namespace bam::metrics
