// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-task suites. All tasks share one frozen latent map
// g(x) = tanh(Ax + b); each task scores examples along its own unit direction
// u in latent space. Relatedness is a knob: SMALL-A's direction is BIG-A's
// plus a small perturbation (a large related task next to a small one),
// MED-B's is orthogonalized against BIG-A's, REG-C's is drawn independently.
// Classification labels
// threshold the score at the median of a calibration sample (balanced
// classes), then flip i.i.d. at the noise rate; regression labels min-max
// normalize the score using the train split's realized range.
#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bam/model.hpp"
#include "bam/rng.hpp"
#include "bam/stats.hpp"

namespace bam::synthdata {

struct SuiteConfig {
    std::size_t input_width = 32;
    std::size_t latent_width = 8;
    double noise_rate = 0.1;                // classification label flip probability
    double relatedness_perturbation = 0.2;  // delta between BIG-A and SMALL-A directions
    std::size_t calibration_size = 2001;    // sample for the classification threshold
    std::size_t dev_size = 1000;
    std::size_t big_train = 20000;
    std::size_t small_train = 500;
    std::size_t med_train = 2000;
    std::size_t reg_train = 2000;
    std::string big_id = "BIG-A";
    std::string small_id = "SMALL-A";
    std::string med_id = "MED-B";
    std::string reg_id = "REG-C";
};

/// Per-task metadata carried alongside the examples (and into the companion
/// .spec file next to each dataset).
struct SyntheticTaskSpec {
    model::TaskSpec task;
    std::size_t input_width = 32;
    std::size_t dev_size = 0;
    double noise_rate = 0.0;
    std::string relatedness = "independent";
    std::uint64_t suite_seed = 0;
    model::RegNorm norm;  // regression normalization constants (identity for classification)
};

/// The shared map g(x) = tanh(Ax + b), fixed for the lifetime of a suite.
class LatentGenerator {
  public:
    LatentGenerator(std::size_t input_width, std::size_t latent_width, Rng rng)
        : input_width_(input_width), a_({latent_width, input_width}), b_(latent_width) {
        const double scale = 1.0 / std::sqrt(double(input_width));
        for (double& v : a_.data) v = rng.next_gaussian() * scale;
        for (double& v : b_) v = rng.next_gaussian() * 0.2;
    }

    std::vector<double> map(const std::vector<double>& x) const {
        if (x.size() != input_width_)
            throw std::invalid_argument("LatentGenerator: input width mismatch");
        std::vector<double> z(b_.size());
        for (std::size_t i = 0; i < b_.size(); ++i) {
            double acc = b_[i];
            for (std::size_t j = 0; j < input_width_; ++j) acc += a_.at(i, j) * x[j];
            z[i] = std::tanh(acc);
        }
        return z;
    }

  private:
    std::size_t input_width_;
    Tensor a_;
    std::vector<double> b_;
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = rng.next_gaussian();
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline std::vector<double> normalize(std::vector<double> v) {
    const double n = std::sqrt(dot(v, v));
    if (n < 1e-12) throw std::runtime_error("degenerate direction");
    for (double& x : v) x /= n;
    return v;
}

}  // namespace detail

class SuiteGenerator {
  public:
    struct Output {
        std::vector<model::Dataset> datasets;
        std::vector<SyntheticTaskSpec> specs;
    };

    SuiteGenerator(SuiteConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
        if (cfg_.noise_rate < 0.0 || cfg_.noise_rate >= 0.5)
            throw std::invalid_argument("gen_suite: noise rate must be in [0, 0.5)");
        if (cfg_.relatedness_perturbation < 0.0)
            throw std::invalid_argument("gen_suite: perturbation must be >= 0");
        if (cfg_.input_width == 0 || cfg_.latent_width == 0 || cfg_.dev_size == 0 ||
            cfg_.calibration_size < 3 || cfg_.big_train == 0 || cfg_.small_train == 0 ||
            cfg_.med_train == 0 || cfg_.reg_train == 0)
            throw std::invalid_argument("gen_suite: sizes must be positive");
        {
            std::map<std::string, int> ids;
            for (const auto& id : {cfg_.big_id, cfg_.small_id, cfg_.med_id, cfg_.reg_id})
                if (id.empty() || ++ids[id] > 1)
                    throw std::invalid_argument("gen_suite: duplicate or empty task id '" + id +
                                                "'");
        }

        Rng root(seed);
        latent_ = std::make_unique<LatentGenerator>(cfg_.input_width, cfg_.latent_width,
                                                    root.fork("latent"));

        // Latent coordinates have unequal variances and nonzero means, so an
        // "unrelated" head must be orthogonal under the latent covariance,
        // not the plain dot product, for its scores to be uncorrelated with
        // BIG-A's.
        const std::size_t L = cfg_.latent_width;
        Tensor cov({L, L});
        {
            Rng cal = root.fork("covariance");
            std::vector<double> sum(L, 0.0), cross(L * L, 0.0);
            const std::size_t m = cfg_.calibration_size;
            for (std::size_t s = 0; s < m; ++s) {
                const auto g = latent_->map(sample_input(cal));
                for (std::size_t i = 0; i < L; ++i) {
                    sum[i] += g[i];
                    for (std::size_t j = 0; j < L; ++j) cross[i * L + j] += g[i] * g[j];
                }
            }
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < L; ++j)
                    cov.at(i, j) = cross[i * L + j] / double(m) -
                                   (sum[i] / double(m)) * (sum[j] / double(m));
        }
        auto cov_dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < L; ++j) acc += a[i] * cov.at(i, j) * b[j];
            return acc;
        };

        Rng heads = root.fork("heads");
        const auto u_big = detail::random_unit(heads, L);
        auto u_small = u_big;
        {
            const auto p = detail::random_unit(heads, L);
            for (std::size_t i = 0; i < u_small.size(); ++i)
                u_small[i] += cfg_.relatedness_perturbation * p[i];
            u_small = detail::normalize(std::move(u_small));
        }
        const double big_var = cov_dot(u_big, u_big);
        std::vector<double> u_med;
        do {
            u_med = detail::random_unit(heads, L);
            const double proj = cov_dot(u_med, u_big) / big_var;
            for (std::size_t i = 0; i < u_med.size(); ++i) u_med[i] -= proj * u_big[i];
        } while (detail::dot(u_med, u_med) < 1e-12);
        u_med = detail::normalize(std::move(u_med));
        const auto u_reg = detail::random_unit(heads, L);

        const std::string rel_small = "shares:" + cfg_.big_id;
        add_rule(cfg_.big_id, model::TaskKind::classification, metrics::Metric::accuracy,
                 cfg_.big_train, u_big, "independent", root);
        add_rule(cfg_.small_id, model::TaskKind::classification, metrics::Metric::accuracy,
                 cfg_.small_train, u_small, rel_small, root);
        add_rule(cfg_.med_id, model::TaskKind::classification, metrics::Metric::matthews,
                 cfg_.med_train, u_med, "independent", root);
        add_rule(cfg_.reg_id, model::TaskKind::regression, metrics::Metric::spearman,
                 cfg_.reg_train, u_reg, "independent", root);
    }

    const SuiteConfig& config() const { return cfg_; }

    /// Draw every split. Deterministic in the suite seed.
    Output generate() {
        Output out;
        Rng root(seed_);
        for (auto& rule : rules_) {
            model::Dataset ds;
            ds.task_id = rule.id;
            Rng data = root.fork("data:" + rule.id);
            Rng noise = root.fork("noise:" + rule.id);

            std::vector<std::vector<double>> train_x(rule.train_size), dev_x(cfg_.dev_size);
            for (auto& x : train_x) x = sample_input(data);
            for (auto& x : dev_x) x = sample_input(data);

            if (rule.kind == model::TaskKind::regression) {
                // Normalize by the train split's realized score range; clamp
                // keeps the dev split inside [0,1] too.
                double lo = score(rule, train_x[0]), hi = lo;
                std::vector<double> train_s(train_x.size());
                for (std::size_t i = 0; i < train_x.size(); ++i) {
                    train_s[i] = score(rule, train_x[i]);
                    lo = std::min(lo, train_s[i]);
                    hi = std::max(hi, train_s[i]);
                }
                if (hi <= lo) throw std::runtime_error("gen_suite: degenerate regression range");
                rule.norm = {lo, hi};
                for (std::size_t i = 0; i < train_x.size(); ++i)
                    ds.train.push_back({std::move(train_x[i]), normalized(rule, train_s[i])});
                for (auto& x : dev_x) {
                    const double y = normalized(rule, score(rule, x));
                    ds.dev.push_back({std::move(x), y});
                }
            } else {
                for (auto& x : train_x) {
                    double y = score(rule, x) > rule.threshold ? 1.0 : 0.0;
                    if (noise.next_double() < cfg_.noise_rate) y = 1.0 - y;
                    ds.train.push_back({std::move(x), y});
                }
                for (auto& x : dev_x) {
                    double y = score(rule, x) > rule.threshold ? 1.0 : 0.0;
                    if (noise.next_double() < cfg_.noise_rate) y = 1.0 - y;
                    ds.dev.push_back({std::move(x), y});
                }
            }

            SyntheticTaskSpec spec;
            spec.task.task_id = rule.id;
            spec.task.kind = rule.kind;
            spec.task.num_classes = 2;
            spec.task.metric = rule.metric;
            spec.task.train_size = rule.train_size;
            spec.input_width = cfg_.input_width;
            spec.dev_size = cfg_.dev_size;
            spec.noise_rate = rule.kind == model::TaskKind::regression ? 0.0 : cfg_.noise_rate;
            spec.relatedness = rule.relatedness;
            spec.suite_seed = seed_;
            spec.norm = rule.norm;
            out.specs.push_back(std::move(spec));
            out.datasets.push_back(std::move(ds));
        }
        return out;
    }

    /// Fresh input under the suite's input law (for audits and probes).
    std::vector<double> sample_input(Rng& rng) const {
        std::vector<double> x(cfg_.input_width);
        for (double& v : x) v = rng.next_gaussian();
        return x;
    }

    /// Label before noise: 0/1 by threshold for classification, normalized
    /// score for regression. Regression requires generate() to have fixed the
    /// normalization constants.
    double noiseless_label(const std::string& task_id, const std::vector<double>& x) const {
        const Rule& rule = rule_for(task_id);
        const double s = score(rule, x);
        if (rule.kind == model::TaskKind::classification) return s > rule.threshold ? 1.0 : 0.0;
        if (rule.norm.hi <= rule.norm.lo)
            throw std::runtime_error("noiseless_label: regression range not set; run generate()");
        return normalized(rule, s);
    }

  private:
    struct Rule {
        std::string id;
        model::TaskKind kind;
        metrics::Metric metric;
        std::size_t train_size;
        std::vector<double> head;
        std::string relatedness;
        double threshold = 0.0;
        model::RegNorm norm{0.0, 0.0};  // invalid until generate() for regression
    };

    void add_rule(const std::string& id, model::TaskKind kind, metrics::Metric metric,
                  std::size_t train_size, std::vector<double> head, std::string relatedness,
                  Rng& root) {
        Rule rule{id, kind, metric, train_size, std::move(head), std::move(relatedness)};
        if (kind == model::TaskKind::classification) {
            Rng calib = root.fork("calibrate:" + id);
            std::vector<double> scores(cfg_.calibration_size);
            for (double& s : scores) s = score(rule, sample_input(calib));
            rule.threshold = stats::median_of_trials(scores);
        }
        rules_.push_back(std::move(rule));
    }

    double score(const Rule& rule, const std::vector<double>& x) const {
        return detail::dot(rule.head, latent_->map(x));
    }

    static double normalized(const Rule& rule, double s) {
        const double y = (s - rule.norm.lo) / (rule.norm.hi - rule.norm.lo);
        return std::min(1.0, std::max(0.0, y));
    }

    const Rule& rule_for(const std::string& task_id) const {
        for (const Rule& r : rules_)
            if (r.id == task_id) return r;
        throw std::invalid_argument("unknown task '" + task_id + "'");
    }

    SuiteConfig cfg_;
    std::uint64_t seed_;
    std::unique_ptr<LatentGenerator> latent_;
    std::vector<Rule> rules_;
};

inline SuiteGenerator::Output gen_suite(const SuiteConfig& cfg, std::uint64_t seed) {
    return SuiteGenerator(cfg, seed).generate();
}

// ---------------------------------------------------------------------------
// Dataset files: a documented TSV (one example per line) plus a companion
// "<path>.spec" key-value file with the task metadata.
// ---------------------------------------------------------------------------

namespace detail {

constexpr const char* kHeader = "# bam dataset v1";

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] inline void parse_fail(const std::string& path, std::size_t line,
                                    const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline void write_dataset(const model::Dataset& ds, const SyntheticTaskSpec& spec,
                          const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open dataset for writing: " + path);
    f << detail::kHeader << "\n";
    f << "split";
    for (std::size_t j = 0; j < spec.input_width; ++j) f << "\tx" << j;
    f << "\ty\n";
    auto dump = [&](const std::vector<model::Example>& split, const char* name) {
        for (const auto& ex : split) {
            f << name;
            for (double v : ex.x) f << '\t' << detail::format_double(v);
            if (spec.task.kind == model::TaskKind::classification)
                f << '\t' << std::size_t(ex.y) << '\n';
            else
                f << '\t' << detail::format_double(ex.y) << '\n';
        }
    };
    dump(ds.train, "train");
    dump(ds.dev, "dev");
    if (!f) throw std::runtime_error("short write on dataset: " + path);

    std::ofstream sf(path + ".spec", std::ios::trunc);
    if (!sf) throw std::runtime_error("cannot open spec for writing: " + path + ".spec");
    sf << "task_id " << spec.task.task_id << "\n";
    sf << "kind " << (spec.task.kind == model::TaskKind::classification ? "classification"
                                                                        : "regression")
       << "\n";
    sf << "classes " << spec.task.num_classes << "\n";
    sf << "metric " << metrics::to_string(spec.task.metric) << "\n";
    sf << "input_width " << spec.input_width << "\n";
    sf << "train_size " << spec.task.train_size << "\n";
    sf << "dev_size " << spec.dev_size << "\n";
    sf << "noise_rate " << detail::format_double(spec.noise_rate) << "\n";
    sf << "relatedness " << spec.relatedness << "\n";
    sf << "suite_seed " << spec.suite_seed << "\n";
    sf << "norm_lo " << detail::format_double(spec.norm.lo) << "\n";
    sf << "norm_hi " << detail::format_double(spec.norm.hi) << "\n";
    if (!sf) throw std::runtime_error("short write on spec: " + path + ".spec");
}

inline std::pair<model::Dataset, SyntheticTaskSpec> read_dataset(const std::string& path) {
    const std::string spec_path = path + ".spec";
    std::ifstream sf(spec_path);
    if (!sf) throw std::runtime_error("cannot open spec: " + spec_path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(sf, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos)
            detail::parse_fail(spec_path, line_no, "expected 'key value'");
        kv[line.substr(0, space)] = line.substr(space + 1);
    }
    auto field = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw std::runtime_error(spec_path + ": missing field '" + std::string(key) + "'");
        return it->second;
    };

    SyntheticTaskSpec spec;
    spec.task.task_id = field("task_id");
    const std::string kind = field("kind");
    if (kind == "classification")
        spec.task.kind = model::TaskKind::classification;
    else if (kind == "regression")
        spec.task.kind = model::TaskKind::regression;
    else
        throw std::runtime_error(spec_path + ": unknown kind '" + kind + "'");
    spec.task.num_classes = std::stoul(field("classes"));
    spec.task.metric = metrics::metric_from_string(field("metric"));
    spec.input_width = std::stoul(field("input_width"));
    spec.task.train_size = std::stoul(field("train_size"));
    spec.dev_size = std::stoul(field("dev_size"));
    spec.noise_rate = std::strtod(field("noise_rate").c_str(), nullptr);
    spec.relatedness = field("relatedness");
    spec.suite_seed = std::stoull(field("suite_seed"));
    spec.norm.lo = std::strtod(field("norm_lo").c_str(), nullptr);
    spec.norm.hi = std::strtod(field("norm_hi").c_str(), nullptr);

    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset: " + path);
    model::Dataset ds;
    ds.task_id = spec.task.task_id;
    line_no = 0;
    if (!std::getline(f, line) || line != detail::kHeader)
        detail::parse_fail(path, 1, "bad or missing header");
    ++line_no;
    if (!std::getline(f, line)) detail::parse_fail(path, 2, "missing column header");
    ++line_no;

    const std::size_t want_cols = spec.input_width + 2;  // split, features, label
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() != want_cols)
            detail::parse_fail(path, line_no,
                               "expected " + std::to_string(want_cols) + " columns, got " +
                                   std::to_string(cols.size()));
        model::Example ex;
        ex.x.resize(spec.input_width);
        for (std::size_t j = 0; j < spec.input_width; ++j) {
            char* end = nullptr;
            ex.x[j] = std::strtod(cols[j + 1].c_str(), &end);
            if (end == cols[j + 1].c_str() || *end != '\0')
                detail::parse_fail(path, line_no, "bad feature value '" + cols[j + 1] + "'");
        }
        {
            char* end = nullptr;
            ex.y = std::strtod(cols.back().c_str(), &end);
            if (end == cols.back().c_str() || *end != '\0')
                detail::parse_fail(path, line_no, "bad label '" + cols.back() + "'");
        }
        if (cols[0] == "train")
            ds.train.push_back(std::move(ex));
        else if (cols[0] == "dev")
            ds.dev.push_back(std::move(ex));
        else
            detail::parse_fail(path, line_no, "unknown split '" + cols[0] + "'");
    }
    if (ds.train.empty()) throw std::runtime_error(path + ": empty train split");
    model::validate_dataset(ds, spec.task, spec.input_width);
    return {std::move(ds), std::move(spec)};
}

}  // namespace bam::synthdata
