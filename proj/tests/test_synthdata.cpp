// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bam/rng.hpp"
#include "bam/synthdata.hpp"
#include "test_support.hpp"

using Catch::Approx;
namespace sd = bam::synthdata;
namespace md = bam::model;

namespace {

sd::SuiteConfig small_suite() {
    sd::SuiteConfig cfg;
    cfg.big_train = 400;
    cfg.small_train = 100;
    cfg.med_train = 200;
    cfg.reg_train = 200;
    cfg.dev_size = 100;
    cfg.calibration_size = 501;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Plain full-batch logistic regression on raw features.
struct Probe {
    std::vector<double> w;
    double b = 0.0;

    void fit(const std::vector<md::Example>& data, int epochs, double lr) {
        w.assign(data[0].x.size(), 0.0);
        for (int e = 0; e < epochs; ++e) {
            std::vector<double> gw(w.size(), 0.0);
            double gb = 0.0;
            for (const auto& ex : data) {
                const double p = predict(ex.x);
                const double err = p - ex.y;
                for (std::size_t j = 0; j < w.size(); ++j) gw[j] += err * ex.x[j];
                gb += err;
            }
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * gw[j] / double(data.size());
            b -= lr * gb / double(data.size());
        }
    }

    double predict(const std::vector<double>& x) const {
        double z = b;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[j];
        return 1.0 / (1.0 + std::exp(-z));
    }
};

}  // namespace

TEST_CASE("same seed gives byte-identical dataset files") {
    const auto cfg = small_suite();
    for (int round = 0; round < 2; ++round) {
        auto out = sd::gen_suite(cfg, 77);
        for (std::size_t i = 0; i < out.datasets.size(); ++i) {
            const std::string path =
                "suite_det_" + std::to_string(round) + "_" + out.specs[i].task.task_id + ".tsv";
            sd::write_dataset(out.datasets[i], out.specs[i], path);
        }
    }
    for (const char* id : {"BIG-A", "SMALL-A", "MED-B", "REG-C"}) {
        const std::string a = std::string("suite_det_0_") + id + ".tsv";
        const std::string b = std::string("suite_det_1_") + id + ".tsv";
        REQUIRE(slurp(a) == slurp(b));
        REQUIRE(slurp(a + ".spec") == slurp(b + ".spec"));
        for (const auto& p : {a, b, a + ".spec", b + ".spec"}) std::remove(p.c_str());
    }
}

TEST_CASE("relatedness knob: SMALL-A mirrors BIG-A, MED-B does not") {
    sd::SuiteGenerator suite(small_suite(), 123);
    bam::Rng rng(9);
    const std::size_t n = 10000;
    std::size_t agree_small = 0, agree_med = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = suite.sample_input(rng);
        const double big = suite.noiseless_label("BIG-A", x);
        if (big == suite.noiseless_label("SMALL-A", x)) ++agree_small;
        if (big == suite.noiseless_label("MED-B", x)) ++agree_med;
    }
    REQUIRE(double(agree_small) / double(n) > 0.90);
    REQUIRE(double(agree_med) / double(n) > 0.45);
    REQUIRE(double(agree_med) / double(n) < 0.55);
}

TEST_CASE("regression labels stay inside [0,1]") {
    auto out = sd::gen_suite(small_suite(), 5);
    const auto& reg = out.datasets[3];
    REQUIRE(reg.task_id == "REG-C");
    for (const auto& split : {reg.train, reg.dev})
        for (const auto& ex : split) {
            REQUIRE(ex.y >= 0.0);
            REQUIRE(ex.y <= 1.0);
        }
    // Train split hits both ends of the normalized range.
    double lo = 1.0, hi = 0.0;
    for (const auto& ex : reg.train) {
        lo = std::min(lo, ex.y);
        hi = std::max(hi, ex.y);
    }
    REQUIRE(lo == 0.0);
    REQUIRE(hi == 1.0);
}

TEST_CASE("binary tasks are roughly balanced") {
    // Balance is a default-config property; small splits would be dominated
    // by binomial noise.
    auto out = sd::gen_suite(sd::SuiteConfig{}, 31);
    for (std::size_t i = 0; i < 3; ++i) {
        double pos = 0.0;
        for (const auto& ex : out.datasets[i].train) pos += ex.y;
        const double frac = pos / double(out.datasets[i].train.size());
        INFO(out.specs[i].task.task_id);
        REQUIRE(frac > 0.45);
        REQUIRE(frac < 0.55);
    }
}

TEST_CASE("train and dev splits are distinct draws") {
    auto out = sd::gen_suite(small_suite(), 13);
    const auto& small = out.datasets[1];
    for (const auto& tr : small.train)
        for (const auto& dv : small.dev) REQUIRE_FALSE(bam_test::bits_equal(tr.x, dv.x));
}

TEST_CASE("write-read roundtrip is lossless") {
    auto out = sd::gen_suite(small_suite(), 21);
    for (std::size_t i = 0; i < out.datasets.size(); ++i) {
        const std::string path = "suite_rt_" + out.specs[i].task.task_id + ".tsv";
        sd::write_dataset(out.datasets[i], out.specs[i], path);
        const auto [ds, spec] = sd::read_dataset(path);
        REQUIRE(ds.task_id == out.datasets[i].task_id);
        REQUIRE(ds.train.size() == out.datasets[i].train.size());
        REQUIRE(ds.dev.size() == out.datasets[i].dev.size());
        for (std::size_t k = 0; k < ds.train.size(); ++k) {
            REQUIRE(bam_test::bits_equal(ds.train[k].x, out.datasets[i].train[k].x));
            REQUIRE(bam_test::bits_equal(ds.train[k].y, out.datasets[i].train[k].y));
        }
        REQUIRE(spec.task == out.specs[i].task);
        REQUIRE(spec.task.metric == out.specs[i].task.metric);
        REQUIRE(spec.relatedness == out.specs[i].relatedness);
        REQUIRE(spec.noise_rate == out.specs[i].noise_rate);
        REQUIRE(spec.suite_seed == out.specs[i].suite_seed);
        REQUIRE(bam_test::bits_equal(spec.norm.lo, out.specs[i].norm.lo));
        REQUIRE(bam_test::bits_equal(spec.norm.hi, out.specs[i].norm.hi));
        std::remove(path.c_str());
        std::remove((path + ".spec").c_str());
    }
}

TEST_CASE("malformed lines are reported with their line number") {
    sd::SuiteConfig cfg = small_suite();
    cfg.input_width = 3;
    auto out = sd::gen_suite(cfg, 2);
    const std::string path = "suite_bad.tsv";
    sd::write_dataset(out.datasets[0], out.specs[0], path);

    // Drop the label column from data line 5 (file line 7: header is 2 lines).
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    auto& bad = lines[6];
    bad = bad.substr(0, bad.rfind('\t'));
    std::ofstream outf(path, std::ios::trunc);
    for (const auto& l : lines) outf << l << "\n";
    outf.close();

    REQUIRE_THROWS_WITH(sd::read_dataset(path), Catch::Matchers::ContainsSubstring(":7:"));
    std::remove(path.c_str());
    std::remove((path + ".spec").c_str());
}

TEST_CASE("an empty train split is rejected at read time") {
    sd::SuiteConfig cfg = small_suite();
    cfg.input_width = 3;
    auto out = sd::gen_suite(cfg, 3);
    const std::string path = "suite_empty.tsv";
    auto ds = out.datasets[0];
    ds.train.clear();
    sd::write_dataset(ds, out.specs[0], path);
    REQUIRE_THROWS_WITH(sd::read_dataset(path),
                        Catch::Matchers::ContainsSubstring("empty train split"));
    std::remove(path.c_str());
    std::remove((path + ".spec").c_str());
}

TEST_CASE("suite validation rejects bad configs") {
    sd::SuiteConfig dup = small_suite();
    dup.small_id = dup.big_id;
    REQUIRE_THROWS_AS(sd::SuiteGenerator(dup, 1), std::invalid_argument);
    sd::SuiteConfig noisy = small_suite();
    noisy.noise_rate = 0.5;
    REQUIRE_THROWS_AS(sd::SuiteGenerator(noisy, 1), std::invalid_argument);
    noisy.noise_rate = -0.1;
    REQUIRE_THROWS_AS(sd::SuiteGenerator(noisy, 1), std::invalid_argument);
    sd::SuiteConfig zero = small_suite();
    zero.small_train = 0;
    REQUIRE_THROWS_AS(sd::SuiteGenerator(zero, 1), std::invalid_argument);
}

TEST_CASE("regression audit labels need the generated range") {
    sd::SuiteGenerator suite(small_suite(), 7);
    bam::Rng rng(1);
    const auto x = suite.sample_input(rng);
    REQUIRE_THROWS_AS(suite.noiseless_label("REG-C", x), std::runtime_error);
    REQUIRE_THROWS_AS(suite.noiseless_label("NOPE", x), std::invalid_argument);
    suite.generate();
    const double y = suite.noiseless_label("REG-C", x);
    REQUIRE(y >= 0.0);
    REQUIRE(y <= 1.0);
}

TEST_CASE("a linear probe on BIG-A transfers to SMALL-A but not MED-B") {
    sd::SuiteConfig cfg = small_suite();
    cfg.big_train = 2000;
    sd::SuiteGenerator suite(cfg, 99);
    auto out = suite.generate();

    Probe probe;
    probe.fit(out.datasets[0].train, 300, 0.5);

    bam::Rng rng(17);
    const std::size_t n = 4000;
    std::size_t hit_small = 0, hit_med = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = suite.sample_input(rng);
        const double pred = probe.predict(x) > 0.5 ? 1.0 : 0.0;
        if (pred == suite.noiseless_label("SMALL-A", x)) ++hit_small;
        if (pred == suite.noiseless_label("MED-B", x)) ++hit_med;
    }
    const double acc_small = double(hit_small) / double(n);
    const double acc_med = double(hit_med) / double(n);
    INFO("small=" << acc_small << " med=" << acc_med);
    REQUIRE(acc_small > 0.6);   // well above chance
    REQUIRE(acc_med < 0.55);    // no better than chance + 5 points
}
