// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "bam/model.hpp"
#include "bam/rng.hpp"
#include "test_support.hpp"

using Catch::Approx;
namespace md = bam::model;

namespace {

std::vector<md::TaskSpec> two_tasks() {
    md::TaskSpec cls{"CLS", md::TaskKind::classification, 3, bam::metrics::Metric::accuracy, 100};
    md::TaskSpec reg{"REG", md::TaskKind::regression, 2, bam::metrics::Metric::spearman, 50};
    return {cls, reg};
}

md::TrunkConfig small_trunk() {
    md::TrunkConfig cfg;
    cfg.input_width = 4;
    cfg.hidden = {5, 6};
    return cfg;
}

std::vector<double> random_input(bam::Rng& rng, std::size_t width) {
    std::vector<double> x(width);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
}

std::vector<double> flat_params(md::MultiTaskModel& m) {
    std::vector<double> out;
    for (const auto& blk : m.param_blocks()) out.insert(out.end(), blk.data, blk.data + blk.size);
    return out;
}

void set_flat_params(md::MultiTaskModel& m, const std::vector<double>& flat) {
    std::size_t off = 0;
    for (const auto& blk : m.param_blocks()) {
        std::copy(flat.begin() + off, flat.begin() + off + blk.size, blk.data);
        off += blk.size;
    }
}

std::string temp_path(const char* stem) {
    return std::string("model_test_") + stem + ".ckpt";
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
    auto a = md::init_model(small_trunk(), two_tasks(), 7);
    auto b = md::init_model(small_trunk(), two_tasks(), 7);
    auto c = md::init_model(small_trunk(), two_tasks(), 8);
    REQUIRE(bam_test::bits_equal(flat_params(a), flat_params(b)));
    REQUIRE_FALSE(bam_test::bits_equal(flat_params(a), flat_params(c)));
}

TEST_CASE("zero heads give uniform and midpoint predictions") {
    auto m = md::init_model(small_trunk(), two_tasks(), 3);
    bam::Rng rng(1);
    const auto x = random_input(rng, 4);
    const auto pc = m.predict(x, "CLS");
    REQUIRE(pc.probs.size() == 3);
    for (double p : pc.probs) REQUIRE(p == Approx(1.0 / 3.0).margin(1e-12));
    const auto pr = m.predict(x, "REG");
    REQUIRE(pr.value == 0.5);
}

TEST_CASE("classification output sums to one, regression stays inside (0,1)") {
    auto m = md::init_model(small_trunk(), two_tasks(), 3);
    bam::Rng rng(2);
    for (auto& blk : m.param_blocks())
        for (std::size_t i = 0; i < blk.size; ++i) blk.data[i] = rng.uniform(-2.0, 2.0);
    for (int i = 0; i < 50; ++i) {
        const auto x = random_input(rng, 4);
        double sum = 0.0;
        for (double p : m.predict(x, "CLS").probs) sum += p;
        REQUIRE(sum == Approx(1.0).margin(1e-12));
        const double v = m.predict(x, "REG").value;
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("tasks with identical heads agree; heads are independent") {
    md::TaskSpec a{"A", md::TaskKind::classification, 2, bam::metrics::Metric::accuracy, 10};
    md::TaskSpec b{"B", md::TaskKind::classification, 2, bam::metrics::Metric::accuracy, 10};
    auto m = md::init_model(small_trunk(), {a, b}, 5);
    bam::Rng rng(3);
    for (double& v : m.head("A").data) v = rng.uniform(-1.0, 1.0);
    m.head("B") = m.head("A");

    const auto x = random_input(rng, 4);
    REQUIRE(bam_test::bits_equal(m.predict(x, "A").probs, m.predict(x, "B").probs));

    const auto before = m.predict(x, "B").probs;
    for (double& v : m.head("A").data) v += 0.37;
    REQUIRE(bam_test::bits_equal(m.predict(x, "B").probs, before));
}

TEST_CASE("forward is pure") {
    auto m = md::init_model(small_trunk(), two_tasks(), 11);
    bam::Rng rng(4);
    const auto x = random_input(rng, 4);
    const auto p1 = m.predict(x, "CLS");
    const auto p2 = m.predict(x, "CLS");
    REQUIRE(bam_test::bits_equal(p1.probs, p2.probs));
}

TEST_CASE("trunk init respects the scaled-uniform bound, heads start at zero") {
    auto m = md::init_model(small_trunk(), two_tasks(), 21);
    const double b0 = md::glorot_bound(4, 5);
    double max_abs = 0.0;
    for (double v : m.trunk_weight(0).data) {
        REQUIRE(std::fabs(v) <= b0);
        max_abs = std::max(max_abs, std::fabs(v));
    }
    REQUIRE(max_abs > 0.0);
    for (double v : m.trunk_bias(0).data) REQUIRE(v == 0.0);
    for (double v : m.head("CLS").data) REQUIRE(v == 0.0);
    // Depths: head 0, last trunk layer 1, first trunk layer 2.
    const auto blocks = m.param_blocks();
    REQUIRE(blocks[0].depth == 2);
    REQUIRE(blocks[2].depth == 1);
    REQUIRE(blocks[4].depth == 0);
}

TEST_CASE("construction and lookup reject bad input") {
    REQUIRE_THROWS_AS(md::init_model(small_trunk(), {}, 1), std::invalid_argument);
    auto dup = two_tasks();
    dup[1].task_id = "CLS";
    REQUIRE_THROWS_AS(md::init_model(small_trunk(), dup, 1), std::invalid_argument);
    auto one_class = two_tasks();
    one_class[0].num_classes = 1;
    REQUIRE_THROWS_AS(md::init_model(small_trunk(), one_class, 1), std::invalid_argument);

    auto m = md::init_model(small_trunk(), two_tasks(), 1);
    REQUIRE_THROWS_AS(m.predict({0.0, 0.0, 0.0, 0.0}, "NOPE"), std::invalid_argument);
    REQUIRE_THROWS_AS(m.predict({0.0}, "CLS"), std::invalid_argument);
}

TEST_CASE("models on the same config share every parameter shape") {
    auto a = md::init_model(small_trunk(), two_tasks(), 1);
    auto b = md::init_model(small_trunk(), two_tasks(), 999);
    REQUIRE(a.same_shapes(b));
    md::TrunkConfig other = small_trunk();
    other.hidden = {5, 7};
    auto c = md::init_model(other, two_tasks(), 1);
    REQUIRE_FALSE(a.same_shapes(c));
}

TEST_CASE("dataset validation") {
    md::TaskSpec spec{"T", md::TaskKind::classification, 2, bam::metrics::Metric::accuracy, 1};
    md::Dataset ds;
    ds.task_id = "T";
    ds.train.push_back({{0.1, 0.2}, 1.0});
    REQUIRE_NOTHROW(md::validate_dataset(ds, spec, 2));
    REQUIRE_THROWS_AS(md::validate_dataset(ds, spec, 3), std::invalid_argument);
    ds.train[0].y = 2.0;  // class out of range
    REQUIRE_THROWS_AS(md::validate_dataset(ds, spec, 2), std::invalid_argument);

    md::TaskSpec rspec{"T", md::TaskKind::regression, 2, bam::metrics::Metric::spearman, 1};
    ds.train[0].y = 1.2;
    REQUIRE_THROWS_AS(md::validate_dataset(ds, rspec, 2), std::invalid_argument);
    ds.train[0].y = 0.7;
    REQUIRE_NOTHROW(md::validate_dataset(ds, rspec, 2));
    ds.task_id = "OTHER";
    REQUIRE_THROWS_AS(md::validate_dataset(ds, rspec, 2), std::invalid_argument);
}

TEST_CASE("tape forward matches the value-mode trunk bitwise") {
    auto m = md::init_model(small_trunk(), two_tasks(), 13);
    bam::Rng rng(6);
    bam::Tensor x({3, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);

    bam::Tape tape;
    md::TapeForward tf(tape, m);
    const auto feats = tape.value(tf.features(tf.input(x)));
    const auto direct = m.features(x);
    REQUIRE(bam_test::bits_equal(feats.data, direct.data));
}

TEST_CASE("tape gradients agree with finite differences across every block") {
    auto m = md::init_model(small_trunk(), two_tasks(), 17);
    bam::Rng rng(7);
    // Non-zero heads so head gradients flow through softmax/sigmoid.
    for (auto& blk : m.param_blocks())
        for (std::size_t i = 0; i < blk.size; ++i)
            if (blk.data[i] == 0.0) blk.data[i] = rng.uniform(-0.5, 0.5);

    bam::Tensor x({2, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    const bam::Tensor target = bam::Tensor::row({0.2, 0.5, 0.3});
    const double reg_target = 0.8;

    // Loss: CE of example 0 on CLS plus squared error of example 1 on REG.
    auto loss_of = [&](md::MultiTaskModel& model) {
        const bam::Tensor feats = model.features(x);
        bam::Tensor c0({1, feats.cols()}), c1({1, feats.cols()});
        for (std::size_t j = 0; j < feats.cols(); ++j) {
            c0.data[j] = feats.at(0, j);
            c1.data[j] = feats.at(1, j);
        }
        const double ce =
            bam::cross_entropy_soft(target, bam::softmax_rows(bam::matmul(c0, model.head("CLS"))));
        const double se = bam::squared_error(
            reg_target, bam::sigmoid_scalar(bam::matmul(c1, model.head("REG")).data[0]));
        return ce + se;
    };

    bam::Tape tape;
    md::TapeForward tf(tape, m);
    const auto f = tf.features(tf.input(x));
    const auto probs = tape.softmax_rows_op(tf.head_logits(f, 0, m.task_index("CLS")));
    const auto ce = tape.cross_entropy_soft(target, probs);
    const auto pred = tape.sigmoid_op(tf.head_logits(f, 1, m.task_index("REG")));
    const auto se = tape.squared_error(reg_target, pred);
    const auto loss = tape.sum_scalars({ce, se});
    REQUIRE(tape.value(loss).data[0] == Approx(loss_of(m)).margin(1e-12));
    tape.backward(loss);

    std::vector<double> analytic;
    for (const auto& g : tf.gradients()) analytic.insert(analytic.end(), g.begin(), g.end());

    const auto base = flat_params(m);
    const auto fd = bam_test::fd_gradient(
        [&](const std::vector<double>& p) {
            set_flat_params(m, p);
            const double v = loss_of(m);
            return v;
        },
        base, 1e-6);
    set_flat_params(m, base);

    REQUIRE(analytic.size() == fd.size());
    for (std::size_t i = 0; i < fd.size(); ++i)
        REQUIRE(bam_test::rel_err(analytic[i], fd[i]) < 1e-4);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
    auto m = md::init_model(small_trunk(), two_tasks(), 23);
    bam::Rng rng(8);
    for (auto& blk : m.param_blocks())
        for (std::size_t i = 0; i < blk.size; ++i) blk.data[i] = rng.next_gaussian();
    m.set_config_digest(0xabcdef12345678ULL);
    m.set_reg_norm("REG", {-2.5, 3.75});

    const std::string path = temp_path("roundtrip");
    const std::uint64_t digest = md::save_checkpoint(m, path);
    auto loaded = md::load_checkpoint(path);
    REQUIRE(bam_test::bits_equal(flat_params(m), flat_params(loaded)));
    REQUIRE(loaded.task_specs().size() == 2);
    REQUIRE(loaded.task_specs()[0].task_id == "CLS");
    REQUIRE(loaded.task_specs()[1].metric == bam::metrics::Metric::spearman);
    REQUIRE(loaded.seed() == 23);
    REQUIRE(loaded.config_digest() == 0xabcdef12345678ULL);
    REQUIRE(loaded.reg_norm("REG").lo == -2.5);
    REQUIRE(loaded.reg_norm("REG").hi == 3.75);

    // Saving the loaded model reproduces the same content digest.
    const std::string path2 = temp_path("roundtrip2");
    REQUIRE(md::save_checkpoint(loaded, path2) == digest);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("corruption and truncation are caught by the checksum") {
    auto m = md::init_model(small_trunk(), two_tasks(), 29);
    const std::string path = temp_path("corrupt");
    md::save_checkpoint(m, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() - 5));
    }
    REQUIRE_THROWS_WITH(md::load_checkpoint(path), Catch::Matchers::ContainsSubstring("checksum"));

    std::string flipped = bytes;
    flipped[flipped.size() / 2] = char(flipped[flipped.size() / 2] ^ 0x40);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(flipped.data(), std::streamsize(flipped.size()));
    }
    REQUIRE_THROWS_WITH(md::load_checkpoint(path), Catch::Matchers::ContainsSubstring("checksum"));
    std::remove(path.c_str());
}

TEST_CASE("loading against a different task list is an explicit error") {
    auto m = md::init_model(small_trunk(), two_tasks(), 31);
    const std::string path = temp_path("tasks");
    md::save_checkpoint(m, path);
    auto loaded = md::load_checkpoint(path);
    REQUIRE_NOTHROW(loaded.require_tasks(two_tasks()));

    auto other = two_tasks();
    other[0].task_id = "SOMETHING_ELSE";
    REQUIRE_THROWS_WITH(loaded.require_tasks(other),
                        Catch::Matchers::ContainsSubstring("task table"));
    auto fewer = std::vector<md::TaskSpec>{two_tasks()[0]};
    REQUIRE_THROWS_WITH(loaded.require_tasks(fewer),
                        Catch::Matchers::ContainsSubstring("task table"));
    std::remove(path.c_str());
}
