// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bam/distill.hpp"
#include "bam/model.hpp"
#include "bam/rng.hpp"
#include "test_support.hpp"

using Catch::Approx;
namespace md = bam::model;
namespace ds = bam::distill;

namespace {

md::TrunkConfig tiny_trunk() {
    md::TrunkConfig cfg;
    cfg.input_width = 4;
    cfg.hidden = {6, 5};
    return cfg;
}

std::vector<md::TaskSpec> two_tasks() {
    md::TaskSpec cls{"CLS", md::TaskKind::classification, 3, bam::metrics::Metric::accuracy, 10};
    md::TaskSpec reg{"REG", md::TaskKind::regression, 2, bam::metrics::Metric::spearman, 10};
    return {cls, reg};
}

md::MultiTaskModel random_model(std::uint64_t seed) {
    auto m = md::init_model(tiny_trunk(), two_tasks(), seed);
    bam::Rng rng = bam::Rng(seed).fork("head-noise");
    for (auto& blk : m.param_blocks())
        for (std::size_t i = 0; i < blk.size; ++i)
            blk.data[i] += rng.uniform(-0.6, 0.6);
    return m;
}

std::vector<ds::BatchItem> random_batch(bam::Rng& rng, std::size_t n) {
    std::vector<ds::BatchItem> batch(n);
    for (auto& item : batch) {
        const bool cls = rng.next_double() < 0.5;
        item.task_id = cls ? "CLS" : "REG";
        item.x.resize(4);
        for (auto& v : item.x) v = rng.uniform(-1.0, 1.0);
        item.y = cls ? double(rng.next_index(3)) : rng.next_double();
    }
    return batch;
}

double eval_batch_loss(const md::MultiTaskModel& student, const ds::TeacherAssignment& teachers,
                       const std::vector<ds::BatchItem>& batch, double lambda) {
    bam::Tape tape;
    md::TapeForward tf(tape, student);
    return tape.value(ds::batch_loss(tape, tf, student, teachers, batch, lambda)).data[0];
}

}  // namespace

TEST_CASE("lambda_at endpoints and linearity") {
    const ds::AnnealSchedule s{101};
    REQUIRE(ds::lambda_at(0, s) == 0.0);
    REQUIRE(ds::lambda_at(100, s) == 1.0);
    REQUIRE(ds::lambda_at(50, s) == 0.5);
    REQUIRE(ds::lambda_at(0, ds::AnnealSchedule{1}) == 1.0);
    REQUIRE_THROWS_AS(ds::lambda_at(101, s), std::invalid_argument);
    REQUIRE_THROWS_AS(ds::lambda_at(0, ds::AnnealSchedule{0}), std::invalid_argument);
    double prev = -1.0;
    const ds::AnnealSchedule t{37};
    for (std::size_t k = 0; k < 37; ++k) {
        const double l = ds::lambda_at(k, t);
        REQUIRE(l >= prev);
        prev = l;
    }
    REQUIRE(prev == 1.0);
}

TEST_CASE("mixed_target endpoints are exact and the midpoint is a convex mix") {
    auto gold = ds::one_hot_target(0, 2);
    md::Prediction teacher;
    teacher.probs = {0.8, 0.2};

    const auto at1 = ds::mixed_target(1.0, gold, teacher);
    REQUIRE(bam_test::bits_equal(at1.probs, gold.probs));
    const auto at0 = ds::mixed_target(0.0, gold, teacher);
    REQUIRE(bam_test::bits_equal(at0.probs, teacher.probs));
    const auto mid = ds::mixed_target(0.5, gold, teacher);
    REQUIRE(mid.probs[0] == Approx(0.9).margin(1e-15));
    REQUIRE(mid.probs[1] == Approx(0.1).margin(1e-15));

    auto rg = ds::regression_target(0.25);
    md::Prediction rt;
    rt.kind = md::TaskKind::regression;
    rt.value = 0.75;
    REQUIRE(ds::mixed_target(1.0, rg, rt).value == 0.25);
    REQUIRE(ds::mixed_target(0.0, rg, rt).value == 0.75);
    REQUIRE(ds::mixed_target(0.5, rg, rt).value == Approx(0.5).margin(1e-15));
}

TEST_CASE("mixed_target validation") {
    auto gold = ds::one_hot_target(0, 2);
    md::Prediction wrong;
    wrong.probs = {0.5, 0.3, 0.2};
    REQUIRE_THROWS_AS(ds::mixed_target(0.5, gold, wrong), std::invalid_argument);
    md::Prediction reg;
    reg.kind = md::TaskKind::regression;
    REQUIRE_THROWS_AS(ds::mixed_target(0.5, gold, reg), std::invalid_argument);
    md::Prediction ok;
    ok.probs = {0.5, 0.5};
    REQUIRE_THROWS_AS(ds::mixed_target(1.5, gold, ok), std::invalid_argument);
    REQUIRE_THROWS_AS(ds::mixed_target(-0.1, gold, ok), std::invalid_argument);
}

TEST_CASE("mixed_target preserves distribution validity") {
    bam::Rng rng(41);
    for (int iter = 0; iter < 200; ++iter) {
        const std::size_t k = 2 + rng.next_index(4);
        auto gold = ds::one_hot_target(double(rng.next_index(k)), k);
        md::Prediction teacher;
        teacher.probs.resize(k);
        double sum = 0.0;
        for (auto& p : teacher.probs) {
            p = rng.uniform(0.01, 1.0);
            sum += p;
        }
        for (auto& p : teacher.probs) p /= sum;
        const auto mix = ds::mixed_target(rng.next_double(), gold, teacher);
        double total = 0.0;
        for (double p : mix.probs) {
            REQUIRE(p >= 0.0);
            REQUIRE(p <= 1.0);
            total += p;
        }
        REQUIRE(total == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("example_loss closed forms") {
    ds::TrainTarget half;
    half.probs = {0.5, 0.5};
    md::Prediction phalf;
    phalf.probs = {0.5, 0.5};
    REQUIRE(ds::example_loss(half, phalf) == Approx(std::log(2.0)).margin(1e-15));

    ds::TrainTarget skew;
    skew.probs = {0.9, 0.1};
    md::Prediction pskew;
    pskew.probs = {0.9, 0.1};
    const double want = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
    REQUIRE(ds::example_loss(skew, pskew) == Approx(want).margin(1e-15));

    md::Prediction rp;
    rp.kind = md::TaskKind::regression;
    rp.value = 0.4;
    REQUIRE(ds::example_loss(ds::regression_target(0.4), rp) == 0.0);
    REQUIRE_THROWS_AS(ds::example_loss(skew, rp), std::invalid_argument);
}

TEST_CASE("batch_loss endpoint identities over random batches") {
    const auto student = random_model(100);
    const auto t_cls = random_model(101);
    const auto t_reg = random_model(102);
    ds::TeacherAssignment none;
    ds::TeacherAssignment singles;
    singles.mode = ds::TeacherMode::single_teachers;
    singles.single = {{"CLS", &t_cls}, {"REG", &t_reg}};

    bam::Rng rng(55);
    for (int iter = 0; iter < 20; ++iter) {
        const auto batch = random_batch(rng, 1 + rng.next_index(16));

        // lambda = 1: annealed loss collapses to the supervised loss.
        const double supervised = eval_batch_loss(student, none, batch, 0.123);
        const double annealed1 = eval_batch_loss(student, singles, batch, 1.0);
        REQUIRE(std::fabs(annealed1 - supervised) < 1e-12);

        // lambda = 0: annealed loss is the pure-distillation loss.
        double pure = 0.0;
        for (const auto& item : batch) {
            const auto* teacher = singles.teacher_for(item.task_id);
            const auto tp = teacher->predict(item.x, item.task_id);
            ds::TrainTarget target;
            target.kind = tp.kind;
            target.probs = tp.probs;
            target.value = tp.value;
            pure += ds::example_loss(target, student.predict(item.x, item.task_id));
        }
        const double annealed0 = eval_batch_loss(student, singles, batch, 0.0);
        REQUIRE(std::fabs(annealed0 - pure) < 1e-12);
    }
}

TEST_CASE("empty batch and additivity") {
    const auto student = random_model(200);
    ds::TeacherAssignment none;
    REQUIRE(eval_batch_loss(student, none, {}, 0.5) == 0.0);

    bam::Rng rng(56);
    auto batch = random_batch(rng, 12);
    std::vector<ds::BatchItem> cls_only, reg_only;
    for (const auto& item : batch)
        (item.task_id == "CLS" ? cls_only : reg_only).push_back(item);
    const double whole = eval_batch_loss(student, none, batch, 1.0);
    const double parts =
        eval_batch_loss(student, none, cls_only, 1.0) + eval_batch_loss(student, none, reg_only, 1.0);
    REQUIRE(whole == Approx(parts).margin(1e-12));
}

TEST_CASE("missing teachers are rejected") {
    const auto student = random_model(300);
    const auto teacher = random_model(301);
    ds::TeacherAssignment singles;
    singles.mode = ds::TeacherMode::single_teachers;
    singles.single = {{"CLS", &teacher}};  // REG missing

    bam::Rng rng(57);
    std::vector<ds::BatchItem> batch{{"REG", {0.1, 0.2, 0.3, 0.4}, 0.5, nullptr}};
    REQUIRE_THROWS_AS(eval_batch_loss(student, singles, batch, 0.5), std::runtime_error);

    ds::TeacherAssignment multi;
    multi.mode = ds::TeacherMode::multi_teacher;  // no model attached
    REQUIRE_THROWS_AS(eval_batch_loss(student, multi, batch, 0.5), std::runtime_error);
    multi.multi = &teacher;
    REQUIRE_NOTHROW(eval_batch_loss(student, multi, batch, 0.5));
}

TEST_CASE("a student step never touches teacher parameters") {
    auto student = random_model(400);
    auto teacher = random_model(401);
    std::vector<double> teacher_before;
    for (const auto& blk : teacher.param_blocks())
        teacher_before.insert(teacher_before.end(), blk.data, blk.data + blk.size);

    ds::TeacherAssignment singles;
    singles.mode = ds::TeacherMode::single_teachers;
    singles.single = {{"CLS", &teacher}, {"REG", &teacher}};

    bam::Rng rng(58);
    const auto batch = random_batch(rng, 8);
    bam::Tape tape;
    md::TapeForward tf(tape, student);
    const auto loss = ds::batch_loss(tape, tf, student, singles, batch, 0.3);
    tape.backward(loss);
    const auto grads = tf.gradients();
    bam::optim::Adam adam(bam::optim::OptimConfig{});
    adam.step(student.param_blocks(), grads);

    std::vector<double> teacher_after;
    for (const auto& blk : teacher.param_blocks())
        teacher_after.insert(teacher_after.end(), blk.data, blk.data + blk.size);
    REQUIRE(bam_test::bits_equal(teacher_before, teacher_after));
}

TEST_CASE("annealed-batch gradients agree with finite differences") {
    auto student = random_model(500);
    const auto teacher = random_model(501);
    ds::TeacherAssignment singles;
    singles.mode = ds::TeacherMode::single_teachers;
    singles.single = {{"CLS", &teacher}, {"REG", &teacher}};

    bam::Rng rng(59);
    const auto batch = random_batch(rng, 6);
    const double lambda = 0.3;

    bam::Tape tape;
    md::TapeForward tf(tape, student);
    const auto loss = ds::batch_loss(tape, tf, student, singles, batch, lambda);
    tape.backward(loss);
    std::vector<double> analytic;
    for (const auto& g : tf.gradients()) analytic.insert(analytic.end(), g.begin(), g.end());

    std::vector<double> base;
    for (const auto& blk : student.param_blocks())
        base.insert(base.end(), blk.data, blk.data + blk.size);
    const auto fd = bam_test::fd_gradient(
        [&](const std::vector<double>& p) {
            std::size_t off = 0;
            for (auto& blk : student.param_blocks()) {
                std::copy(p.begin() + off, p.begin() + off + blk.size, blk.data);
                off += blk.size;
            }
            return eval_batch_loss(student, singles, batch, lambda);
        },
        base, 1e-6);

    REQUIRE(analytic.size() == fd.size());
    for (std::size_t i = 0; i < fd.size(); ++i)
        REQUIRE(bam_test::rel_err(analytic[i], fd[i]) < 1e-4);
}

TEST_CASE("precomputed teacher predictions match online evaluation") {
    const auto student = random_model(600);
    const auto teacher = random_model(601);
    ds::TeacherAssignment singles;
    singles.mode = ds::TeacherMode::single_teachers;
    singles.single = {{"CLS", &teacher}, {"REG", &teacher}};

    bam::Rng rng(60);
    auto batch = random_batch(rng, 10);
    const double online = eval_batch_loss(student, singles, batch, 0.4);

    std::vector<md::Prediction> preds;
    preds.reserve(batch.size());
    for (const auto& item : batch) preds.push_back(teacher.predict(item.x, item.task_id));
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i].teacher_pred = &preds[i];
    const double cached = eval_batch_loss(student, singles, batch, 0.4);
    REQUIRE(bam_test::bits_equal(online, cached));
}
