// SPDX-License-Identifier: Apache-2.0
//
// Training targets and losses. Teacher annealing mixes the gold label with a
// frozen teacher's prediction, target = lambda * y + (1 - lambda) * teacher,
// with lambda rising linearly from 0 to 1 over the run, so training moves
// smoothly from pure distillation to pure supervision. The batch loss is the
// plain sum of per-example losses across whatever tasks appear in the batch.
#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/model.hpp"
#include "bam/tensor.hpp"

namespace bam::distill {

struct AnnealSchedule {
    std::size_t total_steps = 1;  // T: optimizer steps in the student run
};

inline double lambda_at(std::size_t step, const AnnealSchedule& s) {
    if (s.total_steps == 0) throw std::invalid_argument("lambda_at: empty schedule");
    if (step >= s.total_steps) throw std::invalid_argument("lambda_at: step out of range");
    if (s.total_steps == 1) return 1.0;
    return double(step) / double(s.total_steps - 1);
}

enum class TeacherMode { none, single_teachers, multi_teacher };

/// Frozen teacher lookup. `single` maps each task to its own single-task
/// teacher; `multi` is one shared multi-task teacher covering every task.
struct TeacherAssignment {
    TeacherMode mode = TeacherMode::none;
    std::map<std::string, const model::MultiTaskModel*> single;
    const model::MultiTaskModel* multi = nullptr;

    const model::MultiTaskModel* teacher_for(const std::string& task_id) const {
        if (mode == TeacherMode::none) return nullptr;
        if (mode == TeacherMode::multi_teacher) {
            if (!multi) throw std::runtime_error("no multi-task teacher assigned");
            return multi;
        }
        auto it = single.find(task_id);
        if (it == single.end() || !it->second)
            throw std::runtime_error("no teacher for task '" + task_id + "'");
        return it->second;
    }
};

/// Either a probability vector (classification) or a scalar in [0,1]
/// (regression), depending on the task kind.
struct TrainTarget {
    model::TaskKind kind = model::TaskKind::classification;
    std::vector<double> probs;
    double value = 0.0;
};

inline TrainTarget one_hot_target(double class_index, std::size_t num_classes) {
    const std::size_t k = std::size_t(class_index);
    if (class_index != double(k) || k >= num_classes)
        throw std::invalid_argument("one_hot_target: bad class index");
    TrainTarget t;
    t.probs.assign(num_classes, 0.0);
    t.probs[k] = 1.0;
    return t;
}

inline TrainTarget regression_target(double y) {
    TrainTarget t;
    t.kind = model::TaskKind::regression;
    t.value = y;
    return t;
}

/// lambda * gold + (1 - lambda) * teacher, elementwise. Exact at both
/// endpoints: lambda = 1 returns the gold label bit-for-bit, lambda = 0 the
/// teacher prediction.
inline TrainTarget mixed_target(double lambda, const TrainTarget& gold,
                                const model::Prediction& teacher) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("mixed_target: lambda outside [0,1]");
    if (gold.kind != teacher.kind)
        throw std::invalid_argument("mixed_target: task kind mismatch");
    TrainTarget out;
    out.kind = gold.kind;
    if (gold.kind == model::TaskKind::classification) {
        if (gold.probs.size() != teacher.probs.size())
            throw std::invalid_argument("mixed_target: dimension mismatch: gold K=" +
                                        std::to_string(gold.probs.size()) + ", teacher K=" +
                                        std::to_string(teacher.probs.size()));
        out.probs.resize(gold.probs.size());
        for (std::size_t k = 0; k < out.probs.size(); ++k)
            out.probs[k] = lambda * gold.probs[k] + (1.0 - lambda) * teacher.probs[k];
    } else {
        out.value = lambda * gold.value + (1.0 - lambda) * teacher.value;
    }
    return out;
}

/// Value-mode loss of a student prediction against a (possibly mixed) target:
/// soft cross-entropy for classification, squared error for regression.
inline double example_loss(const TrainTarget& target, const model::Prediction& pred) {
    if (target.kind != pred.kind)
        throw std::invalid_argument("example_loss: task kind mismatch");
    if (target.kind == model::TaskKind::classification)
        return cross_entropy_soft(Tensor::row(target.probs), Tensor::row(pred.probs));
    return squared_error(target.value, pred.value);
}

/// One training example as the batch loss consumes it. `teacher_pred`, when
/// set, short-circuits the online teacher evaluation (used by the
/// per-example cache in the training loop).
struct BatchItem {
    std::string task_id;
    std::vector<double> x;
    double y = 0.0;
    const model::Prediction* teacher_pred = nullptr;
};

/// Resolve the training target for one example: gold label in mode `none`
/// (regardless of lambda), otherwise the annealed mix with the frozen
/// teacher's value-mode prediction.
inline TrainTarget resolve_target(const TeacherAssignment& teachers, const BatchItem& item,
                                  const model::TaskSpec& spec, double lambda) {
    TrainTarget gold = spec.kind == model::TaskKind::classification
                           ? one_hot_target(item.y, spec.num_classes)
                           : regression_target(item.y);
    if (teachers.mode == TeacherMode::none) return gold;
    if (item.teacher_pred) return mixed_target(lambda, gold, *item.teacher_pred);
    const model::MultiTaskModel* teacher = teachers.teacher_for(item.task_id);
    return mixed_target(lambda, gold, teacher->predict(item.x, item.task_id));
}

/// Summed loss over the batch as a tape node: one trunk pass for the whole
/// batch, then a per-example head, activation, and loss term. Teachers only
/// ever run in value mode, so no gradient can reach them.
inline Tape::NodeId batch_loss(Tape& tape, model::TapeForward& tf,
                               const model::MultiTaskModel& student,
                               const TeacherAssignment& teachers,
                               const std::vector<BatchItem>& batch, double lambda) {
    if (batch.empty()) return tape.leaf(Tensor::scalar(0.0));
    const std::size_t width = student.trunk_config().input_width;
    Tensor x({batch.size(), width});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].x.size() != width)
            throw std::invalid_argument("batch_loss: example " + std::to_string(i) +
                                        " has feature width " +
                                        std::to_string(batch[i].x.size()) + ", expected " +
                                        std::to_string(width));
        std::copy(batch[i].x.begin(), batch[i].x.end(), x.data.begin() + i * width);
    }

    const Tape::NodeId feats = tf.features(tf.input(std::move(x)));
    std::vector<Tape::NodeId> terms;
    terms.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::size_t ti = student.task_index(batch[i].task_id);
        const model::TaskSpec& spec = student.task_specs()[ti];
        const TrainTarget target = resolve_target(teachers, batch[i], spec, lambda);
        const Tape::NodeId logits = tf.head_logits(feats, i, ti);
        if (spec.kind == model::TaskKind::classification) {
            const Tape::NodeId probs = tape.softmax_rows_op(logits);
            terms.push_back(tape.cross_entropy_soft(Tensor::row(target.probs), probs));
        } else {
            const Tape::NodeId pred = tape.sigmoid_op(logits);
            terms.push_back(tape.squared_error(target.value, pred));
        }
    }
    return tape.sum_scalars(std::move(terms));
}

}  // namespace bam::distill
