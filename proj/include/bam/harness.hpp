// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: trains teachers and students, runs (method x seed)
// matrices with memoized teacher artifacts, and renders significance and
// summary reports. Every cell is deterministic in (config, method, seed);
// worker scheduling never changes results because all random streams are
// derived from counter-based forks of the trial seed.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bam/config.hpp"
#include "bam/distill.hpp"
#include "bam/metrics.hpp"
#include "bam/model.hpp"
#include "bam/optim.hpp"
#include "bam/results.hpp"
#include "bam/rng.hpp"
#include "bam/sampling.hpp"
#include "bam/stats.hpp"
#include "bam/synthdata.hpp"
#include "bam/tensor.hpp"

namespace bam::harness {

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    return Rng(seed).fork(tag).next_u64();
}

inline std::string join_ids(const std::vector<std::string>& ids, const std::string& sep = "+") {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += sep;
        out += ids[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Suite: datasets + task metadata in canonical (lexicographic) task order, so
// batch streams and head layouts never depend on directory enumeration order.

struct Suite {
    std::vector<model::TaskSpec> specs;
    std::vector<model::Dataset> datasets;              // parallel to specs
    std::vector<synthdata::SyntheticTaskSpec> meta;    // parallel to specs
    std::size_t input_width = 0;

    std::size_t task_index(const std::string& id) const {
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (specs[i].task_id == id) return i;
        throw std::invalid_argument("unknown task '" + id + "'");
    }
    const model::TaskSpec& spec(const std::string& id) const { return specs[task_index(id)]; }
    const model::Dataset& dataset(const std::string& id) const {
        return datasets[task_index(id)];
    }
    std::vector<std::string> task_ids() const {
        std::vector<std::string> out;
        for (const auto& s : specs) out.push_back(s.task_id);
        return out;
    }
};

namespace detail {

inline Suite suite_from_output(synthdata::SuiteGenerator::Output out) {
    std::vector<std::size_t> order(out.specs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.specs[a].task.task_id < out.specs[b].task.task_id;
    });
    Suite suite;
    for (std::size_t i : order) {
        auto spec = out.specs[i].task;
        spec.train_size = out.datasets[i].train.size();
        model::validate_dataset(out.datasets[i], spec, out.specs[i].input_width);
        suite.specs.push_back(spec);
        suite.datasets.push_back(std::move(out.datasets[i]));
        suite.meta.push_back(std::move(out.specs[i]));
        suite.input_width = suite.meta.back().input_width;
    }
    return suite;
}

}  // namespace detail

inline synthdata::SuiteConfig suite_config(const config::Config& cfg) {
    synthdata::SuiteConfig sc;
    sc.input_width = cfg.get_size("input_width");
    sc.latent_width = cfg.get_size("latent_width");
    sc.noise_rate = cfg.get_double("noise_rate");
    sc.relatedness_perturbation = cfg.get_double("relatedness_perturbation");
    sc.calibration_size = cfg.get_size("calibration_size");
    sc.dev_size = cfg.get_size("dev_size");
    sc.big_train = cfg.get_size("big_train");
    sc.small_train = cfg.get_size("small_train");
    sc.med_train = cfg.get_size("med_train");
    sc.reg_train = cfg.get_size("reg_train");
    return sc;
}

inline Suite build_suite(const config::Config& cfg, std::uint64_t suite_seed) {
    return detail::suite_from_output(synthdata::gen_suite(suite_config(cfg), suite_seed));
}

inline void write_suite(const Suite& suite, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < suite.specs.size(); ++i)
        synthdata::write_dataset(suite.datasets[i], suite.meta[i],
                                 dir + "/" + suite.specs[i].task_id + ".tsv");
}

inline Suite read_suite(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".tsv")
            paths.push_back(entry.path().string());
    if (paths.empty()) throw std::runtime_error("no datasets found in " + dir);
    synthdata::SuiteGenerator::Output out;
    for (const auto& p : paths) {
        auto [ds, spec] = synthdata::read_dataset(p);
        out.datasets.push_back(std::move(ds));
        out.specs.push_back(std::move(spec));
    }
    return detail::suite_from_output(std::move(out));
}

// ---------------------------------------------------------------------------
// Training settings derived from the config.

struct TrainSettings {
    optim::OptimConfig optim;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    double sampling_exponent = 0.75;
};

inline model::TrunkConfig trunk_from_config(const config::Config& cfg) {
    model::TrunkConfig t;
    t.input_width = cfg.get_size("input_width");
    t.hidden.clear();
    for (const auto& tok : cfg.get_list("hidden")) t.hidden.push_back(std::stoul(tok));
    if (t.hidden.empty()) throw std::invalid_argument("config key 'hidden': need >= 1 layer");
    return t;
}

inline TrainSettings student_settings(const config::Config& cfg) {
    TrainSettings ts;
    ts.optim.base_lr = cfg.get_double("base_lr");
    ts.optim.layer_decay = cfg.get_double("layer_decay");
    ts.batch_size = cfg.get_size("batch_size");
    ts.epochs = cfg.get_size("student_epochs");
    ts.sampling_exponent = cfg.get_double("sampling_exponent");
    return ts;
}

inline TrainSettings teacher_settings(const config::Config& cfg, double layer_decay) {
    TrainSettings ts = student_settings(cfg);
    ts.optim.layer_decay = layer_decay;
    ts.epochs = cfg.get_size("teacher_epochs");
    return ts;
}

inline TrainSettings finetune_settings(const config::Config& cfg) {
    TrainSettings ts = student_settings(cfg);
    ts.optim.base_lr *= cfg.get_double("finetune_lr_scale");
    ts.epochs = cfg.get_size("finetune_epochs");
    return ts;
}

/// Annealing policy for one training run: linear 0 -> 1 when `on`, otherwise a
/// constant mixing weight (fixed_lambda = 0 disables annealing entirely).
struct Anneal {
    bool on = true;
    double fixed_lambda = 1.0;
};

// ---------------------------------------------------------------------------
// Core training loop (shared by teachers, students and fine-tuning).

struct TrainLog {
    bool ok = true;
    std::string failure;
    std::size_t steps = 0;
    double first_lambda = -1.0;
    double last_lambda = -1.0;
    std::vector<double> epoch_dev;  // one entry per completed epoch, if evaluated
};

/// Called on the model at each epoch boundary; returns a dev score to log.
using EpochEval = std::function<double(const model::MultiTaskModel&)>;

inline void validate_teachers(const distill::TeacherAssignment& teachers,
                              const std::vector<std::string>& task_ids) {
    if (teachers.mode == distill::TeacherMode::none) return;
    for (const auto& id : task_ids) (void)teachers.teacher_for(id);
}

inline TrainLog train_loop(model::MultiTaskModel& m, const Suite& suite,
                           const std::vector<std::string>& task_ids,
                           const distill::TeacherAssignment& teachers, const Anneal& anneal,
                           const TrainSettings& ts, std::uint64_t stream_seed,
                           const EpochEval& epoch_eval = {}) {
    if (task_ids.empty()) throw std::invalid_argument("train_loop: no tasks");
    validate_teachers(teachers, task_ids);
    if (!anneal.on && (anneal.fixed_lambda < 0.0 || anneal.fixed_lambda > 1.0))
        throw std::invalid_argument("train_loop: fixed lambda must lie in [0,1]");

    std::vector<const model::Dataset*> data;
    std::vector<std::size_t> sizes;
    for (const auto& id : task_ids) {
        data.push_back(&suite.dataset(id));
        sizes.push_back(data.back()->train.size());
    }
    TrainLog log;
    log.steps = sampling::total_steps(sizes, ts.batch_size, ts.epochs);
    if (log.steps == 0) return log;  // zero epochs: leave the model untouched

    sampling::TaskSampler sampler(task_ids, sizes, ts.sampling_exponent,
                                  Rng(stream_seed).fork("batches"));
    const distill::AnnealSchedule sched{log.steps};
    optim::Adam adam(ts.optim);
    std::size_t total_examples = 0;
    for (std::size_t s : sizes) total_examples += s;
    std::size_t next_epoch = 1;
    // Teacher predictions depend only on (task, example index); memoize them.
    std::map<std::pair<std::size_t, std::size_t>, model::Prediction> teacher_cache;

    for (std::size_t step = 0; step < log.steps; ++step) {
        const double lam = anneal.on ? distill::lambda_at(step, sched) : anneal.fixed_lambda;
        if (step == 0) log.first_lambda = lam;
        log.last_lambda = lam;

        const auto slots = sampler.sample_batch(ts.batch_size);
        std::vector<distill::BatchItem> batch(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const auto& ex = data[slots[i].task]->train[slots[i].example];
            batch[i].task_id = task_ids[slots[i].task];
            batch[i].x = ex.x;
            batch[i].y = ex.y;
            if (teachers.mode != distill::TeacherMode::none) {
                const auto key = std::make_pair(slots[i].task, slots[i].example);
                auto it = teacher_cache.find(key);
                if (it == teacher_cache.end())
                    it = teacher_cache
                             .emplace(key, teachers.teacher_for(batch[i].task_id)
                                               ->predict(ex.x, batch[i].task_id))
                             .first;
                batch[i].teacher_pred = &it->second;
            }
        }

        Tape tape;
        model::TapeForward tf(tape, m);
        const auto loss = distill::batch_loss(tape, tf, m, teachers, batch, lam);
        const double value = tape.value(loss).data[0];
        if (!std::isfinite(value)) {
            log.ok = false;
            log.failure = "non-finite loss at step " + std::to_string(step);
            return log;
        }
        tape.backward(loss);
        adam.step(m.param_blocks(), tf.gradients());

        // Epoch boundary: one epoch equals one pass worth of examples.
        while (epoch_eval && next_epoch <= ts.epochs &&
               (step + 1) * ts.batch_size >= next_epoch * total_examples) {
            log.epoch_dev.push_back(epoch_eval(m));
            ++next_epoch;
        }
    }
    return log;
}

struct Trained {
    std::shared_ptr<model::MultiTaskModel> model;
    TrainLog log;
};

inline std::vector<model::TaskSpec> subset_specs(const Suite& suite,
                                                 const std::vector<std::string>& task_ids) {
    std::vector<model::TaskSpec> specs;
    for (const auto& id : task_ids) specs.push_back(suite.spec(id));
    return specs;
}

/// Fresh student (or teacher) trained from a seed-derived init. The stream
/// seed controls both initialization and batch order, so two runs with equal
/// streams and equal loss surfaces produce bit-identical trajectories.
inline Trained train_student(const Suite& suite, const std::vector<std::string>& task_ids,
                             const distill::TeacherAssignment& teachers, const Anneal& anneal,
                             const TrainSettings& ts, const model::TrunkConfig& trunk,
                             std::uint64_t stream_seed, std::uint64_t config_digest,
                             const EpochEval& epoch_eval = {}) {
    auto m = std::make_shared<model::MultiTaskModel>(
        model::init_model(trunk, subset_specs(suite, task_ids), stream_seed));
    m->set_config_digest(config_digest);
    for (const auto& id : task_ids) {
        const auto& meta = suite.meta[suite.task_index(id)];
        if (meta.task.kind == model::TaskKind::regression) m->set_reg_norm(id, meta.norm);
    }
    Trained t;
    t.model = m;
    t.log = train_loop(*m, suite, task_ids, teachers, anneal, ts, stream_seed, epoch_eval);
    return t;
}

/// Continue from an existing model on a single task. Heads of other tasks
/// receive exactly zero gradient, so Adam leaves them bit-identical.
inline Trained finetune_single(const model::MultiTaskModel& base, const Suite& suite,
                               const std::string& task_id, const TrainSettings& ts,
                               std::uint64_t stream_seed) {
    Trained t;
    t.model = std::make_shared<model::MultiTaskModel>(base);
    t.log = train_loop(*t.model, suite, {task_id}, {}, Anneal{}, ts, stream_seed);
    return t;
}

// ---------------------------------------------------------------------------
// Dev-set evaluation; scores use a 0-100 scale throughout the harness.

inline double eval_dev(const model::MultiTaskModel& m, const Suite& suite,
                       const std::string& task_id) {
    const auto& spec = suite.spec(task_id);
    const auto& dev = suite.dataset(task_id).dev;
    if (dev.empty()) throw std::invalid_argument("eval_dev: empty dev split for " + task_id);
    double raw = 0.0;
    if (spec.kind == model::TaskKind::classification) {
        std::vector<int> pred, gold;
        for (const auto& ex : dev) {
            pred.push_back(int(metrics::argmax_class(m.predict(ex.x, task_id).probs)));
            gold.push_back(int(ex.y));
        }
        raw = spec.metric == metrics::Metric::matthews ? metrics::matthews_corr(pred, gold)
                                                       : metrics::accuracy(pred, gold);
    } else {
        std::vector<double> pred, gold;
        for (const auto& ex : dev) {
            pred.push_back(m.predict(ex.x, task_id).value);
            gold.push_back(ex.y);
        }
        raw = metrics::spearman_corr(pred, gold);
    }
    return 100.0 * raw;
}

// ---------------------------------------------------------------------------
// Teacher training with layer-decay selection on the dev split.

struct TeacherModel {
    std::shared_ptr<const model::MultiTaskModel> model;
    double layer_decay = 1.0;
    double dev_score = 0.0;
    TrainLog log;  // from the selected candidate; carries per-epoch dev scores
};

inline TeacherModel train_teacher(const Suite& suite, const std::string& task_id,
                                  const config::Config& cfg, std::uint64_t seed) {
    std::vector<double> candidates;
    const std::string& mode = cfg.get("teacher_layer_decay");
    if (mode == "auto") {
        candidates.push_back(1.0);
        const double d = cfg.get_double("layer_decay");
        if (d != 1.0) candidates.push_back(d);
    } else {
        candidates.push_back(cfg.get_double("teacher_layer_decay"));
    }
    // Same stream for every candidate: they share the init and batch order and
    // differ only in the per-depth learning rates.
    const std::uint64_t stream = derive_seed(seed, "teacher:" + task_id);
    const auto trunk = trunk_from_config(cfg);
    TeacherModel best;
    const EpochEval log_dev = [&suite, &task_id](const model::MultiTaskModel& mm) {
        return eval_dev(mm, suite, task_id);
    };
    for (double alpha : candidates) {
        auto t = train_student(suite, {task_id}, {}, Anneal{}, teacher_settings(cfg, alpha),
                               trunk, stream, cfg.digest(), log_dev);
        if (!t.log.ok)
            throw std::runtime_error("teacher for " + task_id + ": " + t.log.failure);
        const double score = eval_dev(*t.model, suite, task_id);
        if (!best.model || score > best.dev_score) best = {t.model, alpha, score, t.log};
    }
    return best;
}

// ---------------------------------------------------------------------------
// Method grammar: base[:modifier]*, e.g. "single_multi:lambda=0:tasks=A+B".

struct MethodSpec {
    std::string name;                    // full token as given
    std::string base;                    // one of the bases below
    bool finetune = false;               // :ft
    bool has_fixed_lambda = false;       // :lambda=X or :anneal=off
    double fixed_lambda = 0.0;
    std::vector<std::string> tasks;      // :tasks=A+B; empty = whole suite
    double exponent_override = -1.0;     // :exponent=X; <0 = config value
    double layer_decay_override = -1.0;  // :layer_decay=X; <0 = config value
};

inline const std::set<std::string>& method_bases() {
    static const std::set<std::string> bases = {
        "single",       "multi",        "single_single",
        "multi_multi",  "single_multi", "single_multi_single_multi",
    };
    return bases;
}

inline MethodSpec parse_method(const std::string& token) {
    MethodSpec m;
    m.name = token;
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        const auto colon = token.find(':', pos);
        parts.push_back(token.substr(pos, colon == std::string::npos ? colon : colon - pos));
        if (colon == std::string::npos) break;
        pos = colon + 1;
    }
    m.base = parts[0];
    if (!method_bases().count(m.base))
        throw std::invalid_argument("unknown method '" + m.base + "'");
    const bool distills = m.base != "single" && m.base != "multi";
    const bool multi_output = m.base != "single" && m.base != "single_single";
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const std::string& mod = parts[i];
        if (mod == "ft") {
            if (!multi_output)
                throw std::invalid_argument("method '" + token +
                                            "': ft applies to multi-task methods only");
            m.finetune = true;
        } else if (mod == "anneal=off") {
            if (!distills)
                throw std::invalid_argument("method '" + token + "': no teacher to anneal");
            m.has_fixed_lambda = true;
            m.fixed_lambda = 0.0;
        } else if (mod.rfind("lambda=", 0) == 0) {
            if (!distills)
                throw std::invalid_argument("method '" + token + "': no teacher to mix");
            m.has_fixed_lambda = true;
            m.fixed_lambda = std::stod(mod.substr(7));
            if (m.fixed_lambda < 0.0 || m.fixed_lambda > 1.0)
                throw std::invalid_argument("method '" + token + "': lambda must lie in [0,1]");
        } else if (mod.rfind("tasks=", 0) == 0) {
            std::string rest = mod.substr(6);
            std::size_t p = 0;
            while (true) {
                const auto plus = rest.find('+', p);
                const std::string id =
                    rest.substr(p, plus == std::string::npos ? plus : plus - p);
                if (id.empty())
                    throw std::invalid_argument("method '" + token + "': empty task id");
                m.tasks.push_back(id);
                if (plus == std::string::npos) break;
                p = plus + 1;
            }
        } else if (mod.rfind("exponent=", 0) == 0) {
            m.exponent_override = std::stod(mod.substr(9));
        } else if (mod.rfind("layer_decay=", 0) == 0) {
            m.layer_decay_override = std::stod(mod.substr(12));
        } else {
            throw std::invalid_argument("method '" + token + "': unknown modifier '" + mod +
                                        "'");
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Artifact store: build-once memoization of teacher/stage checkpoints, safe
// under concurrent matrix workers. Artifacts are saved as checkpoints in the
// store directory and identified by their content digest.

struct Artifact {
    std::shared_ptr<const model::MultiTaskModel> model;
    std::uint64_t digest = 0;      // checkpoint content digest
    double layer_decay = 1.0;      // teacher candidate that won selection
    double dev_score = 0.0;        // its dev score (0-100)
};

class ArtifactStore {
  public:
    explicit ArtifactStore(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    Artifact get_or_build(const std::string& key, const std::function<Artifact()>& build) {
        std::shared_future<Artifact> fut;
        std::promise<Artifact> mine;
        bool builder = false;
        {
            std::lock_guard<std::mutex> lk(mu_);
            auto it = cache_.find(key);
            if (it == cache_.end()) {
                fut = mine.get_future().share();
                cache_.emplace(key, fut);
                builder = true;
            } else {
                fut = it->second;
            }
        }
        if (builder) {
            try {
                Artifact a = build();
                a.digest = model::save_checkpoint(*a.model, path_for(key));
                mine.set_value(std::move(a));
            } catch (...) {
                mine.set_exception(std::current_exception());
            }
        }
        return fut.get();  // rethrows the builder's failure for every consumer
    }

    std::string path_for(const std::string& key) const {
        std::string name = key;
        for (char& c : name)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
        char suffix[24];
        std::snprintf(suffix, sizeof suffix, "-%016llx",
                      static_cast<unsigned long long>(fnv1a64(key)));
        return dir_ + "/" + name + suffix + ".ckpt";
    }

  private:
    std::mutex mu_;
    std::map<std::string, std::shared_future<Artifact>> cache_;
    std::string dir_;
};

// ---------------------------------------------------------------------------
// One matrix cell: train whatever the method asks for and score it.

struct CellResult {
    results::TrialResult row;
    // Final model(s): one per task for single-output methods and fine-tuning,
    // a single entry keyed by the joined task list otherwise.
    std::vector<std::pair<std::string, std::shared_ptr<const model::MultiTaskModel>>> finals;
};

namespace detail {

inline std::string settings_tag(const TrainSettings& ts, const Anneal& anneal) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "e=%.17g:ld=%.17g:", ts.sampling_exponent,
                  ts.optim.layer_decay);
    std::string out = buf;
    if (anneal.on) {
        out += "anneal=on";
    } else {
        std::snprintf(buf, sizeof buf, "lambda=%.17g", anneal.fixed_lambda);
        out += buf;
    }
    return out;
}

inline void append_digest(std::string& teachers, std::uint64_t digest) {
    if (!teachers.empty()) teachers += ",";
    teachers += results::detail::format_hex(digest);
}

}  // namespace detail

inline CellResult run_cell(const Suite& suite, const config::Config& cfg, const MethodSpec& ms,
                           std::uint64_t seed, ArtifactStore& store) {
    CellResult cell;
    auto& row = cell.row;
    row.method = ms.name;
    row.seed = seed;
    row.config_digest = cfg.digest();
    const auto t0 = std::chrono::steady_clock::now();

    try {
        // Resolve the task list in canonical suite order.
        std::vector<std::string> ids;
        if (ms.tasks.empty()) {
            ids = suite.task_ids();
        } else {
            std::set<std::string> want(ms.tasks.begin(), ms.tasks.end());
            if (want.size() != ms.tasks.size())
                throw std::invalid_argument("method '" + ms.name + "': duplicate task");
            for (const auto& id : ms.tasks) (void)suite.task_index(id);
            for (const auto& id : suite.task_ids())
                if (want.count(id)) ids.push_back(id);
        }

        TrainSettings st = student_settings(cfg);
        if (ms.exponent_override >= 0.0) st.sampling_exponent = ms.exponent_override;
        if (ms.layer_decay_override >= 0.0) st.optim.layer_decay = ms.layer_decay_override;
        Anneal anneal;
        if (ms.has_fixed_lambda) anneal = Anneal{false, ms.fixed_lambda};
        const auto trunk = trunk_from_config(cfg);
        const std::uint64_t digest = cfg.digest();
        const std::uint64_t teacher_seed =
            cfg.get("teacher_mode") == "shared" ? cfg.seeds().front() : seed;
        const std::string tag = detail::settings_tag(st, anneal);
        std::string teachers_col;

        auto teacher_artifact = [&](const std::string& task) {
            return store.get_or_build(
                "teacher:" + task + ":seed=" + std::to_string(teacher_seed), [&] {
                    auto t = train_teacher(suite, task, cfg, teacher_seed);
                    return Artifact{t.model, 0, t.layer_decay, t.dev_score};
                });
        };
        auto check = [&](const Trained& t, const std::string& what) {
            if (!t.log.ok) throw std::runtime_error(what + ": " + t.log.failure);
        };
        // Plain multi-task baseline; also the teacher of multi_multi. Keyed by
        // its settings so ablation variants never collide.
        auto multi_artifact = [&] {
            return store.get_or_build(
                "multi:tasks=" + join_ids(ids) + ":seed=" + std::to_string(seed) + ":" +
                    detail::settings_tag(st, Anneal{}),
                [&] {
                    auto t = train_student(suite, ids, {}, Anneal{}, st, trunk,
                                           derive_seed(seed, "student:s1:" + join_ids(ids)),
                                           digest);
                    check(t, "multi");
                    return Artifact{t.model, 0, st.optim.layer_decay, 0.0};
                });
        };
        auto single_multi_artifact = [&] {
            return store.get_or_build(
                "single_multi:tasks=" + join_ids(ids) + ":seed=" + std::to_string(seed) +
                    ":tseed=" + std::to_string(teacher_seed) + ":" + tag,
                [&] {
                    distill::TeacherAssignment ta;
                    ta.mode = distill::TeacherMode::single_teachers;
                    std::vector<std::shared_ptr<const model::MultiTaskModel>> keep;
                    for (const auto& id : ids) {
                        Artifact a = teacher_artifact(id);
                        keep.push_back(a.model);
                        ta.single[id] = a.model.get();
                    }
                    auto t = train_student(suite, ids, ta, anneal, st, trunk,
                                           derive_seed(seed, "student:s1:" + join_ids(ids)),
                                           digest);
                    check(t, "single_multi");
                    return Artifact{t.model, 0, st.optim.layer_decay, 0.0};
                });
        };

        std::shared_ptr<const model::MultiTaskModel> final_model;  // multi-output bases

        if (ms.base == "single") {
            for (const auto& id : ids) {
                Artifact a = teacher_artifact(id);
                row.scores[id] = a.dev_score;
                cell.finals.emplace_back(id, a.model);
            }
        } else if (ms.base == "single_single") {
            for (const auto& id : ids) {
                Artifact a = teacher_artifact(id);
                detail::append_digest(teachers_col, a.digest);
                distill::TeacherAssignment ta;
                ta.mode = distill::TeacherMode::single_teachers;
                ta.single[id] = a.model.get();
                auto t = train_student(suite, {id}, ta, anneal, st, trunk,
                                       derive_seed(seed, "student:s1:" + id), digest);
                check(t, "single_single " + id);
                row.scores[id] = eval_dev(*t.model, suite, id);
                cell.finals.emplace_back(id, t.model);
            }
        } else if (ms.base == "multi") {
            final_model = multi_artifact().model;
        } else if (ms.base == "multi_multi") {
            Artifact teacher = multi_artifact();
            detail::append_digest(teachers_col, teacher.digest);
            distill::TeacherAssignment ta;
            ta.mode = distill::TeacherMode::multi_teacher;
            ta.multi = teacher.model.get();
            auto t = train_student(suite, ids, ta, anneal, st, trunk,
                                   derive_seed(seed, "student:s1:" + join_ids(ids)), digest);
            check(t, "multi_multi");
            final_model = t.model;
        } else if (ms.base == "single_multi") {
            for (const auto& id : ids)
                detail::append_digest(teachers_col, teacher_artifact(id).digest);
            final_model = single_multi_artifact().model;
        } else if (ms.base == "single_multi_single_multi") {
            for (const auto& id : ids)
                detail::append_digest(teachers_col, teacher_artifact(id).digest);
            Artifact stage2 = single_multi_artifact();
            detail::append_digest(teachers_col, stage2.digest);
            distill::TeacherAssignment from_multi;
            from_multi.mode = distill::TeacherMode::multi_teacher;
            from_multi.multi = stage2.model.get();
            distill::TeacherAssignment stage4;
            stage4.mode = distill::TeacherMode::single_teachers;
            std::vector<std::shared_ptr<const model::MultiTaskModel>> keep;
            for (const auto& id : ids) {
                Artifact a = store.get_or_build(
                    "chain_single:" + id + ":seed=" + std::to_string(seed) +
                        ":tseed=" + std::to_string(teacher_seed) + ":" + tag,
                    [&] {
                        auto t = train_student(suite, {id}, from_multi, anneal, st, trunk,
                                               derive_seed(seed, "student:s2:" + id), digest);
                        check(t, "chain stage-3 " + id);
                        return Artifact{t.model, 0, st.optim.layer_decay, 0.0};
                    });
                detail::append_digest(teachers_col, a.digest);
                keep.push_back(a.model);
                stage4.single[id] = a.model.get();
            }
            auto t = train_student(suite, ids, stage4, anneal, st, trunk,
                                   derive_seed(seed, "student:s3:" + join_ids(ids)), digest);
            check(t, "chain stage-4");
            final_model = t.model;
        }

        if (final_model) {
            if (ms.finetune) {
                const TrainSettings fts = finetune_settings(cfg);
                for (const auto& id : ids) {
                    auto t = finetune_single(*final_model, suite, id, fts,
                                             derive_seed(seed, "finetune:" + id));
                    check(t, "finetune " + id);
                    row.scores[id] = eval_dev(*t.model, suite, id);
                    cell.finals.emplace_back(id, t.model);
                }
            } else {
                for (const auto& id : ids) row.scores[id] = eval_dev(*final_model, suite, id);
                cell.finals.emplace_back(join_ids(ids), final_model);
            }
        }

        row.teachers = teachers_col.empty() ? "-" : teachers_col;
        double sum = 0.0;
        for (const auto& [id, s] : row.scores) sum += s;
        row.average = sum / double(row.scores.size());
    } catch (const std::exception& e) {
        row.ok = false;
        row.status = std::string("failed: ") + e.what();
        row.scores.clear();
        row.average = 0.0;
        cell.finals.clear();
    }

    row.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cell;
}

// ---------------------------------------------------------------------------
// Matrix runner: (method x seed) grid, resumable, deterministic under any
// worker count. Rows are written in grid order regardless of which worker
// finishes first.

struct MatrixOptions {
    std::string out_dir;
    std::size_t parallel = 1;
    bool resume = false;
};

inline bool run_matrix(const config::Config& cfg, const Suite& suite,
                       const MatrixOptions& opt) {
    if (opt.out_dir.empty()) throw std::invalid_argument("run_matrix: output dir required");
    std::filesystem::create_directories(opt.out_dir);
    std::vector<MethodSpec> methods;
    for (const auto& tok : cfg.get_list("methods")) methods.push_back(parse_method(tok));
    if (methods.empty()) throw std::invalid_argument("run_matrix: no methods configured");
    const auto seeds = cfg.seeds();
    const auto task_ids = suite.task_ids();
    const std::string results_path = opt.out_dir + "/results.tsv";

    bool prior_failures = false;
    std::set<std::pair<std::string, std::uint64_t>> done;
    std::ofstream out;
    if (opt.resume && std::filesystem::exists(results_path)) {
        const auto prior = results::read_results(results_path);
        if (prior.task_ids != task_ids)
            throw std::runtime_error("resume: results file covers a different task suite");
        for (const auto& r : prior.rows) {
            if (r.config_digest != cfg.digest())
                throw std::runtime_error("resume: results row for a different config digest");
            done.insert({r.method, r.seed});
            prior_failures |= !r.ok;
        }
        out.open(results_path, std::ios::app);
    } else {
        out.open(results_path, std::ios::trunc);
        out << results::header_line(task_ids) << "\n" << std::flush;
    }
    if (!out) throw std::runtime_error("cannot write results file: " + results_path);

    struct Job {
        const MethodSpec* method;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& m : methods)
        for (std::uint64_t s : seeds)
            if (!done.count({m.name, s})) jobs.push_back({&m, s});

    ArtifactStore store(opt.out_dir + "/checkpoints");
    std::mutex write_mu;
    std::map<std::size_t, std::string> pending;
    std::size_t next_to_write = 0;
    std::atomic<std::size_t> next_job{0};
    std::atomic<bool> any_failed{prior_failures};

    auto worker = [&] {
        while (true) {
            const std::size_t idx = next_job.fetch_add(1);
            if (idx >= jobs.size()) return;
            auto cell = run_cell(suite, cfg, *jobs[idx].method, jobs[idx].seed, store);
            if (!cell.row.ok) any_failed = true;
            std::lock_guard<std::mutex> lk(write_mu);
            pending[idx] = results::row_line(cell.row, task_ids);
            while (!pending.empty() && pending.begin()->first == next_to_write) {
                out << pending.begin()->second << "\n" << std::flush;
                pending.erase(pending.begin());
                ++next_to_write;
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(opt.parallel, jobs.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return !any_failed.load();
}

// ---------------------------------------------------------------------------
// Significance report: pairwise method comparisons per score column, with
// Holm-Bonferroni correction across every cell of the report.

struct Comparison {
    std::string better;  // hypothesis: better > worse
    std::string worse;
};

inline std::vector<Comparison> parse_comparisons(const std::vector<std::string>& tokens) {
    std::vector<Comparison> out;
    for (const auto& tok : tokens) {
        const auto gt = tok.find('>');
        if (gt == std::string::npos || gt == 0 || gt + 1 == tok.size() ||
            tok.find('>', gt + 1) != std::string::npos)
            throw std::invalid_argument("comparison must look like methodA>methodB: '" + tok +
                                        "'");
        out.push_back({tok.substr(0, gt), tok.substr(gt + 1)});
    }
    if (out.empty()) throw std::invalid_argument("no comparisons given");
    return out;
}

struct SigCell {
    std::string comparison;
    std::string column;  // task id or "average"
    double median_a = 0.0;
    double median_b = 0.0;
    double delta = 0.0;
    double p_raw = 1.0;
    double p_holm = 1.0;
    std::string stars;  // "", "*", "**", "***"
    bool reject = false;
};

struct SigReport {
    std::vector<SigCell> cells;
    std::string tsv;
    std::string table;
};

namespace detail {

inline std::string stars_for(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

inline std::string fixed1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

inline std::string sci4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string pad(const std::string& s, std::size_t width, bool left) {
    if (s.size() >= width) return s;
    const std::string fill(width - s.size(), ' ');
    return left ? s + fill : fill + s;
}

inline std::string render_rows(const std::vector<std::vector<std::string>>& rows,
                               std::size_t left_cols) {
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
        if (widths.size() < r.size()) widths.resize(r.size(), 0);
        for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
    }
    std::string out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out += "  ";
            out += pad(r[i], widths[i], i < left_cols);
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += "\n";
    }
    return out;
}

}  // namespace detail

inline SigReport significance_report(const results::ResultsFile& rf,
                                     const std::vector<Comparison>& comparisons, double alpha,
                                     const std::string& test, std::size_t resamples,
                                     std::uint64_t seed = 0) {
    if (test != "mannwhitney" && test != "bootstrap")
        throw std::invalid_argument("unknown significance test '" + test + "'");
    std::map<std::string, std::vector<const results::TrialResult*>> by_method;
    for (const auto& r : rf.rows)
        if (r.ok) by_method[r.method].push_back(&r);
    for (const auto& c : comparisons)
        for (const auto& m : {c.better, c.worse}) {
            auto it = by_method.find(m);
            if (it == by_method.end())
                throw std::invalid_argument("unknown method in comparison: '" + m + "'");
            if (it->second.size() < 5)
                throw std::invalid_argument("method '" + m + "' has only " +
                                            std::to_string(it->second.size()) +
                                            " successful trials; need at least 5");
        }

    std::vector<std::string> columns = rf.task_ids;
    columns.push_back("average");
    auto collect = [&](const std::string& method, const std::string& col) {
        std::vector<double> vals;
        for (const auto* r : by_method.at(method)) {
            if (col == "average") {
                vals.push_back(r->average);
            } else {
                auto it = r->scores.find(col);
                if (it == r->scores.end()) return std::vector<double>{};  // not trained
                vals.push_back(it->second);
            }
        }
        return vals;
    };

    SigReport report;
    std::vector<double> raw_ps;
    for (const auto& c : comparisons) {
        for (const auto& col : columns) {
            const auto a = collect(c.better, col);
            const auto b = collect(c.worse, col);
            if (a.size() < 5 || b.size() < 5) continue;  // column not shared by both
            SigCell cell;
            cell.comparison = c.better + ">" + c.worse;
            cell.column = col;
            cell.median_a = stats::median_of_trials(a);
            cell.median_b = stats::median_of_trials(b);
            cell.delta = cell.median_a - cell.median_b;
            if (test == "mannwhitney") {
                cell.p_raw = stats::mann_whitney_u(a, b).p;
            } else {
                cell.p_raw = stats::bootstrap_test(
                    a, b, int(resamples),
                    derive_seed(seed, "bootstrap:" + cell.comparison + ":" + col));
            }
            raw_ps.push_back(cell.p_raw);
            report.cells.push_back(std::move(cell));
        }
    }
    if (report.cells.empty())
        throw std::invalid_argument("no shared score columns between compared methods");

    const auto holm = stats::holm_bonferroni(raw_ps, alpha);
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        auto& cell = report.cells[i];
        cell.p_holm = holm.adjusted_p[i];
        // Stars mark significant improvement only; a significant result in the
        // wrong direction (or a self-comparison) earns none.
        if (cell.delta > 0.0) {
            cell.stars = detail::stars_for(cell.p_holm);
            cell.reject = holm.reject[i];
        }
    }

    std::ostringstream tsv;
    tsv << "comparison\tcolumn\tmedian_a\tmedian_b\tdelta\tp_raw\tp_holm\tstars\treject\n";
    for (const auto& cell : report.cells) {
        tsv << cell.comparison << "\t" << cell.column << "\t"
            << results::detail::format_double(cell.median_a) << "\t"
            << results::detail::format_double(cell.median_b) << "\t"
            << results::detail::format_double(cell.delta) << "\t"
            << results::detail::format_double(cell.p_raw) << "\t"
            << results::detail::format_double(cell.p_holm) << "\t"
            << (cell.stars.empty() ? "-" : cell.stars) << "\t"
            << (cell.reject ? "yes" : "no") << "\n";
    }
    report.tsv = tsv.str();

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"comparison", "column", "median A", "median B", "delta", "p", "p (Holm)",
                    "sig"});
    for (const auto& cell : report.cells)
        rows.push_back({cell.comparison, cell.column, detail::fixed1(cell.median_a),
                        detail::fixed1(cell.median_b), detail::fixed1(cell.delta),
                        detail::sci4(cell.p_raw), detail::sci4(cell.p_holm), cell.stars});
    report.table = std::string(test == "mannwhitney" ? "Mann-Whitney U" : "bootstrap") +
                   ", Holm-corrected, alpha=" + detail::sci4(alpha) + "\n" +
                   detail::render_rows(rows, 2);
    return report;
}

// ---------------------------------------------------------------------------
// Summary report: per-method medians plus the best single trial by average
// dev score (a post-hoc view; medians are the headline numbers).

inline std::string render_report(const results::ResultsFile& rf) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const results::TrialResult*>> ok_rows;
    std::vector<const results::TrialResult*> failed;
    for (const auto& r : rf.rows) {
        if (std::find(order.begin(), order.end(), r.method) == order.end())
            order.push_back(r.method);
        if (r.ok)
            ok_rows[r.method].push_back(&r);
        else
            failed.push_back(&r);
    }

    auto score_cells = [&](auto&& get) {
        std::vector<std::string> cells;
        for (const auto& id : rf.task_ids) cells.push_back(get(id));
        return cells;
    };

    std::vector<std::vector<std::string>> med_rows;
    {
        std::vector<std::string> head = {"method", "n"};
        for (const auto& id : rf.task_ids) head.push_back(id);
        head.push_back("average");
        med_rows.push_back(head);
    }
    std::vector<std::vector<std::string>> best_rows;
    {
        std::vector<std::string> head = {"method", "seed"};
        for (const auto& id : rf.task_ids) head.push_back(id);
        head.push_back("average");
        best_rows.push_back(head);
    }

    for (const auto& method : order) {
        auto it = ok_rows.find(method);
        if (it == ok_rows.end()) continue;
        const auto& rows = it->second;
        std::vector<std::string> line = {method, std::to_string(rows.size())};
        for (const auto& cell : score_cells([&](const std::string& id) -> std::string {
                 std::vector<double> vals;
                 for (const auto* r : rows) {
                     auto s = r->scores.find(id);
                     if (s != r->scores.end()) vals.push_back(s->second);
                 }
                 return vals.empty() ? "-" : detail::fixed1(stats::median_of_trials(vals));
             }))
            line.push_back(cell);
        {
            std::vector<double> avgs;
            for (const auto* r : rows) avgs.push_back(r->average);
            line.push_back(detail::fixed1(stats::median_of_trials(avgs)));
        }
        med_rows.push_back(line);

        const results::TrialResult* best = rows.front();
        for (const auto* r : rows)
            if (r->average > best->average) best = r;
        std::vector<std::string> bline = {method, std::to_string(best->seed)};
        for (const auto& cell : score_cells([&](const std::string& id) -> std::string {
                 auto s = best->scores.find(id);
                 return s == best->scores.end() ? "-" : detail::fixed1(s->second);
             }))
            bline.push_back(cell);
        bline.push_back(detail::fixed1(best->average));
        best_rows.push_back(bline);
    }

    std::string out = "median dev score over trials (0-100)\n";
    out += detail::render_rows(med_rows, 1);
    out += "\nbest trial by average dev score (post-hoc view)\n";
    out += detail::render_rows(best_rows, 1);
    if (!failed.empty()) {
        out += "\nfailed cells\n";
        for (const auto* r : failed)
            out += "  " + r->method + " seed " + std::to_string(r->seed) + ": " + r->status +
                   "\n";
    }
    return out;
}

}  // namespace bam::harness
