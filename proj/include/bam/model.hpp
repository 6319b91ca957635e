// SPDX-License-Identifier: Apache-2.0
//
// Shared-trunk multi-task model: a stack of dense tanh layers feeding one
// tiny head per task (softmax matrix for classification, sigmoid dot-product
// for regression). Heads are bias-free and task-specific; every trunk
// parameter is shared. Checkpoints are a self-checking binary container.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bam/metrics.hpp"
#include "bam/optim.hpp"
#include "bam/rng.hpp"
#include "bam/tensor.hpp"

namespace bam::model {

enum class TaskKind : std::uint8_t { classification = 0, regression = 1 };

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::classification;
    std::size_t num_classes = 2;  // K; ignored for regression
    metrics::Metric metric = metrics::Metric::accuracy;
    std::size_t train_size = 0;

    bool operator==(const TaskSpec& o) const {
        return task_id == o.task_id && kind == o.kind &&
               (kind == TaskKind::regression || num_classes == o.num_classes);
    }
};

struct Example {
    std::vector<double> x;
    double y = 0.0;  // class index for classification, real in [0,1] for regression
};

struct Dataset {
    std::string task_id;
    std::vector<Example> train;
    std::vector<Example> dev;
};

/// Reject examples whose features or labels fall outside the task contract.
inline void validate_dataset(const Dataset& ds, const TaskSpec& spec, std::size_t input_width) {
    if (ds.task_id != spec.task_id)
        throw std::invalid_argument("dataset task '" + ds.task_id + "' does not match spec '" +
                                    spec.task_id + "'");
    auto check_split = [&](const std::vector<Example>& split, const char* name) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const Example& ex = split[i];
            if (ex.x.size() != input_width)
                throw std::invalid_argument(ds.task_id + " " + name + " example " +
                                            std::to_string(i) + ": feature width " +
                                            std::to_string(ex.x.size()) + ", expected " +
                                            std::to_string(input_width));
            if (spec.kind == TaskKind::classification) {
                const double k = ex.y;
                if (k != double(std::size_t(k)) || std::size_t(k) >= spec.num_classes)
                    throw std::invalid_argument(ds.task_id + " " + name + " example " +
                                                std::to_string(i) + ": bad class label");
            } else if (ex.y < 0.0 || ex.y > 1.0) {
                throw std::invalid_argument(ds.task_id + " " + name + " example " +
                                            std::to_string(i) + ": regression label outside [0,1]");
            }
        }
    };
    check_split(ds.train, "train");
    check_split(ds.dev, "dev");
}

struct TrunkConfig {
    std::size_t input_width = 32;
    std::vector<std::size_t> hidden = {64, 64};
};

/// Unified prediction: probs for classification (length K), value for
/// regression (strictly inside (0,1)).
struct Prediction {
    TaskKind kind = TaskKind::classification;
    std::vector<double> probs;
    double value = 0.0;
};

struct RegNorm {
    double lo = 0.0;
    double hi = 1.0;
};

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / double(fan_in + fan_out));
}

class MultiTaskModel {
  public:
    MultiTaskModel() = default;

    // Trunk weights are Glorot-uniform in the seed's "model-init" substream;
    // biases and heads start at zero, so all shape-compatible students line
    // up with their teachers parameter-for-parameter.
    MultiTaskModel(TrunkConfig cfg, std::vector<TaskSpec> specs, std::uint64_t seed)
        : cfg_(std::move(cfg)), specs_(std::move(specs)), seed_(seed) {
        if (specs_.empty()) throw std::invalid_argument("init_model: at least one task required");
        if (cfg_.input_width == 0 || cfg_.hidden.empty())
            throw std::invalid_argument("init_model: trunk must have input width and >= 1 layer");
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const TaskSpec& s = specs_[i];
            if (s.task_id.empty()) throw std::invalid_argument("init_model: empty task_id");
            if (s.kind == TaskKind::classification && s.num_classes < 2)
                throw std::invalid_argument("init_model: classification needs K >= 2");
            if (!index_.emplace(s.task_id, i).second)
                throw std::invalid_argument("init_model: duplicate task_id '" + s.task_id + "'");
        }

        Rng rng = Rng(seed).fork("model-init");
        std::size_t in = cfg_.input_width;
        for (std::size_t out : cfg_.hidden) {
            Tensor w({in, out});
            const double bound = glorot_bound(in, out);
            for (double& v : w.data) v = rng.uniform(-bound, bound);
            trunk_w_.push_back(std::move(w));
            trunk_b_.push_back(Tensor({out}));
            in = out;
        }
        for (const TaskSpec& s : specs_) {
            const std::size_t k = s.kind == TaskKind::classification ? s.num_classes : 1;
            heads_.push_back(Tensor({trunk_width(), k}));
        }
        reg_norm_.assign(specs_.size(), RegNorm{});
    }

    const TrunkConfig& trunk_config() const { return cfg_; }
    const std::vector<TaskSpec>& task_specs() const { return specs_; }
    std::size_t trunk_width() const { return cfg_.hidden.back(); }
    std::size_t trunk_layers() const { return trunk_w_.size(); }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t config_digest() const { return config_digest_; }
    void set_config_digest(std::uint64_t d) { config_digest_ = d; }

    std::size_t task_index(const std::string& task_id) const {
        auto it = index_.find(task_id);
        if (it == index_.end())
            throw std::invalid_argument("unknown task '" + task_id + "'");
        return it->second;
    }
    bool has_task(const std::string& task_id) const { return index_.count(task_id) != 0; }

    Tensor& head(const std::string& task_id) { return heads_[task_index(task_id)]; }
    const Tensor& head(const std::string& task_id) const { return heads_[task_index(task_id)]; }

    RegNorm reg_norm(const std::string& task_id) const { return reg_norm_[task_index(task_id)]; }
    void set_reg_norm(const std::string& task_id, RegNorm n) {
        reg_norm_[task_index(task_id)] = n;
    }

    /// Batch of inputs (m x input_width) -> trunk representation (m x width).
    Tensor features(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != cfg_.input_width)
            throw std::invalid_argument("features: input " + x.shape_str() + ", expected [m x " +
                                        std::to_string(cfg_.input_width) + "]");
        Tensor h = x;
        for (std::size_t l = 0; l < trunk_w_.size(); ++l)
            h = tanh_map(add_row_bias(matmul(h, trunk_w_[l]), trunk_b_[l]));
        return h;
    }

    Prediction predict(const std::vector<double>& x, const std::string& task_id) const {
        const std::size_t ti = task_index(task_id);
        const Tensor c = features(Tensor::row(x));
        const Tensor logits = matmul(c, heads_[ti]);
        Prediction p;
        p.kind = specs_[ti].kind;
        if (p.kind == TaskKind::classification) {
            p.probs = softmax_rows(logits).data;
        } else {
            p.value = sigmoid_scalar(logits.data[0]);
        }
        return p;
    }

    /// Parameter views in serialization order: trunk (W, b) pairs from the
    /// input side, then heads in task order. Depth 0 = heads, depth 1 = last
    /// trunk layer, rising toward the input.
    std::vector<optim::ParamView> param_blocks() {
        std::vector<optim::ParamView> out;
        const std::size_t L = trunk_w_.size();
        for (std::size_t l = 0; l < L; ++l) {
            out.push_back({trunk_w_[l].data.data(), trunk_w_[l].size(), L - l});
            out.push_back({trunk_b_[l].data.data(), trunk_b_[l].size(), L - l});
        }
        for (Tensor& h : heads_) out.push_back({h.data.data(), h.size(), 0});
        return out;
    }

    bool same_shapes(const MultiTaskModel& o) const {
        if (trunk_w_.size() != o.trunk_w_.size() || heads_.size() != o.heads_.size()) return false;
        for (std::size_t l = 0; l < trunk_w_.size(); ++l)
            if (!trunk_w_[l].same_shape(o.trunk_w_[l]) || !trunk_b_[l].same_shape(o.trunk_b_[l]))
                return false;
        for (std::size_t i = 0; i < heads_.size(); ++i)
            if (!heads_[i].same_shape(o.heads_[i])) return false;
        return true;
    }

    /// Raises if the checkpointed task table differs from what the caller
    /// expects (id, kind, and class count, in order).
    void require_tasks(const std::vector<TaskSpec>& expected) const {
        auto describe = [](const std::vector<TaskSpec>& v) {
            std::string s;
            for (const auto& t : v) {
                if (!s.empty()) s += ",";
                s += t.task_id;
            }
            return s;
        };
        if (specs_.size() != expected.size() ||
            !std::equal(specs_.begin(), specs_.end(), expected.begin()))
            throw std::runtime_error("checkpoint task table [" + describe(specs_) +
                                     "] does not match expected [" + describe(expected) + "]");
    }

    const Tensor& trunk_weight(std::size_t l) const { return trunk_w_[l]; }
    const Tensor& trunk_bias(std::size_t l) const { return trunk_b_[l]; }
    const Tensor& head_at(std::size_t i) const { return heads_[i]; }

  private:
    std::vector<Tensor> trunk_w_, trunk_b_;
    std::vector<Tensor> heads_;
    TrunkConfig cfg_;
    std::vector<TaskSpec> specs_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<RegNorm> reg_norm_;
    std::uint64_t seed_ = 0;
    std::uint64_t config_digest_ = 0;

    friend std::uint64_t save_checkpoint(const MultiTaskModel&, const std::string&);
    friend MultiTaskModel load_checkpoint(const std::string&);
};

inline MultiTaskModel init_model(TrunkConfig cfg, std::vector<TaskSpec> specs,
                                 std::uint64_t seed) {
    return MultiTaskModel(std::move(cfg), std::move(specs), seed);
}

// ---------------------------------------------------------------------------
// Tape binding: register all parameters as leaves and build the forward graph
// for a batch. Gradient extraction mirrors param_blocks() ordering.
// ---------------------------------------------------------------------------

class TapeForward {
  public:
    TapeForward(Tape& tape, const MultiTaskModel& m) : tape_(tape), model_(m) {
        for (std::size_t l = 0; l < m.trunk_layers(); ++l) {
            w_.push_back(tape.leaf(m.trunk_weight(l)));
            b_.push_back(tape.leaf(m.trunk_bias(l)));
        }
        for (std::size_t i = 0; i < m.task_specs().size(); ++i)
            heads_.push_back(tape.leaf(m.head_at(i)));
    }

    Tape::NodeId input(Tensor x_batch) { return tape_.leaf(std::move(x_batch)); }

    /// Whole-batch trunk: m x input_width -> m x trunk_width.
    Tape::NodeId features(Tape::NodeId x) {
        Tape::NodeId h = x;
        for (std::size_t l = 0; l < w_.size(); ++l)
            h = tape_.tanh_op(tape_.add_row_bias(tape_.matmul(h, w_[l]), b_[l]));
        return h;
    }

    /// One example's head logits: 1 x K (classification) or 1 x 1 (regression).
    Tape::NodeId head_logits(Tape::NodeId features, std::size_t row, std::size_t task_index) {
        return tape_.matmul(tape_.row(features, row), heads_[task_index]);
    }

    /// Adjoints in param_blocks() order; call after tape.backward().
    std::vector<std::vector<double>> gradients() const {
        std::vector<std::vector<double>> out;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            out.push_back(tape_.adjoint(w_[l]));
            out.push_back(tape_.adjoint(b_[l]));
        }
        for (Tape::NodeId h : heads_) out.push_back(tape_.adjoint(h));
        return out;
    }

  private:
    Tape& tape_;
    const MultiTaskModel& model_;
    std::vector<Tape::NodeId> w_, b_, heads_;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, config, task table, raw little-endian f64
// parameter blobs, trailing FNV-1a checksum of everything before it. The
// checksum doubles as a content digest.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kMagic[8] = {'B', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}
inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, std::uint32_t(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void put_tensor(std::string& out, const Tensor& t) {
    for (double v : t.data) put_f64(out, v);
}
inline void read_tensor(Reader& r, Tensor& t) {
    for (double& v : t.data) v = r.f64();
}

}  // namespace detail

/// Returns the checksum, which also serves as the checkpoint's content digest.
inline std::uint64_t save_checkpoint(const MultiTaskModel& m, const std::string& path) {
    std::string out;
    out.append(detail::kMagic, 8);
    detail::put_u32(out, detail::kVersion);
    detail::put_u64(out, m.seed_);
    detail::put_u64(out, m.config_digest_);
    detail::put_u32(out, std::uint32_t(m.cfg_.input_width));
    detail::put_u32(out, std::uint32_t(m.cfg_.hidden.size()));
    for (std::size_t h : m.cfg_.hidden) detail::put_u32(out, std::uint32_t(h));
    detail::put_u32(out, std::uint32_t(m.specs_.size()));
    for (std::size_t i = 0; i < m.specs_.size(); ++i) {
        const TaskSpec& s = m.specs_[i];
        detail::put_str(out, s.task_id);
        out.push_back(char(s.kind));
        detail::put_u32(out, std::uint32_t(s.num_classes));
        out.push_back(char(s.metric));
        detail::put_u64(out, s.train_size);
        detail::put_f64(out, m.reg_norm_[i].lo);
        detail::put_f64(out, m.reg_norm_[i].hi);
    }
    for (std::size_t l = 0; l < m.trunk_w_.size(); ++l) {
        detail::put_tensor(out, m.trunk_w_[l]);
        detail::put_tensor(out, m.trunk_b_[l]);
    }
    for (const Tensor& h : m.heads_) detail::put_tensor(out, h);
    detail::put_u64(out, fnv1a64(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("short write on checkpoint: " + path);
    // Checksum of the payload (everything before the trailing 8 bytes).
    return fnv1a64(out.data(), out.size() - 8);
}

inline MultiTaskModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 8) throw std::runtime_error("checkpoint truncated");

    const std::string payload = buf.substr(0, buf.size() - 8);
    detail::Reader tail{buf, buf.size() - 8};
    if (tail.u64() != fnv1a64(payload.data(), payload.size()))
        throw std::runtime_error("checkpoint checksum mismatch (corrupt or truncated): " + path);

    detail::Reader r{payload};
    r.need(8);
    if (std::memcmp(payload.data(), detail::kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != detail::kVersion)
        throw std::runtime_error("unsupported checkpoint format version " +
                                 std::to_string(version));

    const std::uint64_t seed = r.u64();
    const std::uint64_t digest = r.u64();
    TrunkConfig cfg;
    cfg.input_width = r.u32();
    cfg.hidden.resize(r.u32());
    for (auto& h : cfg.hidden) h = r.u32();

    std::vector<TaskSpec> specs(r.u32());
    std::vector<RegNorm> norms(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].task_id = r.str();
        r.need(1);
        specs[i].kind = TaskKind(std::uint8_t(payload[r.pos++]));
        specs[i].num_classes = r.u32();
        r.need(1);
        specs[i].metric = metrics::Metric(std::uint8_t(payload[r.pos++]));
        specs[i].train_size = r.u64();
        norms[i].lo = r.f64();
        norms[i].hi = r.f64();
    }

    MultiTaskModel m(cfg, specs, seed);
    m.config_digest_ = digest;
    m.reg_norm_ = norms;
    for (std::size_t l = 0; l < m.trunk_w_.size(); ++l) {
        detail::read_tensor(r, m.trunk_w_[l]);
        detail::read_tensor(r, m.trunk_b_[l]);
    }
    for (Tensor& h : m.heads_) detail::read_tensor(r, h);
    if (r.pos != payload.size())
        throw std::runtime_error("checkpoint has trailing bytes: " + path);
    return m;
}

}  // namespace bam::model
