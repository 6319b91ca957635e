// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor math with reverse-mode automatic differentiation.
// Everything is 64-bit, row-major and define-by-run: each training step
// records its forward pass on a fresh Tape, then one backward() call fills
// adjoints for every reachable leaf.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bam {

struct Tensor {
    std::vector<std::size_t> shape;  // rank 1 (vector) or 2 (matrix)
    std::vector<double> data;        // row-major

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)) {
        data.assign(count(shape), fill);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor row(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor({1, n}, std::move(d));
    }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : shape[0]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
};

namespace detail {

inline void matmul_kernel(const double* a, const double* b, double* out,
                          std::size_t m, std::size_t k, std::size_t n) {
    // out (m x n) += a (m x k) * b (k x n); caller zeroes out.
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* oi = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) oi[j] += av * bp[j];
        }
    }
}

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a rank-2 tensor, got " +
                                    t.shape_str());
}

constexpr double kLogFloor = 1e-12;  // probability floor inside log

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-mode kernels (no tape). The tape ops below share these.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shape_str() +
                                    " * " + b.shape_str());
    Tensor out({a.rows(), b.cols()});
    detail::matmul_kernel(a.data.data(), b.data.data(), out.data.data(), a.rows(), a.cols(),
                          b.cols());
    return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& z) {
    detail::require_matrix(z, "softmax_rows");
    Tensor out(z.shape);
    const std::size_t m = z.rows(), n = z.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* zi = z.data.data() + i * n;
        double* oi = out.data.data() + i * n;
        double mx = zi[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            oi[j] = std::exp(zi[j] - mx);
            sum += oi[j];
        }
        for (std::size_t j = 0; j < n; ++j) oi[j] /= sum;
    }
    return out;
}

inline double sigmoid_scalar(double z) {
    double v;
    if (z >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        v = e / (1.0 + e);
    }
    // Keep the open interval (0,1) even where the quotient rounds to 0 or 1.
    if (v >= 1.0) v = 1.0 - 1.1102230246251565e-16;  // 1 - 2^-53
    if (v <= 0.0) v = 2.2250738585072014e-308;
    return v;
}

inline Tensor sigmoid(const Tensor& z) {
    Tensor out(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = sigmoid_scalar(z.data[i]);
    return out;
}

inline Tensor tanh_map(const Tensor& z) {
    Tensor out(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = std::tanh(z.data[i]);
    return out;
}

/// m (r x c) + bias broadcast over rows. bias is rank-1 of length c.
inline Tensor add_row_bias(const Tensor& m, const Tensor& bias) {
    detail::require_matrix(m, "add_row_bias");
    if (bias.rank() != 1 || bias.shape[0] != m.cols())
        throw std::invalid_argument("add_row_bias: bias " + bias.shape_str() +
                                    " does not match matrix " + m.shape_str());
    Tensor out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out.data[i * m.cols() + j] += bias.data[j];
    return out;
}

/// -sum_k target_k * log(max(pred_k, 1e-12)). Both arguments are flat
/// probability vectors of equal length.
inline double cross_entropy_soft(const Tensor& target, const Tensor& pred) {
    if (target.size() != pred.size())
        throw std::invalid_argument("cross_entropy_soft: length mismatch: " +
                                    target.shape_str() + " vs " + pred.shape_str());
    double loss = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double p = std::max(pred.data[k], detail::kLogFloor);
        loss -= target.data[k] * std::log(p);
    }
    return loss;
}

inline double squared_error(double target, double pred) {
    const double d = target - pred;
    return d * d;
}

// ---------------------------------------------------------------------------
// Tape: define-by-run reverse-mode AD
// ---------------------------------------------------------------------------

class Tape {
public:
    using NodeId = std::uint32_t;

    /// Register a leaf (parameter or input). Leaves get adjoints too; callers
    /// read back only the ones they care about.
    NodeId leaf(Tensor value) { return emplace(std::move(value), nullptr); }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }

    /// Adjoint of a node, valid after backward(). Shaped like the value.
    const std::vector<double>& adjoint(NodeId id) const { return nodes_[id].adjoint; }

    std::size_t node_count() const { return nodes_.size(); }

    /// One reverse sweep from a scalar loss. Repeated calls on a fresh
    /// forward pass produce identical adjoints.
    void backward(NodeId loss) {
        if (nodes_[loss].value.size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar, got " +
                                        nodes_[loss].value.shape_str());
        for (auto& n : nodes_) n.adjoint.assign(n.value.size(), 0.0);
        nodes_[loss].adjoint[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].pull) nodes_[i].pull(*this, nodes_[i]);
        }
    }

    void clear() { nodes_.clear(); }

    // -- differentiable ops --------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        Tensor out = bam::matmul(value(a), value(b));
        return emplace(std::move(out), [a, b](Tape& t, const Node& self) {
            const Tensor& av = t.nodes_[a].value;
            const Tensor& bv = t.nodes_[b].value;
            const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
            double* ga = t.nodes_[a].adjoint.data();
            double* gb = t.nodes_[b].adjoint.data();
            const double* go = self.adjoint.data();
            // dA += dOut * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += go[i * n + j] * bv.data[p * n + j];
                    ga[i * k + p] += acc;
                }
            // dB += A^T * dOut
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av_ip = av.data[i * k + p];
                    if (av_ip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        gb[p * n + j] += av_ip * go[i * n + j];
                }
        });
    }

    NodeId add_row_bias(NodeId m, NodeId bias) {
        Tensor out = bam::add_row_bias(value(m), value(bias));
        return emplace(std::move(out), [m, bias](Tape& t, const Node& self) {
            auto& gm = t.nodes_[m].adjoint;
            auto& gb = t.nodes_[bias].adjoint;
            const std::size_t rows = self.value.rows(), cols = self.value.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) {
                    const double g = self.adjoint[i * cols + j];
                    gm[i * cols + j] += g;
                    gb[j] += g;
                }
        });
    }

    NodeId tanh_op(NodeId x) {
        Tensor out = tanh_map(value(x));
        return emplace(std::move(out), [x](Tape& t, const Node& self) {
            auto& gx = t.nodes_[x].adjoint;
            for (std::size_t i = 0; i < self.value.size(); ++i) {
                const double y = self.value.data[i];
                gx[i] += self.adjoint[i] * (1.0 - y * y);
            }
        });
    }

    NodeId sigmoid_op(NodeId x) {
        Tensor out = bam::sigmoid(value(x));
        return emplace(std::move(out), [x](Tape& t, const Node& self) {
            auto& gx = t.nodes_[x].adjoint;
            for (std::size_t i = 0; i < self.value.size(); ++i) {
                const double y = self.value.data[i];
                gx[i] += self.adjoint[i] * y * (1.0 - y);
            }
        });
    }

    NodeId softmax_rows_op(NodeId z) {
        Tensor out = bam::softmax_rows(value(z));
        return emplace(std::move(out), [z](Tape& t, const Node& self) {
            auto& gz = t.nodes_[z].adjoint;
            const std::size_t m = self.value.rows(), n = self.value.cols();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = self.value.data.data() + i * n;
                const double* gy = self.adjoint.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) gz[i * n + j] += y[j] * (gy[j] - dot);
            }
        });
    }

    /// Slice one row of a matrix as a 1 x n node.
    NodeId row(NodeId m, std::size_t r) {
        const Tensor& mv = value(m);
        detail::require_matrix(mv, "row");
        if (r >= mv.rows())
            throw std::invalid_argument("row: index out of range");
        const std::size_t n = mv.cols();
        Tensor out({1, n});
        for (std::size_t j = 0; j < n; ++j) out.data[j] = mv.data[r * n + j];
        return emplace(std::move(out), [m, r, n](Tape& t, const Node& self) {
            auto& gm = t.nodes_[m].adjoint;
            for (std::size_t j = 0; j < n; ++j) gm[r * n + j] += self.adjoint[j];
        });
    }

    /// Soft-target cross-entropy against a constant target distribution.
    NodeId cross_entropy_soft(Tensor target, NodeId pred) {
        const double loss = bam::cross_entropy_soft(target, value(pred));
        return emplace(Tensor::scalar(loss),
                       [tgt = std::move(target), pred](Tape& t, const Node& self) {
                           auto& gp = t.nodes_[pred].adjoint;
                           const Tensor& pv = t.nodes_[pred].value;
                           const double g = self.adjoint[0];
                           for (std::size_t k = 0; k < pv.size(); ++k) {
                               // Zero below the floor: the clamped loss is constant there.
                               if (pv.data[k] >= detail::kLogFloor)
                                   gp[k] -= g * tgt.data[k] / pv.data[k];
                           }
                       });
    }

    /// (target - pred)^2 for a constant scalar target and a 1x1 node.
    NodeId squared_error(double target, NodeId pred) {
        const Tensor& pv = value(pred);
        if (pv.size() != 1)
            throw std::invalid_argument("squared_error: prediction must be scalar, got " +
                                        pv.shape_str());
        const double loss = bam::squared_error(target, pv.data[0]);
        return emplace(Tensor::scalar(loss), [target, pred](Tape& t, const Node& self) {
            const double p = t.nodes_[pred].value.data[0];
            t.nodes_[pred].adjoint[0] += self.adjoint[0] * 2.0 * (p - target);
        });
    }

    /// Sum of scalar nodes. Empty input yields a constant 0 leaf.
    NodeId sum_scalars(std::vector<NodeId> terms) {
        double total = 0.0;
        for (NodeId id : terms) {
            if (value(id).size() != 1)
                throw std::invalid_argument("sum_scalars: all terms must be scalars");
            total += value(id).data[0];
        }
        if (terms.empty()) return leaf(Tensor::scalar(0.0));
        return emplace(Tensor::scalar(total),
                       [ts = std::move(terms)](Tape& t, const Node& self) {
                           for (NodeId id : ts) t.nodes_[id].adjoint[0] += self.adjoint[0];
                       });
    }

    NodeId scale(NodeId x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v *= c;
        return emplace(std::move(out), [x, c](Tape& t, const Node& self) {
            auto& gx = t.nodes_[x].adjoint;
            for (std::size_t i = 0; i < self.value.size(); ++i)
                gx[i] += self.adjoint[i] * c;
        });
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> adjoint;
        std::function<void(Tape&, const Node&)> pull;  // null for leaves
    };

    NodeId emplace(Tensor value, std::function<void(Tape&, const Node&)> pull) {
        nodes_.push_back(Node{std::move(value), {}, std::move(pull)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

}  // namespace bam
