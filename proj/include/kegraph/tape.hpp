#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kegraph/sparse.hpp"
#include "kegraph/tensor.hpp"

namespace kegraph {

// Handle to a node on a Tape.
struct Var {
    size_t idx = SIZE_MAX;
    bool valid() const { return idx != SIZE_MAX; }
};

// Reverse-mode autodiff over dense matrices, one recorded primitive per node.
// The tape owns all intermediate values; parameters enter through input() and
// their gradients are read back after backward(). Accumulation order is the
// recording order reversed, with fixed inner loops, so results are
// bit-reproducible for identical inputs.
class Tape {
  public:
    Var input(Tensor value, bool requires_grad = false) {
        check_finite(value, "input");
        return push(std::move(value), requires_grad, {}, nullptr, nullptr);
    }

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    const Tensor& grad(Var v) const { return nodes_[v.idx].grad; }
    size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.cols() != B.rows()) throw DimensionError("matmul: inner dimensions disagree");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C(A.rows(), B.cols());
            for (size_t i = 0; i < A.rows(); ++i)
                for (size_t k = 0; k < A.cols(); ++k) {
                    const double aik = A.at(i, k);
                    if (aik == 0.0) continue;
                    const double* brow = B.row(k);
                    double* crow = C.row(i);
                    for (size_t j = 0; j < B.cols(); ++j) crow[j] += aik * brow[j];
                }
            return C;
        };
        return record(
            "matmul", {a, b}, fwd(A, B),
            [this, a, b](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                const Tensor& B = t.val(b);
                Tensor& ga = t.nodes_[a.idx].grad;
                Tensor& gb = t.nodes_[b.idx].grad;
                // dA += G * B^T
                for (size_t i = 0; i < A.rows(); ++i)
                    for (size_t k = 0; k < A.cols(); ++k) {
                        double s = 0.0;
                        const double* grow = g.row(i);
                        const double* brow = B.row(k);
                        for (size_t j = 0; j < B.cols(); ++j) s += grow[j] * brow[j];
                        ga.at(i, k) += s;
                    }
                // dB += A^T * G
                for (size_t k = 0; k < A.cols(); ++k)
                    for (size_t i = 0; i < A.rows(); ++i) {
                        const double aik = A.at(i, k);
                        if (aik == 0.0) continue;
                        const double* grow = g.row(i);
                        double* gbrow = gb.row(k);
                        for (size_t j = 0; j < B.cols(); ++j) gbrow[j] += aik * grow[j];
                    }
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    Var add(Var a, Var b) {
        same_shape(a, b, "add");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] += B[i];
            return C;
        };
        return record(
            "add", {a, b}, fwd(val(a), val(b)),
            [a, b](const Tensor& g, Tape& t) {
                t.accumulate(a, g);
                t.accumulate(b, g);
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    Var sub(Var a, Var b) {
        same_shape(a, b, "sub");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
            return C;
        };
        return record(
            "sub", {a, b}, fwd(val(a), val(b)),
            [a, b](const Tensor& g, Tape& t) {
                t.accumulate(a, g);
                Tensor& gb = t.nodes_[b.idx].grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    Var mul(Var a, Var b) {
        same_shape(a, b, "mul");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
            return C;
        };
        return record(
            "mul", {a, b}, fwd(val(a), val(b)),
            [a, b](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                const Tensor& B = t.val(b);
                Tensor& ga = t.nodes_[a.idx].grad;
                Tensor& gb = t.nodes_[b.idx].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * B[i];
                    gb[i] += g[i] * A[i];
                }
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    Var div(Var a, Var b) {
        same_shape(a, b, "div");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] /= B[i];
            return C;
        };
        return record(
            "div", {a, b}, fwd(val(a), val(b)),
            [a, b](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                const Tensor& B = t.val(b);
                Tensor& ga = t.nodes_[a.idx].grad;
                Tensor& gb = t.nodes_[b.idx].grad;
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] / B[i];
                    gb[i] -= g[i] * A[i] / (B[i] * B[i]);
                }
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    // bias is 1 x cols, broadcast over every row of m. The only broadcast in
    // the primitive set.
    Var add_row_bias(Var m, Var bias) {
        const Tensor& M = val(m);
        const Tensor& B = val(bias);
        if (B.rows() != 1 || B.cols() != M.cols())
            throw DimensionError("add_row_bias: bias must be 1 x cols");
        auto fwd = [](const Tensor& M, const Tensor& B) {
            Tensor C = M;
            for (size_t i = 0; i < M.rows(); ++i)
                for (size_t j = 0; j < M.cols(); ++j) C.at(i, j) += B.at(0, j);
            return C;
        };
        return record(
            "add_row_bias", {m, bias}, fwd(M, B),
            [m, bias](const Tensor& g, Tape& t) {
                t.accumulate(m, g);
                Tensor& gb = t.nodes_[bias.idx].grad;
                for (size_t i = 0; i < g.rows(); ++i)
                    for (size_t j = 0; j < g.cols(); ++j) gb.at(0, j) += g.at(i, j);
            },
            [fwd, m, bias](const Tape& t) { return fwd(t.val(m), t.val(bias)); });
    }

    Var scale(Var a, double s) {
        auto fwd = [s](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] *= s;
            return C;
        };
        return record(
            "scale", {a}, fwd(val(a)),
            [a, s](const Tensor& g, Tape& t) {
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var add_const(Var a, double c) {
        auto fwd = [c](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] += c;
            return C;
        };
        return record(
            "add_const", {a}, fwd(val(a)),
            [a](const Tensor& g, Tape& t) { t.accumulate(a, g); },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var relu(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = C[i] > 0.0 ? C[i] : 0.0;
            return C;
        };
        return record(
            "relu", {a}, fwd(val(a)),
            [a](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    if (A[i] > 0.0) ga[i] += g[i];
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var tanh_act(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = std::tanh(C[i]);
            return C;
        };
        Var out = record("tanh", {a}, fwd(val(a)), nullptr,
                         [fwd, a](const Tape& t) { return fwd(t.val(a)); });
        nodes_[out.idx].backward = [a, out](const Tensor& g, Tape& t) {
            const Tensor& Y = t.val(out);
            Tensor& ga = t.nodes_[a.idx].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - Y[i] * Y[i]);
        };
        return out;
    }

    Var sigmoid(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = 1.0 / (1.0 + std::exp(-C[i]));
            return C;
        };
        Var out = record("sigmoid", {a}, fwd(val(a)), nullptr,
                         [fwd, a](const Tape& t) { return fwd(t.val(a)); });
        nodes_[out.idx].backward = [a, out](const Tensor& g, Tape& t) {
            const Tensor& Y = t.val(out);
            Tensor& ga = t.nodes_[a.idx].grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Y[i] * (1.0 - Y[i]);
        };
        return out;
    }

    Var log_op(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = std::log(C[i]);
            return C;
        };
        return record(
            "log", {a}, fwd(val(a)),
            [a](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / A[i];
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var clamp_min(Var a, double lo) {
        auto fwd = [lo](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = C[i] < lo ? lo : C[i];
            return C;
        };
        return record(
            "clamp_min", {a}, fwd(val(a)),
            [a, lo](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    if (A[i] >= lo) ga[i] += g[i];
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var clamp(Var a, double lo, double hi) {
        auto fwd = [lo, hi](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < C.size(); ++i) C[i] = C[i] < lo ? lo : (C[i] > hi ? hi : C[i]);
            return C;
        };
        return record(
            "clamp", {a}, fwd(val(a)),
            [a, lo, hi](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.size(); ++i)
                    if (A[i] >= lo && A[i] <= hi) ga[i] += g[i];
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    // Row-wise softmax (max-shifted for stability).
    Var softmax_rows(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C = A;
            for (size_t i = 0; i < A.rows(); ++i) {
                double mx = A.at(i, 0);
                for (size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
                double sum = 0.0;
                for (size_t j = 0; j < A.cols(); ++j) {
                    C.at(i, j) = std::exp(A.at(i, j) - mx);
                    sum += C.at(i, j);
                }
                for (size_t j = 0; j < A.cols(); ++j) C.at(i, j) /= sum;
            }
            return C;
        };
        Var out = record("softmax_rows", {a}, fwd(val(a)), nullptr,
                         [fwd, a](const Tape& t) { return fwd(t.val(a)); });
        nodes_[out.idx].backward = [a, out](const Tensor& g, Tape& t) {
            const Tensor& Y = t.val(out);
            Tensor& ga = t.nodes_[a.idx].grad;
            for (size_t i = 0; i < Y.rows(); ++i) {
                double dot = 0.0;
                for (size_t j = 0; j < Y.cols(); ++j) dot += g.at(i, j) * Y.at(i, j);
                for (size_t j = 0; j < Y.cols(); ++j)
                    ga.at(i, j) += Y.at(i, j) * (g.at(i, j) - dot);
            }
        };
        return out;
    }

    // N x d -> 1 x d column means.
    Var mean_rows(Var a) {
        const Tensor& A = val(a);
        if (A.rows() == 0) throw ContractError("mean_rows: empty input");
        auto fwd = [](const Tensor& A) {
            Tensor C(1, A.cols());
            for (size_t i = 0; i < A.rows(); ++i)
                for (size_t j = 0; j < A.cols(); ++j) C.at(0, j) += A.at(i, j);
            for (size_t j = 0; j < A.cols(); ++j) C.at(0, j) /= static_cast<double>(A.rows());
            return C;
        };
        return record(
            "mean_rows", {a}, fwd(A),
            [a](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                const double inv = 1.0 / static_cast<double>(A.rows());
                for (size_t i = 0; i < A.rows(); ++i)
                    for (size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += g.at(0, j) * inv;
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    // N x d -> N x 1 row sums.
    Var row_sum(Var a) {
        auto fwd = [](const Tensor& A) {
            Tensor C(A.rows(), 1);
            for (size_t i = 0; i < A.rows(); ++i) {
                double s = 0.0;
                for (size_t j = 0; j < A.cols(); ++j) s += A.at(i, j);
                C.at(i, 0) = s;
            }
            return C;
        };
        return record(
            "row_sum", {a}, fwd(val(a)),
            [a](const Tensor& g, Tape& t) {
                const Tensor& A = t.val(a);
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < A.rows(); ++i)
                    for (size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += g.at(i, 0);
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var sum_all(Var a) {
        auto fwd = [](const Tensor& A) {
            double s = 0.0;
            for (size_t i = 0; i < A.size(); ++i) s += A[i];
            return Tensor::scalar(s);
        };
        return record(
            "sum_all", {a}, fwd(val(a)),
            [a](const Tensor& g, Tape& t) {
                Tensor& ga = t.nodes_[a.idx].grad;
                const double gv = g.at(0, 0);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rows() != B.rows()) throw DimensionError("concat_cols: row counts disagree");
        auto fwd = [](const Tensor& A, const Tensor& B) {
            Tensor C(A.rows(), A.cols() + B.cols());
            for (size_t i = 0; i < A.rows(); ++i) {
                for (size_t j = 0; j < A.cols(); ++j) C.at(i, j) = A.at(i, j);
                for (size_t j = 0; j < B.cols(); ++j) C.at(i, A.cols() + j) = B.at(i, j);
            }
            return C;
        };
        return record(
            "concat_cols", {a, b}, fwd(A, B),
            [a, b](const Tensor& g, Tape& t) {
                const size_t ac = t.val(a).cols();
                Tensor& ga = t.nodes_[a.idx].grad;
                Tensor& gb = t.nodes_[b.idx].grad;
                for (size_t i = 0; i < g.rows(); ++i) {
                    for (size_t j = 0; j < ac; ++j) ga.at(i, j) += g.at(i, j);
                    for (size_t j = 0; j < gb.cols(); ++j) gb.at(i, j) += g.at(i, ac + j);
                }
            },
            [fwd, a, b](const Tape& t) { return fwd(t.val(a), t.val(b)); });
    }

    Var select_col(Var a, size_t c) {
        const Tensor& A = val(a);
        if (c >= A.cols()) throw DimensionError("select_col: column out of range");
        auto fwd = [c](const Tensor& A) {
            Tensor C(A.rows(), 1);
            for (size_t i = 0; i < A.rows(); ++i) C.at(i, 0) = A.at(i, c);
            return C;
        };
        return record(
            "select_col", {a}, fwd(A),
            [a, c](const Tensor& g, Tape& t) {
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < g.rows(); ++i) ga.at(i, c) += g.at(i, 0);
            },
            [fwd, a](const Tape& t) { return fwd(t.val(a)); });
    }

    Var select_rows(Var a, std::vector<uint32_t> idx) {
        const Tensor& A = val(a);
        for (uint32_t i : idx)
            if (i >= A.rows()) throw ReferenceError("select_rows: row out of range");
        auto fwd = [idx](const Tensor& A) {
            Tensor C(idx.size(), A.cols());
            for (size_t i = 0; i < idx.size(); ++i)
                for (size_t j = 0; j < A.cols(); ++j) C.at(i, j) = A.at(idx[i], j);
            return C;
        };
        return record(
            "select_rows", {a}, fwd(A),
            [a, idx](const Tensor& g, Tape& t) {
                Tensor& ga = t.nodes_[a.idx].grad;
                for (size_t i = 0; i < idx.size(); ++i)
                    for (size_t j = 0; j < g.cols(); ++j) ga.at(idx[i], j) += g.at(i, j);
            },
            [fwd, a, idx](const Tape& t) { return fwd(t.val(a)); });
    }

    // Multiplies every element by a 1x1 scalar node.
    Var scale_by(Var m, Var s) {
        const Tensor& S = val(s);
        if (S.rows() != 1 || S.cols() != 1) throw DimensionError("scale_by: scalar must be 1x1");
        auto fwd = [](const Tensor& M, const Tensor& S) {
            Tensor C = M;
            const double sv = S.at(0, 0);
            for (size_t i = 0; i < C.size(); ++i) C[i] *= sv;
            return C;
        };
        return record(
            "scale_by", {m, s}, fwd(val(m), S),
            [m, s](const Tensor& g, Tape& t) {
                const Tensor& M = t.val(m);
                const double sv = t.val(s).at(0, 0);
                Tensor& gm = t.nodes_[m.idx].grad;
                Tensor& gs = t.nodes_[s.idx].grad;
                double acc = 0.0;
                for (size_t i = 0; i < g.size(); ++i) {
                    gm[i] += g[i] * sv;
                    acc += g[i] * M[i];
                }
                gs.at(0, 0) += acc;
            },
            [fwd, m, s](const Tape& t) { return fwd(t.val(m), t.val(s)); });
    }

    // out(v, :) = sum_u W(v, u) * H(u, :). W is held by pointer and must
    // outlive the tape; its entries are constants (no gradient flows into W).
    // Per-row accumulation follows CSR order, i.e. ascending neighbor id.
    Var sparse_agg(const SparseRowMatrix* w, Var h) {
        const Tensor& H = val(h);
        if (w->cols() != H.rows()) throw DimensionError("sparse_agg: W cols != H rows");
        auto fwd = [w](const Tensor& H) {
            Tensor C(w->rows(), H.cols());
            for (size_t v = 0; v < w->rows(); ++v) {
                double* crow = C.row(v);
                for (size_t k = w->row_begin(v); k < w->row_end(v); ++k) {
                    const double wt = w->entry_val(k);
                    const double* hrow = H.row(w->entry_col(k));
                    for (size_t j = 0; j < H.cols(); ++j) crow[j] += wt * hrow[j];
                }
            }
            return C;
        };
        return record(
            "sparse_agg", {h}, fwd(H),
            [w, h](const Tensor& g, Tape& t) {
                Tensor& gh = t.nodes_[h.idx].grad;
                for (size_t v = 0; v < w->rows(); ++v) {
                    const double* grow = g.row(v);
                    for (size_t k = w->row_begin(v); k < w->row_end(v); ++k) {
                        const double wt = w->entry_val(k);
                        double* ghrow = gh.row(w->entry_col(k));
                        for (size_t j = 0; j < g.cols(); ++j) ghrow[j] += wt * grow[j];
                    }
                }
            },
            [fwd, h](const Tape& t) { return fwd(t.val(h)); });
    }

    // Backpropagates from a scalar loss. Gradients of all nodes are reset
    // first; afterwards grad(v) holds dloss/dv for every node on the tape.
    void backward(Var loss) {
        const Tensor& L = val(loss);
        if (L.rows() != 1 || L.cols() != 1) throw ContractError("backward: loss must be scalar");
        for (auto& n : nodes_) n.grad = Tensor(n.value.rows(), n.value.cols());
        nodes_[loss.idx].grad.at(0, 0) = 1.0;
        for (size_t i = loss.idx + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && n.needs_grad) n.backward(n.grad, *this);
        }
    }

    // Re-runs every recorded forward and compares against stored values.
    bool replay_matches() const {
        for (const auto& n : nodes_) {
            if (!n.replay) continue;
            if (!n.replay(*this).bit_equal(n.value)) return false;
        }
        return true;
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<size_t> parents;
        std::function<void(const Tensor&, Tape&)> backward;
        std::function<Tensor(const Tape&)> replay;
        bool needs_grad = false;
        std::string op;
    };

    const Tensor& val(Var v) const { return nodes_[v.idx].value; }

    void accumulate(Var v, const Tensor& g) {
        Tensor& gv = nodes_[v.idx].grad;
        for (size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }

    void same_shape(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw DimensionError(std::string(op) + ": shape mismatch");
    }

    static void check_finite(const Tensor& t, const char* op) {
        if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value");
    }

    Var push(Tensor value, bool needs_grad, std::vector<size_t> parents,
             std::function<void(const Tensor&, Tape&)> bw,
             std::function<Tensor(const Tape&)> replay, std::string op = "input") {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(bw);
        n.replay = std::move(replay);
        n.needs_grad = needs_grad;
        n.op = std::move(op);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var record(const char* op, std::vector<Var> parents, Tensor value,
               std::function<void(const Tensor&, Tape&)> bw,
               std::function<Tensor(const Tape&)> replay) {
        check_finite(value, op);
        bool needs = false;
        std::vector<size_t> pidx;
        pidx.reserve(parents.size());
        for (Var p : parents) {
            pidx.push_back(p.idx);
            needs = needs || nodes_[p.idx].needs_grad;
        }
        return push(std::move(value), needs, std::move(pidx), std::move(bw), std::move(replay), op);
    }

    std::vector<Node> nodes_;
};

}  // namespace kegraph
