#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "glp/matrix.hpp"

namespace glp {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr double kRmsNormEps = 1e-8;

/// y_ij = g_j * x_ij / sqrt(mean_j x_ij^2 + eps). Shared by the tape op and
/// the no-tape forward so both paths produce bitwise-identical values.
inline Matrix rmsnorm_forward(const Matrix& x, const Matrix& gain,
                              std::vector<double>* inv_rms_out = nullptr) {
    GLP_REQUIRE(gain.rows == 1 && gain.cols == x.cols, "rmsnorm: gain must be 1 x cols");
    Matrix y(x.rows, x.cols);
    if (inv_rms_out) inv_rms_out->resize(x.rows);
    const double inv_d = 1.0 / static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double ms = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) ms += xr[j] * xr[j];
        const double inv_rms = 1.0 / std::sqrt(ms * inv_d + kRmsNormEps);
        if (inv_rms_out) (*inv_rms_out)[i] = inv_rms;
        double* yr = y.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) yr[j] = gain.data[j] * xr[j] * inv_rms;
    }
    return y;
}

inline Matrix silu_forward(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.data) v = v * sigmoid(v);
    return y;
}

/// Reverse-mode tape over Matrix-valued ops. Nodes are recorded in program
/// order, which is a topological order for the feedforward graphs built
/// here; backward() replays them once in reverse.
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(Matrix value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, {});
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

    Var matmul(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        Matrix c(av.rows, bv.cols);
        gemm(c, av, false, bv, false);
        Var out = push(std::move(c), needs(a) || needs(b), [this, a, b](const Matrix& g) {
            if (needs(a)) gemm(mut_grad(a), g, false, value(b), true, 1.0, 1.0);
            if (needs(b)) gemm(mut_grad(b), value(a), true, g, false, 1.0, 1.0);
        });
        return out;
    }

    Var add(Var a, Var b) {
        Matrix c = glp::add(value(a), value(b));
        return push(std::move(c), needs(a) || needs(b), [this, a, b](const Matrix& g) {
            if (needs(a)) axpy(mut_grad(a), 1.0, g);
            if (needs(b)) axpy(mut_grad(b), 1.0, g);
        });
    }

    Var sub(Var a, Var b) {
        Matrix c = glp::sub(value(a), value(b));
        return push(std::move(c), needs(a) || needs(b), [this, a, b](const Matrix& g) {
            if (needs(a)) axpy(mut_grad(a), 1.0, g);
            if (needs(b)) axpy(mut_grad(b), -1.0, g);
        });
    }

    Var hadamard(Var a, Var b) {
        Matrix c = glp::hadamard(value(a), value(b));
        return push(std::move(c), needs(a) || needs(b), [this, a, b](const Matrix& g) {
            if (needs(a))
                for (std::size_t i = 0; i < g.size(); ++i)
                    mut_grad(a).data[i] += g.data[i] * value(b).data[i];
            if (needs(b))
                for (std::size_t i = 0; i < g.size(); ++i)
                    mut_grad(b).data[i] += g.data[i] * value(a).data[i];
        });
    }

    Var scale(Var a, double s) {
        Matrix c = glp::scale(value(a), s);
        return push(std::move(c), needs(a), [this, a, s](const Matrix& g) {
            if (needs(a)) axpy(mut_grad(a), s, g);
        });
    }

    Var add_scalar(Var a, double s) {
        Matrix c = value(a);
        for (double& v : c.data) v += s;
        return push(std::move(c), needs(a), [this, a](const Matrix& g) {
            if (needs(a)) axpy(mut_grad(a), 1.0, g);
        });
    }

    /// Broadcast-add a 1 x cols row vector over every row.
    Var add_rowvec(Var x, Var b) {
        const Matrix& xv = value(x);
        const Matrix& bv = value(b);
        GLP_REQUIRE(bv.rows == 1 && bv.cols == xv.cols, "add_rowvec: shape mismatch");
        Matrix c = xv;
        for (std::size_t i = 0; i < c.rows; ++i)
            for (std::size_t j = 0; j < c.cols; ++j) c(i, j) += bv.data[j];
        return push(std::move(c), needs(x) || needs(b), [this, x, b](const Matrix& g) {
            if (needs(x)) axpy(mut_grad(x), 1.0, g);
            if (needs(b)) {
                Matrix& gb = mut_grad(b);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) gb.data[j] += g(i, j);
            }
        });
    }

    Var silu(Var a) {
        Matrix c = silu_forward(value(a));
        return push(std::move(c), needs(a), [this, a](const Matrix& g) {
            if (!needs(a)) return;
            Matrix& ga = mut_grad(a);
            const Matrix& av = value(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = sigmoid(av.data[i]);
                ga.data[i] += g.data[i] * s * (1.0 + av.data[i] * (1.0 - s));
            }
        });
    }

    Var rmsnorm(Var x, Var gain) {
        auto inv_rms = std::make_shared<std::vector<double>>();
        Matrix y = rmsnorm_forward(value(x), value(gain), inv_rms.get());
        return push(std::move(y), needs(x) || needs(gain),
                    [this, x, gain, inv_rms](const Matrix& g) {
            const Matrix& xv = value(x);
            const Matrix& gv = value(gain);
            const double inv_d = 1.0 / static_cast<double>(xv.cols);
            if (needs(gain)) {
                Matrix& gg = mut_grad(gain);
                for (std::size_t i = 0; i < xv.rows; ++i) {
                    const double ir = (*inv_rms)[i];
                    for (std::size_t j = 0; j < xv.cols; ++j)
                        gg.data[j] += g(i, j) * xv(i, j) * ir;
                }
            }
            if (needs(x)) {
                Matrix& gx = mut_grad(x);
                for (std::size_t i = 0; i < xv.rows; ++i) {
                    const double ir = (*inv_rms)[i];
                    // dn_ij = g_ij * gain_j; dx = dn/r - x * <dn,x> / (d r^3)
                    double dn_dot_x = 0.0;
                    for (std::size_t j = 0; j < xv.cols; ++j)
                        dn_dot_x += g(i, j) * gv.data[j] * xv(i, j);
                    const double coef = dn_dot_x * inv_d * ir * ir * ir;
                    for (std::size_t j = 0; j < xv.cols; ++j)
                        gx(i, j) += g(i, j) * gv.data[j] * ir - xv(i, j) * coef;
                }
            }
        });
    }

    /// Gather k embedding rows per window and concatenate: out is
    /// n x (k * embed_dim). Backward scatter-adds into the table.
    Var embed_windows(Var table, const std::vector<std::vector<int>>& windows) {
        const Matrix& tv = value(table);
        GLP_REQUIRE(!windows.empty(), "embed_windows: empty window list");
        const std::size_t k = windows.front().size();
        const std::size_t e = tv.cols;
        Matrix out(windows.size(), k * e);
        for (std::size_t i = 0; i < windows.size(); ++i) {
            GLP_REQUIRE(windows[i].size() == k, "embed_windows: ragged windows");
            for (std::size_t j = 0; j < k; ++j) {
                const int tok = windows[i][j];
                GLP_REQUIRE(tok >= 0 && static_cast<std::size_t>(tok) < tv.rows,
                            "embed_windows: token id out of range");
                const double* src = tv.row(tok);
                double* dst = out.row(i) + j * e;
                for (std::size_t c = 0; c < e; ++c) dst[c] = src[c];
            }
        }
        auto win = std::make_shared<std::vector<std::vector<int>>>(windows);
        return push(std::move(out), needs(table), [this, table, win, k, e](const Matrix& g) {
            if (!needs(table)) return;
            Matrix& gt = mut_grad(table);
            for (std::size_t i = 0; i < win->size(); ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double* dst = gt.row((*win)[i][j]);
                    const double* src = g.row(i) + j * e;
                    for (std::size_t c = 0; c < e; ++c) dst[c] += src[c];
                }
        });
    }

    /// Keep the k largest entries per row, zero the rest. Ties break toward
    /// the lower column index. Gradient passes through kept entries only.
    Var topk_rows(Var x, std::size_t k) {
        const Matrix& xv = value(x);
        GLP_REQUIRE(k >= 1 && k <= xv.cols, "topk_rows: k out of range");
        Matrix out(xv.rows, xv.cols);
        auto kept = std::make_shared<std::vector<std::uint8_t>>(xv.size(), 0);
        std::vector<std::size_t> idx(xv.cols);
        for (std::size_t i = 0; i < xv.rows; ++i) {
            const double* xr = xv.row(i);
            for (std::size_t j = 0; j < xv.cols; ++j) idx[j] = j;
            std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                              [&](std::size_t a, std::size_t b) {
                                  if (xr[a] != xr[b]) return xr[a] > xr[b];
                                  return a < b;
                              });
            for (std::size_t r = 0; r < k; ++r) {
                out(i, idx[r]) = xr[idx[r]];
                (*kept)[i * xv.cols + idx[r]] = 1;
            }
        }
        return push(std::move(out), needs(x), [this, x, kept](const Matrix& g) {
            if (!needs(x)) return;
            Matrix& gx = mut_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                if ((*kept)[i]) gx.data[i] += g.data[i];
        });
    }

    /// Scalar (1x1) mean squared error over all entries.
    Var mse(Var pred, Var target) {
        const Matrix& pv = value(pred);
        const Matrix& tv = value(target);
        GLP_REQUIRE(pv.same_shape(tv), "mse: shape mismatch");
        double acc = 0.0;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double d = pv.data[i] - tv.data[i];
            acc += d * d;
        }
        Matrix out(1, 1);
        out.data[0] = acc / static_cast<double>(pv.size());
        return push(std::move(out), needs(pred) || needs(target),
                    [this, pred, target](const Matrix& g) {
            const Matrix& pv = value(pred);
            const Matrix& tv = value(target);
            const double c = 2.0 * g.data[0] / static_cast<double>(pv.size());
            if (needs(pred))
                for (std::size_t i = 0; i < pv.size(); ++i)
                    mut_grad(pred).data[i] += c * (pv.data[i] - tv.data[i]);
            if (needs(target))
                for (std::size_t i = 0; i < pv.size(); ++i)
                    mut_grad(target).data[i] -= c * (pv.data[i] - tv.data[i]);
        });
    }

    /// Scalar mean next-token NLL under softmax(logits).
    Var mean_nll(Var logits, const std::vector<int>& targets) {
        const Matrix& lv = value(logits);
        GLP_REQUIRE(lv.rows == targets.size(), "mean_nll: target count mismatch");
        double acc = 0.0;
        for (std::size_t i = 0; i < lv.rows; ++i) {
            const double* r = lv.row(i);
            double mx = r[0];
            for (std::size_t j = 1; j < lv.cols; ++j) mx = std::max(mx, r[j]);
            double lse = 0.0;
            for (std::size_t j = 0; j < lv.cols; ++j) lse += std::exp(r[j] - mx);
            acc += mx + std::log(lse) - r[targets[i]];
        }
        Matrix out(1, 1);
        out.data[0] = acc / static_cast<double>(lv.rows);
        auto tgt = std::make_shared<std::vector<int>>(targets);
        return push(std::move(out), needs(logits), [this, logits, tgt](const Matrix& g) {
            if (!needs(logits)) return;
            const Matrix& lv = value(logits);
            Matrix& gl = mut_grad(logits);
            const double c = g.data[0] / static_cast<double>(lv.rows);
            for (std::size_t i = 0; i < lv.rows; ++i) {
                const double* r = lv.row(i);
                double mx = r[0];
                for (std::size_t j = 1; j < lv.cols; ++j) mx = std::max(mx, r[j]);
                double lse = 0.0;
                for (std::size_t j = 0; j < lv.cols; ++j) lse += std::exp(r[j] - mx);
                double* gr = gl.row(i);
                for (std::size_t j = 0; j < lv.cols; ++j)
                    gr[j] += c * (std::exp(r[j] - mx) / lse - (static_cast<int>(j) == (*tgt)[i] ? 1.0 : 0.0));
            }
        });
    }

    /// Seeds d(loss)=1 and replays recorded ops in reverse. `loss` must be 1x1.
    void backward(Var loss) {
        GLP_REQUIRE(value(loss).rows == 1 && value(loss).cols == 1,
                    "backward: loss must be scalar");
        for (Node& n : nodes_)
            if (n.requires_grad && n.grad.size() == 0)
                n.grad = Matrix(n.value.rows, n.value.cols);
        if (nodes_[loss.id].requires_grad) nodes_[loss.id].grad.data[0] = 1.0;
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].backward && nodes_[i].requires_grad)
                nodes_[i].backward(nodes_[i].grad);
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(const Matrix&)> backward;
    };

    bool needs(Var v) const { return nodes_[v.id].requires_grad; }
    Matrix& mut_grad(Var v) { return nodes_[v.id].grad; }

    Var push(Matrix value, bool requires_grad, std::function<void(const Matrix&)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace glp
