#pragma once

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "contamlab/rng.hpp"
#include "contamlab/tensor.hpp"

namespace contamlab {

// Handle to a node on a Tape.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a,
                 const float* b, float* c, float beta) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const double* a,
                 const double* b, double* c, double beta) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ValidationError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides with 0 on broadcast axes, aligned right to rank r.
inline std::vector<int64_t> broadcast_strides(const Shape& s, size_t r, const Shape& out) {
    std::vector<int64_t> st(r, 0);
    int64_t stride = 1;
    for (size_t i = s.size(); i-- > 0;) {
        size_t oi = i + (r - s.size());
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : stride;
        stride *= s[i];
    }
    return st;
}

// Sums grad (shaped like out) down to the operand shape.
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& target) {
    if (grad.shape() == target) return grad;
    Tensor<T> out(target);
    size_t r = grad.shape().size();
    auto st = broadcast_strides(target, r, grad.shape());
    std::vector<int64_t> idx(r, 0);
    const Shape& gs = grad.shape();
    for (int64_t lin = 0; lin < grad.numel(); ++lin) {
        int64_t off = 0;
        for (size_t i = 0; i < r; ++i) off += idx[i] * st[i];
        out[off] += grad[lin];
        for (size_t i = r; i-- > 0;) {
            if (++idx[i] < gs[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

}  // namespace detail

// Reverse-mode autodiff tape. Ops execute eagerly, record enough for the
// backward pass, and fail fast on non-finite outputs.
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int32_t)>;

    struct Node {
        Tensor<T> value;
        std::vector<int32_t> parents;
        BackwardFn backward;
        std::string op_name;
        bool trainable = false;
        bool requires_grad = false;
    };

    Var leaf(Tensor<T> value, bool trainable = false) {
        Node n;
        n.value = std::move(value);
        n.op_name = "leaf";
        n.trainable = trainable;
        n.requires_grad = trainable;
        nodes_.push_back(std::move(n));
        grads_.emplace_back();
        if (trainable) trainable_leaves_.push_back(static_cast<int32_t>(nodes_.size() - 1));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }

    const Tensor<T>& grad(Var v) const {
        const Tensor<T>& g = grads_[check(v)];
        if (g.numel() == 0 && nodes_[v.id].value.numel() != 0)
            throw ValidationError("no gradient recorded for node " + std::to_string(v.id));
        return g;
    }

    size_t size() const { return nodes_.size(); }

    // ---- primitives -------------------------------------------------------

    Var matmul(Var av, Var bv) {
        const Tensor<T>& a = value(av);
        const Tensor<T>& b = value(bv);
        if (a.rank() < 2 || b.rank() < 2) throw ValidationError("matmul requires rank >= 2");
        int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
        if (k != k2)
            throw ValidationError("matmul inner mismatch " + shape_str(a.shape()) + " @ " +
                                  shape_str(b.shape()));
        Shape lead_a(a.shape().begin(), a.shape().end() - 2);
        Shape lead_b(b.shape().begin(), b.shape().end() - 2);
        bool a_bcast = lead_a.empty() && !lead_b.empty();
        bool b_bcast = lead_b.empty() && !lead_a.empty();
        if (!a_bcast && !b_bcast && lead_a != lead_b)
            throw ValidationError("matmul batch mismatch " + shape_str(a.shape()) + " @ " +
                                  shape_str(b.shape()));
        Shape lead = a_bcast ? lead_b : lead_a;
        int64_t batches = shape_numel(lead);
        Shape out_shape = lead;
        out_shape.push_back(m);
        out_shape.push_back(n);
        Tensor<T> out(out_shape);
        for (int64_t bi = 0; bi < batches; ++bi) {
            const T* pa = a.data() + (a_bcast ? 0 : bi * m * k);
            const T* pb = b.data() + (b_bcast ? 0 : bi * k * n);
            detail::gemm(false, false, m, n, k, pa, pb, out.data() + bi * m * n, T(0));
        }
        return record("matmul", std::move(out), {av, bv},
                      [m, n, k, batches, a_bcast, b_bcast](Tape& t, int32_t id) {
                          Node& node = t.nodes_[id];
                          const Tensor<T>& g = t.grads_[id];
                          const Tensor<T>& a = t.nodes_[node.parents[0]].value;
                          const Tensor<T>& b = t.nodes_[node.parents[1]].value;
                          if (t.wants_grad(node.parents[0])) {
                              Tensor<T>& ga = t.grad_buffer(node.parents[0]);
                              for (int64_t bi = 0; bi < batches; ++bi)
                                  detail::gemm(false, true, m, k, n, g.data() + bi * m * n,
                                               b.data() + (b_bcast ? 0 : bi * k * n),
                                               ga.data() + (a_bcast ? 0 : bi * m * k), T(1));
                          }
                          if (t.wants_grad(node.parents[1])) {
                              Tensor<T>& gb = t.grad_buffer(node.parents[1]);
                              for (int64_t bi = 0; bi < batches; ++bi)
                                  detail::gemm(true, false, k, n, m,
                                               a.data() + (a_bcast ? 0 : bi * m * k),
                                               g.data() + bi * m * n,
                                               gb.data() + (b_bcast ? 0 : bi * k * n), T(1));
                          }
                      });
    }

    Var add(Var a, Var b) { return binary_broadcast("add", a, b); }
    Var mul(Var a, Var b) { return binary_broadcast("mul", a, b); }

    Var gelu(Var xv) {
        const Tensor<T>& x = value(xv);
        Tensor<T> out(x.shape());
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double v = static_cast<double>(x[i]);
            out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
        }
        return record("gelu", std::move(out), {xv}, [](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& x = t.nodes_[node.parents[0]].value;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            for (int64_t i = 0; i < x.numel(); ++i) {
                double v = static_cast<double>(x[i]);
                double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * static_cast<T>(cdf + v * pdf);
            }
        });
    }

    Var tanh_op(Var xv) {
        const Tensor<T>& x = value(xv);
        Tensor<T> out(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
        return record("tanh", std::move(out), {xv}, [](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& y = node.value;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t i = 0; i < y.numel(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
        });
    }

    // Softmax over the last axis, log-sum-exp stabilized.
    Var softmax(Var xv) {
        const Tensor<T>& x = value(xv);
        if (x.rank() < 1) throw ValidationError("softmax requires rank >= 1");
        int64_t c = x.dim(-1);
        int64_t rows = x.numel() / c;
        Tensor<T> out(x.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const T* px = x.data() + r * c;
            T* po = out.data() + r * c;
            T mx = px[0];
            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, px[j]);
            T sum = 0;
            for (int64_t j = 0; j < c; ++j) {
                po[j] = std::exp(px[j] - mx);
                sum += po[j];
            }
            for (int64_t j = 0; j < c; ++j) po[j] /= sum;
        }
        return record("softmax", std::move(out), {xv}, [c, rows](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& y = node.value;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t r = 0; r < rows; ++r) {
                const T* py = y.data() + r * c;
                const T* pg = g.data() + r * c;
                T* pgx = gx.data() + r * c;
                T dot = 0;
                for (int64_t j = 0; j < c; ++j) dot += pg[j] * py[j];
                for (int64_t j = 0; j < c; ++j) pgx[j] += py[j] * (pg[j] - dot);
            }
        });
    }

    // Layer norm over the last axis with learned gain/bias.
    Var layer_norm(Var xv, Var gain_v, Var bias_v, double eps) {
        const Tensor<T>& x = value(xv);
        const Tensor<T>& gain = value(gain_v);
        const Tensor<T>& bias = value(bias_v);
        int64_t h = x.dim(-1);
        if (gain.numel() != h || bias.numel() != h)
            throw ValidationError("layer_norm gain/bias must have last-axis extent");
        int64_t rows = x.numel() / h;
        Tensor<T> out(x.shape());
        Tensor<T> xhat(x.shape());
        Tensor<T> inv_std(Shape{rows});
        for (int64_t r = 0; r < rows; ++r) {
            const T* px = x.data() + r * h;
            double mu = 0;
            for (int64_t j = 0; j < h; ++j) mu += px[j];
            mu /= h;
            double var = 0;
            for (int64_t j = 0; j < h; ++j) {
                double d = px[j] - mu;
                var += d * d;
            }
            var /= h;
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[r] = static_cast<T>(is);
            for (int64_t j = 0; j < h; ++j) {
                T xh = static_cast<T>((px[j] - mu) * is);
                xhat[r * h + j] = xh;
                out[r * h + j] = gain[j] * xh + bias[j];
            }
        }
        auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
        auto istd_p = std::make_shared<Tensor<T>>(std::move(inv_std));
        return record("layer_norm", std::move(out), {xv, gain_v, bias_v},
                      [h, rows, xhat_p, istd_p](Tape& t, int32_t id) {
                          Node& node = t.nodes_[id];
                          const Tensor<T>& g = t.grads_[id];
                          const Tensor<T>& gain = t.nodes_[node.parents[1]].value;
                          const Tensor<T>& xh = *xhat_p;
                          if (t.wants_grad(node.parents[1])) {
                              Tensor<T>& gg = t.grad_buffer(node.parents[1]);
                              for (int64_t r = 0; r < rows; ++r)
                                  for (int64_t j = 0; j < h; ++j)
                                      gg[j] += g[r * h + j] * xh[r * h + j];
                          }
                          if (t.wants_grad(node.parents[2])) {
                              Tensor<T>& gb = t.grad_buffer(node.parents[2]);
                              for (int64_t r = 0; r < rows; ++r)
                                  for (int64_t j = 0; j < h; ++j) gb[j] += g[r * h + j];
                          }
                          if (t.wants_grad(node.parents[0])) {
                              Tensor<T>& gx = t.grad_buffer(node.parents[0]);
                              for (int64_t r = 0; r < rows; ++r) {
                                  double mean_gy = 0, mean_gyxh = 0;
                                  for (int64_t j = 0; j < h; ++j) {
                                      double gy = static_cast<double>(g[r * h + j]) * gain[j];
                                      mean_gy += gy;
                                      mean_gyxh += gy * xh[r * h + j];
                                  }
                                  mean_gy /= h;
                                  mean_gyxh /= h;
                                  double is = (*istd_p)[r];
                                  for (int64_t j = 0; j < h; ++j) {
                                      double gy = static_cast<double>(g[r * h + j]) * gain[j];
                                      gx[r * h + j] += static_cast<T>(
                                          (gy - mean_gy - xh[r * h + j] * mean_gyxh) * is);
                                  }
                              }
                          }
                      });
    }

    // Gather rows of a [V, H] table by token id; ids_shape gives the output's
    // leading shape.
    Var embedding(Var table_v, const std::vector<int32_t>& ids, const Shape& ids_shape) {
        const Tensor<T>& table = value(table_v);
        if (table.rank() != 2) throw ValidationError("embedding table must be rank 2");
        if (static_cast<int64_t>(ids.size()) != shape_numel(ids_shape))
            throw ValidationError("embedding ids/shape mismatch");
        int64_t v = table.dim(0), h = table.dim(1);
        Shape out_shape = ids_shape;
        out_shape.push_back(h);
        Tensor<T> out(out_shape);
        for (size_t i = 0; i < ids.size(); ++i) {
            int32_t id = ids[i];
            if (id < 0 || id >= v)
                throw ValidationError("embedding id " + std::to_string(id) + " out of range");
            std::copy(table.data() + int64_t(id) * h, table.data() + (int64_t(id) + 1) * h,
                      out.data() + int64_t(i) * h);
        }
        auto ids_p = std::make_shared<std::vector<int32_t>>(ids);
        return record("embedding", std::move(out), {table_v}, [h, ids_p](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gt = t.grad_buffer(node.parents[0]);
            const auto& ids = *ids_p;
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = gt.data() + int64_t(ids[i]) * h;
                const T* src = g.data() + int64_t(i) * h;
                for (int64_t j = 0; j < h; ++j) dst[j] += src[j];
            }
        });
    }

    Var concat(const std::vector<Var>& parts, int64_t axis) {
        if (parts.empty()) throw ValidationError("concat of zero tensors");
        const Shape& s0 = value(parts[0]).shape();
        int64_t r = static_cast<int64_t>(s0.size());
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) throw ValidationError("concat axis out of range");
        Shape out_shape = s0;
        int64_t total = 0;
        for (Var p : parts) {
            const Shape& s = value(p).shape();
            if (static_cast<int64_t>(s.size()) != r) throw ValidationError("concat rank mismatch");
            for (int64_t i = 0; i < r; ++i)
                if (i != axis && s[i] != s0[i]) throw ValidationError("concat shape mismatch");
            total += s[axis];
        }
        out_shape[axis] = total;
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < axis; ++i) outer *= s0[i];
        for (int64_t i = axis + 1; i < r; ++i) inner *= s0[i];
        Tensor<T> out(out_shape);
        std::vector<int64_t> offsets;
        int64_t off = 0;
        for (Var p : parts) {
            const Tensor<T>& t = value(p);
            int64_t chunk = t.dim(axis) * inner;
            for (int64_t o = 0; o < outer; ++o)
                std::copy(t.data() + o * chunk, t.data() + (o + 1) * chunk,
                          out.data() + o * total * inner + off);
            offsets.push_back(off);
            off += chunk;
        }
        return record("concat", std::move(out), parts,
                      [outer, inner, total, offsets](Tape& t, int32_t id) {
                          Node& node = t.nodes_[id];
                          const Tensor<T>& g = t.grads_[id];
                          for (size_t pi = 0; pi < node.parents.size(); ++pi) {
                              int32_t p = node.parents[pi];
                              if (!t.wants_grad(p)) continue;
                              Tensor<T>& gp = t.grad_buffer(p);
                              int64_t chunk = gp.numel() / outer;
                              for (int64_t o = 0; o < outer; ++o) {
                                  const T* src = g.data() + o * total * inner + offsets[pi];
                                  T* dst = gp.data() + o * chunk;
                                  for (int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                              }
                          }
                      });
    }

    Var slice(Var xv, int64_t axis, int64_t start, int64_t len) {
        const Tensor<T>& x = value(xv);
        int64_t r = x.rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) throw ValidationError("slice axis out of range");
        if (start < 0 || len < 0 || start + len > x.dim(axis))
            throw ValidationError("slice out of bounds");
        Shape out_shape = x.shape();
        out_shape[axis] = len;
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
        for (int64_t i = axis + 1; i < r; ++i) inner *= x.dim(i);
        int64_t src_chunk = x.dim(axis) * inner;
        Tensor<T> out(out_shape);
        for (int64_t o = 0; o < outer; ++o)
            std::copy(x.data() + o * src_chunk + start * inner,
                      x.data() + o * src_chunk + (start + len) * inner,
                      out.data() + o * len * inner);
        return record("slice", std::move(out), {xv},
                      [outer, inner, src_chunk, start, len](Tape& t, int32_t id) {
                          Node& node = t.nodes_[id];
                          if (!t.wants_grad(node.parents[0])) return;
                          const Tensor<T>& g = t.grads_[id];
                          Tensor<T>& gx = t.grad_buffer(node.parents[0]);
                          for (int64_t o = 0; o < outer; ++o) {
                              const T* src = g.data() + o * len * inner;
                              T* dst = gx.data() + o * src_chunk + start * inner;
                              for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                          }
                      });
    }

    // Transpose of the last two axes.
    Var transpose(Var xv) {
        const Tensor<T>& x = value(xv);
        if (x.rank() < 2) throw ValidationError("transpose requires rank >= 2");
        int64_t m = x.dim(-2), n = x.dim(-1);
        int64_t batches = x.numel() / (m * n);
        Shape out_shape = x.shape();
        std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
        Tensor<T> out(out_shape);
        for (int64_t b = 0; b < batches; ++b) {
            const T* px = x.data() + b * m * n;
            T* po = out.data() + b * m * n;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
        }
        return record("transpose", std::move(out), {xv}, [m, n, batches](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t b = 0; b < batches; ++b) {
                const T* pg = g.data() + b * m * n;
                T* pgx = gx.data() + b * m * n;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) pgx[i * n + j] += pg[j * m + i];
            }
        });
    }

    // Swap axes 1 and 2 of a rank-4 tensor ([B,S,nh,hd] <-> [B,nh,S,hd]).
    Var swap_axes12(Var xv) {
        const Tensor<T>& x = value(xv);
        if (x.rank() != 4) throw ValidationError("swap_axes12 requires rank 4");
        int64_t b = x.dim(0), s = x.dim(1), h = x.dim(2), d = x.dim(3);
        Tensor<T> out(Shape{b, h, s, d});
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t si = 0; si < s; ++si)
                for (int64_t hi = 0; hi < h; ++hi)
                    std::copy(x.data() + ((bi * s + si) * h + hi) * d,
                              x.data() + ((bi * s + si) * h + hi) * d + d,
                              out.data() + ((bi * h + hi) * s + si) * d);
        return record("swap_axes12", std::move(out), {xv}, [b, s, h, d](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t si = 0; si < s; ++si)
                    for (int64_t hi = 0; hi < h; ++hi) {
                        const T* src = g.data() + ((bi * h + hi) * s + si) * d;
                        T* dst = gx.data() + ((bi * s + si) * h + hi) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
        });
    }

    Var reshape(Var xv, Shape shape) {
        const Tensor<T>& x = value(xv);
        if (shape_numel(shape) != x.numel())
            throw ValidationError("reshape numel mismatch " + shape_str(x.shape()) + " -> " +
                                  shape_str(shape));
        Tensor<T> out(shape, x.vec());
        return record("reshape", std::move(out), {xv}, [](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        });
    }

    // Mean cross-entropy over rows whose target is not ignore_index.
    // logits: [N, C]; targets: N class ids.
    Var cross_entropy(Var logits_v, const std::vector<int64_t>& targets, int64_t ignore_index) {
        const Tensor<T>& logits = value(logits_v);
        if (logits.rank() != 2) throw ValidationError("cross_entropy expects rank-2 logits");
        int64_t n = logits.dim(0), c = logits.dim(1);
        if (static_cast<int64_t>(targets.size()) != n)
            throw ValidationError("cross_entropy targets size mismatch");
        double loss = 0;
        int64_t count = 0;
        for (int64_t r = 0; r < n; ++r) {
            int64_t tgt = targets[r];
            if (tgt == ignore_index) continue;
            if (tgt < 0 || tgt >= c) throw ValidationError("cross_entropy target out of range");
            const T* row = logits.data() + r * c;
            double mx = row[0];
            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double sum = 0;
            for (int64_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
            loss += mx + std::log(sum) - static_cast<double>(row[tgt]);
            ++count;
        }
        Tensor<T> out = Tensor<T>::scalar(count > 0 ? static_cast<T>(loss / count) : T(0));
        auto targets_p = std::make_shared<std::vector<int64_t>>(targets);
        return record("cross_entropy", std::move(out), {logits_v},
                      [targets_p, ignore_index, n, c, count](Tape& t, int32_t id) {
                          Node& node = t.nodes_[id];
                          if (!t.wants_grad(node.parents[0]) || count == 0) return;
                          const T gscale = t.grads_[id][0] / static_cast<T>(count);
                          const Tensor<T>& logits = t.nodes_[node.parents[0]].value;
                          Tensor<T>& gl = t.grad_buffer(node.parents[0]);
                          for (int64_t r = 0; r < n; ++r) {
                              int64_t tgt = (*targets_p)[r];
                              if (tgt == ignore_index) continue;
                              const T* row = logits.data() + r * c;
                              double mx = row[0];
                              for (int64_t j = 1; j < c; ++j)
                                  mx = std::max(mx, static_cast<double>(row[j]));
                              double sum = 0;
                              for (int64_t j = 0; j < c; ++j)
                                  sum += std::exp(static_cast<double>(row[j]) - mx);
                              for (int64_t j = 0; j < c; ++j) {
                                  double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
                                  gl[r * c + j] += gscale * static_cast<T>(p - (j == tgt ? 1.0 : 0.0));
                              }
                          }
                      });
    }

    // Inverted dropout, seeded per call.
    Var dropout(Var xv, double rate, bool train_mode, uint64_t seed) {
        if (rate < 0 || rate >= 1) throw ValidationError("dropout rate out of range");
        const Tensor<T>& x = value(xv);
        if (!train_mode || rate == 0.0) {
            Tensor<T> out = x;
            return record("dropout", std::move(out), {xv}, [](Tape& t, int32_t id) {
                Node& node = t.nodes_[id];
                if (!t.wants_grad(node.parents[0])) return;
                const Tensor<T>& g = t.grads_[id];
                Tensor<T>& gx = t.grad_buffer(node.parents[0]);
                for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            });
        }
        Rng rng(seed);
        T scale = static_cast<T>(1.0 / (1.0 - rate));
        auto mask = std::make_shared<std::vector<uint8_t>>(x.numel());
        Tensor<T> out(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            bool keep = rng.uniform() >= rate;
            (*mask)[i] = keep;
            out[i] = keep ? x[i] * scale : T(0);
        }
        return record("dropout", std::move(out), {xv}, [mask, scale](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const Tensor<T>& g = t.grads_[id];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t i = 0; i < g.numel(); ++i)
                if ((*mask)[i]) gx[i] += g[i] * scale;
        });
    }

    Var sum(Var xv) {
        const Tensor<T>& x = value(xv);
        double s = 0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
        return record("sum", Tensor<T>::scalar(static_cast<T>(s)), {xv}, [](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            if (!t.wants_grad(node.parents[0])) return;
            const T g = t.grads_[id][0];
            Tensor<T>& gx = t.grad_buffer(node.parents[0]);
            for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
        });
    }

    // ---- backward ---------------------------------------------------------

    // Runs the reverse pass from a scalar loss. Gradients become available via
    // grad(); trainable leaves that did not participate get zero gradients.
    void backward(Var loss) {
        int32_t lid = check(loss);
        if (nodes_[lid].value.numel() != 1)
            throw ValidationError("backward requires a scalar loss");
        grads_[lid] = Tensor<T>(nodes_[lid].value.shape(), T(1));
        for (int32_t id = lid; id >= 0; --id) {
            Node& node = nodes_[id];
            if (!node.requires_grad || grads_[id].numel() == 0) continue;
            if (!grads_[id].all_finite())
                throw NumericError("non-finite gradient at op '" + node.op_name + "' (node " +
                                   std::to_string(id) + ")");
            if (node.backward) node.backward(*this, id);
        }
        for (int32_t id : trainable_leaves_)
            if (grads_[id].numel() == 0) grads_[id] = Tensor<T>(nodes_[id].value.shape(), T(0));
    }

    const std::vector<int32_t>& trainable_leaves() const { return trainable_leaves_; }

private:
    friend struct TapeTestAccess;

    int32_t check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
            throw ValidationError("invalid tape var");
        return v.id;
    }

    bool wants_grad(int32_t id) const { return nodes_[id].requires_grad; }

    Tensor<T>& grad_buffer(int32_t id) {
        if (grads_[id].numel() == 0 && nodes_[id].value.numel() != 0)
            grads_[id] = Tensor<T>(nodes_[id].value.shape(), T(0));
        return grads_[id];
    }

    Var record(const std::string& name, Tensor<T> out, const std::vector<Var>& parents,
               BackwardFn fn) {
        if (!out.all_finite())
            throw NumericError("non-finite output from op '" + name + "'");
        Node n;
        n.value = std::move(out);
        n.op_name = name;
        for (Var p : parents) {
            int32_t pid = check(p);
            n.parents.push_back(pid);
            if (nodes_[pid].requires_grad) n.requires_grad = true;
        }
        n.backward = n.requires_grad ? std::move(fn) : BackwardFn{};
        nodes_.push_back(std::move(n));
        grads_.emplace_back();
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    Var binary_broadcast(const std::string& name, Var av, Var bv) {
        const Tensor<T>& a = value(av);
        const Tensor<T>& b = value(bv);
        bool is_add = name == "add";
        Shape out_shape = detail::broadcast_shapes(a.shape(), b.shape());
        Tensor<T> out(out_shape);
        if (a.shape() == b.shape()) {
            for (int64_t i = 0; i < out.numel(); ++i)
                out[i] = is_add ? a[i] + b[i] : a[i] * b[i];
        } else {
            size_t r = out_shape.size();
            auto sa = detail::broadcast_strides(a.shape(), r, out_shape);
            auto sb = detail::broadcast_strides(b.shape(), r, out_shape);
            std::vector<int64_t> idx(r, 0);
            for (int64_t lin = 0; lin < out.numel(); ++lin) {
                int64_t oa = 0, ob = 0;
                for (size_t i = 0; i < r; ++i) {
                    oa += idx[i] * sa[i];
                    ob += idx[i] * sb[i];
                }
                out[lin] = is_add ? a[oa] + b[ob] : a[oa] * b[ob];
                for (size_t i = r; i-- > 0;) {
                    if (++idx[i] < out_shape[i]) break;
                    idx[i] = 0;
                }
            }
        }
        return record(name, std::move(out), {av, bv}, [is_add](Tape& t, int32_t id) {
            Node& node = t.nodes_[id];
            const Tensor<T>& g = t.grads_[id];
            const Tensor<T>& a = t.nodes_[node.parents[0]].value;
            const Tensor<T>& b = t.nodes_[node.parents[1]].value;
            for (int side = 0; side < 2; ++side) {
                int32_t p = node.parents[side];
                if (!t.wants_grad(p)) continue;
                const Tensor<T>& self = side == 0 ? a : b;
                const Tensor<T>& other = side == 0 ? b : a;
                Tensor<T> local;
                if (is_add) {
                    local = g;
                } else {
                    // d(a*b)/da = b, broadcast-expanded then reduced.
                    local = Tensor<T>(g.shape());
                    size_t r = g.shape().size();
                    auto so = detail::broadcast_strides(other.shape(), r, g.shape());
                    std::vector<int64_t> idx(r, 0);
                    for (int64_t lin = 0; lin < g.numel(); ++lin) {
                        int64_t oo = 0;
                        for (size_t i = 0; i < r; ++i) oo += idx[i] * so[i];
                        local[lin] = g[lin] * other[oo];
                        for (size_t i = r; i-- > 0;) {
                            if (++idx[i] < g.shape()[i]) break;
                            idx[i] = 0;
                        }
                    }
                }
                Tensor<T> reduced = detail::reduce_to_shape(local, self.shape());
                Tensor<T>& gp = t.grad_buffer(p);
                for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += reduced[i];
            }
        });
    }

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    std::vector<int32_t> trainable_leaves_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace contamlab
