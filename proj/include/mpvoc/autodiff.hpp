#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpvoc/signal.hpp"
#include "mpvoc/tensor.hpp"

namespace mpvoc {

// Branch tag of a trainable tensor: magnitude stream, phase stream, or shared.
enum class Branch { magnitude, phase, shared };

inline const char* branch_name(Branch b) {
    switch (b) {
        case Branch::magnitude: return "magnitude";
        case Branch::phase: return "phase";
        default: return "shared";
    }
}

struct Parameter {
    std::string name;
    Branch branch = Branch::shared;
    Tensor value;
    Tensor grad;
    bool has_grad = false;  // set by backward; zero_grad clears

    Parameter() = default;
    Parameter(std::string n, Branch b, Tensor v)
        : name(std::move(n)), branch(b), value(std::move(v)), grad(value.shape) {}

    void zero_grad() {
        std::fill(grad.data.begin(), grad.data.end(), 0.0);
        has_grad = false;
    }
};

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Records every op whose inputs require gradients; backward
// walks the records once, in reverse execution order. One tape per thread.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Opt in to summing parameter gradients across backward calls.
    void allow_grad_accumulation(bool on) { accumulate_ = on; }

    Var constant(Tensor v) { return push(std::move(v), false, nullptr, {}); }

    // Differentiable leaf not bound to any parameter (grad_check inputs).
    Var leaf(Tensor v) { return push(std::move(v), true, nullptr, {}); }

    // Leaf bound to a parameter; repeated calls for the same parameter on one
    // tape return the same node.
    Var param(Parameter& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        Var v = push(p.value, true, &p, {});
        param_nodes_.emplace(&p, v);
        return v;
    }

    const Tensor& val(Var v) const { return node(v).value; }
    const Tensor& grad(Var v) const {
        const Node& n = node(v);
        if (!n.requires_grad) throw std::logic_error("Tape: node does not require grad");
        return n.grad;
    }
    std::size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        param_nodes_.clear();
        ran_backward_ = false;
    }

    // ----- elementwise and scalar ops -------------------------------------

    Var add(Var a, Var b) { return binary("add", a, b, [](double x, double y) { return x + y; },
                                          [](double, double, double) { return 1.0; },
                                          [](double, double, double) { return 1.0; }); }

    Var sub(Var a, Var b) { return binary("sub", a, b, [](double x, double y) { return x - y; },
                                          [](double, double, double) { return 1.0; },
                                          [](double, double, double) { return -1.0; }); }

    Var mul(Var a, Var b) { return binary("mul", a, b, [](double x, double y) { return x * y; },
                                          [](double, double y, double) { return y; },
                                          [](double x, double, double) { return x; }); }

    Var div(Var a, Var b) {
        return binary("div", a, b, [](double x, double y) { return x / y; },
                      [](double, double y, double) { return 1.0 / y; },
                      [](double, double y, double out) { return -out / y; });
    }

    Var scale(Var a, double c) {
        return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
    }

    Var add_scalar(Var a, double c) {
        return unary("add_scalar", a, [c](double x) { return x + c; },
                     [](double, double) { return 1.0; });
    }

    Var neg(Var a) { return scale(a, -1.0); }

    Var exp(Var a) {
        return unary("exp", a, [](double x) { return std::exp(x); },
                     [](double, double y) { return y; });
    }

    Var log(Var a) {
        return unary("log", a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
    }

    Var sqrt(Var a) {
        return unary("sqrt", a, [](double x) { return std::sqrt(x); },
                     [](double, double y) { return 0.5 / y; });
    }

    Var square(Var a) {
        return unary("square", a, [](double x) { return x * x; },
                     [](double x, double) { return 2.0 * x; });
    }

    Var abs(Var a) {
        return unary("abs", a, [](double x) { return std::abs(x); },
                     [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    }

    Var sin(Var a) {
        return unary("sin", a, [](double x) { return std::sin(x); },
                     [](double x, double) { return std::cos(x); });
    }

    Var cos(Var a) {
        return unary("cos", a, [](double x) { return std::cos(x); },
                     [](double x, double) { return -std::sin(x); });
    }

    Var sigmoid(Var a) {
        return unary("sigmoid", a,
                     [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                     [](double, double y) { return y * (1.0 - y); });
    }

    Var gelu(Var a) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt_2pi = 0.39894228040143267794;
        return unary("gelu", a,
                     [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                     [=](double x, double) {
                         return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                                x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
                     });
    }

    Var leaky_relu(Var a, double slope = 0.01) {
        return unary("leaky_relu", a,
                     [slope](double x) { return x >= 0.0 ? x : slope * x; },
                     [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
    }

    Var clamp_min(Var a, double c) {
        return unary("clamp_min", a, [c](double x) { return x > c ? x : c; },
                     [c](double x, double) { return x > c ? 1.0 : 0.0; });
    }

    // Round with zero gradient (the 2*pi*h lattice in phase wrapping is constant a.e.).
    Var round_nograd(Var a) {
        Tensor out = val(a);
        for (double& v : out.data) v = std::round(v);
        return push(std::move(out), false, nullptr, {});
    }

    // Identity forward, gradient blocked.
    Var detach(Var a) { return push(val(a), false, nullptr, {}); }

    Var atan2(Var y, Var x) {
        const Tensor& ty = val(y);
        const Tensor& tx = val(x);
        if (!ty.same_shape(tx)) shape_error("atan2", ty, tx);
        Tensor out(ty.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::atan2(ty.data[i], tx.data[i]);
        const bool rg = requires_grad(y) || requires_grad(x);
        Var o = push(std::move(out), rg, nullptr, [this, y, x](const Tensor& g, const Tensor&) {
            const Tensor& vy = val(y);
            const Tensor& vx = val(x);
            if (requires_grad(y)) {
                Tensor& gy = mutable_grad(y);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double d = vx.data[i] * vx.data[i] + vy.data[i] * vy.data[i];
                    gy.data[i] += g.data[i] * vx.data[i] / d;
                }
            }
            if (requires_grad(x)) {
                Tensor& gx = mutable_grad(x);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double d = vx.data[i] * vx.data[i] + vy.data[i] * vy.data[i];
                    gx.data[i] += -g.data[i] * vy.data[i] / d;
                }
            }
        });
        return o;
    }

    // ----- reductions ------------------------------------------------------

    Var reduce_sum(Var a) {
        const Tensor& ta = val(a);
        double s = 0.0;
        for (double v : ta.data) s += v;
        Var o = push(Tensor::scalar(s), requires_grad(a), nullptr,
                     [this, a](const Tensor& g, const Tensor&) {
                         if (!requires_grad(a)) return;
                         Tensor& ga = mutable_grad(a);
                         for (double& v : ga.data) v += g.data[0];
                     });
        return o;
    }

    Var reduce_mean(Var a) {
        const Tensor& ta = val(a);
        if (ta.numel() == 0) throw std::invalid_argument("reduce_mean: empty tensor");
        const double inv = 1.0 / static_cast<double>(ta.numel());
        double s = 0.0;
        for (double v : ta.data) s += v;
        Var o = push(Tensor::scalar(s * inv), requires_grad(a), nullptr,
                     [this, a, inv](const Tensor& g, const Tensor&) {
                         if (!requires_grad(a)) return;
                         Tensor& ga = mutable_grad(a);
                         const double gv = g.data[0] * inv;
                         for (double& v : ga.data) v += gv;
                     });
        return o;
    }

    // ----- structural ops (rank 2 unless noted) -----------------------------

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
            shape_error("matmul", ta, tb);
        const int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
        Tensor out({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
                const double v = ta.data[static_cast<std::size_t>(i * k + p)];
                if (v == 0.0) continue;
                const double* br = &tb.data[static_cast<std::size_t>(p * n)];
                double* orow = &out.data[static_cast<std::size_t>(i * n)];
                for (int64_t j = 0; j < n; ++j) orow[j] += v * br[j];
            }
        const bool rg = requires_grad(a) || requires_grad(b);
        return push(std::move(out), rg, nullptr,
                    [this, a, b, m, k, n](const Tensor& g, const Tensor&) {
                        const Tensor& va = val(a);
                        const Tensor& vb = val(b);
                        if (requires_grad(a)) {
                            Tensor& ga = mutable_grad(a);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j) {
                                    const double gv = g.data[static_cast<std::size_t>(i * n + j)];
                                    if (gv == 0.0) continue;
                                    const double* brow = &vb.data[0];
                                    for (int64_t p = 0; p < k; ++p)
                                        ga.data[static_cast<std::size_t>(i * k + p)] +=
                                            gv * brow[static_cast<std::size_t>(p * n + j)];
                                }
                        }
                        if (requires_grad(b)) {
                            Tensor& gb = mutable_grad(b);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t p = 0; p < k; ++p) {
                                    const double av = va.data[static_cast<std::size_t>(i * k + p)];
                                    if (av == 0.0) continue;
                                    for (int64_t j = 0; j < n; ++j)
                                        gb.data[static_cast<std::size_t>(p * n + j)] +=
                                            av * g.data[static_cast<std::size_t>(i * n + j)];
                                }
                        }
                    });
    }

    // 1-D convolution, stride 1, zero "same" padding, odd kernel.
    // x: {C_in, T}; w: {C_out, C_in/groups, K}; bias: {C_out} or invalid Var.
    Var conv1d(Var x, Var w, Var bias, int64_t groups = 1) {
        const Tensor& tx = val(x);
        const Tensor& tw = val(w);
        if (tx.rank() != 2 || tw.rank() != 3)
            throw std::invalid_argument("conv1d: need x rank 2 and w rank 3");
        const int64_t c_in = tx.dim(0), t_len = tx.dim(1);
        const int64_t c_out = tw.dim(0), c_in_g = tw.dim(1), kk = tw.dim(2);
        if (groups < 1 || c_in % groups != 0 || c_out % groups != 0)
            throw std::invalid_argument("conv1d: groups must divide channel counts");
        if (c_in / groups != c_in_g)
            throw std::invalid_argument("conv1d: kernel input channels disagree with groups");
        if (kk % 2 != 1) throw std::invalid_argument("conv1d: kernel length must be odd");
        if (bias.valid() && (val(bias).rank() != 1 || val(bias).dim(0) != c_out))
            throw std::invalid_argument("conv1d: bias shape mismatch");
        const int64_t pad = kk / 2;
        const int64_t co_g = c_out / groups;

        Tensor out({c_out, t_len});
        for (int64_t g = 0; g < groups; ++g)
            for (int64_t co = g * co_g; co < (g + 1) * co_g; ++co) {
                double* orow = &out.data[static_cast<std::size_t>(co * t_len)];
                if (bias.valid()) {
                    const double bv = val(bias).data[static_cast<std::size_t>(co)];
                    for (int64_t t = 0; t < t_len; ++t) orow[t] = bv;
                }
                for (int64_t cg = 0; cg < c_in_g; ++cg) {
                    const int64_t ci = g * c_in_g + cg;
                    const double* xrow = &tx.data[static_cast<std::size_t>(ci * t_len)];
                    const double* wrow =
                        &tw.data[static_cast<std::size_t>((co * c_in_g + cg) * kk)];
                    for (int64_t k = 0; k < kk; ++k) {
                        const double wv = wrow[k];
                        if (wv == 0.0) continue;
                        const int64_t off = k - pad;
                        const int64_t t0 = std::max<int64_t>(0, -off);
                        const int64_t t1 = std::min<int64_t>(t_len, t_len - off);
                        for (int64_t t = t0; t < t1; ++t) orow[t] += wv * xrow[t + off];
                    }
                }
            }
        const bool rg = requires_grad(x) || requires_grad(w) || (bias.valid() && requires_grad(bias));
        return push(std::move(out), rg, nullptr,
                    [this, x, w, bias, groups, c_in_g, co_g, kk, pad, t_len](const Tensor& g,
                                                                             const Tensor&) {
                        const Tensor& vx = val(x);
                        const Tensor& vw = val(w);
                        if (bias.valid() && requires_grad(bias)) {
                            Tensor& gb = mutable_grad(bias);
                            const int64_t c_out = vw.dim(0);
                            for (int64_t co = 0; co < c_out; ++co) {
                                double s = 0.0;
                                const double* grow = &g.data[static_cast<std::size_t>(co * t_len)];
                                for (int64_t t = 0; t < t_len; ++t) s += grow[t];
                                gb.data[static_cast<std::size_t>(co)] += s;
                            }
                        }
                        for (int64_t gr = 0; gr < groups; ++gr)
                            for (int64_t co = gr * co_g; co < (gr + 1) * co_g; ++co) {
                                const double* grow = &g.data[static_cast<std::size_t>(co * t_len)];
                                for (int64_t cg = 0; cg < c_in_g; ++cg) {
                                    const int64_t ci = gr * c_in_g + cg;
                                    const double* xrow =
                                        &vx.data[static_cast<std::size_t>(ci * t_len)];
                                    const double* wrow =
                                        &vw.data[static_cast<std::size_t>((co * c_in_g + cg) * kk)];
                                    for (int64_t k = 0; k < kk; ++k) {
                                        const int64_t off = k - pad;
                                        const int64_t t0 = std::max<int64_t>(0, -off);
                                        const int64_t t1 = std::min<int64_t>(t_len, t_len - off);
                                        if (requires_grad(w)) {
                                            double s = 0.0;
                                            for (int64_t t = t0; t < t1; ++t)
                                                s += grow[t] * xrow[t + off];
                                            mutable_grad(w).data[static_cast<std::size_t>(
                                                (co * c_in_g + cg) * kk + k)] += s;
                                        }
                                        if (requires_grad(x)) {
                                            double* gx = &mutable_grad(x).data[static_cast<std::size_t>(
                                                ci * t_len)];
                                            const double wv = wrow[k];
                                            if (wv != 0.0)
                                                for (int64_t t = t0; t < t1; ++t)
                                                    gx[t + off] += wv * grow[t];
                                        }
                                    }
                                }
                            }
                    });
    }

    // Channel-wise layer norm on {C, T}: normalizes each time column across C.
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
        const Tensor& tx = val(x);
        if (tx.rank() != 2) throw std::invalid_argument("layer_norm: need rank-2 input");
        const int64_t c = tx.dim(0), t_len = tx.dim(1);
        if (val(gamma).numel() != c || val(beta).numel() != c)
            throw std::invalid_argument("layer_norm: gamma/beta must have C elements");
        Tensor out({c, t_len});
        Tensor xhat({c, t_len});
        Tensor inv_std({t_len});
        const Tensor& tg = val(gamma);
        const Tensor& tb = val(beta);
        for (int64_t t = 0; t < t_len; ++t) {
            double mu = 0.0;
            for (int64_t i = 0; i < c; ++i) mu += tx.data[static_cast<std::size_t>(i * t_len + t)];
            mu /= static_cast<double>(c);
            double var = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                const double d = tx.data[static_cast<std::size_t>(i * t_len + t)] - mu;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std.data[static_cast<std::size_t>(t)] = inv;
            for (int64_t i = 0; i < c; ++i) {
                const std::size_t idx = static_cast<std::size_t>(i * t_len + t);
                const double xh = (tx.data[idx] - mu) * inv;
                xhat.data[idx] = xh;
                out.data[idx] = tg.data[static_cast<std::size_t>(i)] * xh +
                                tb.data[static_cast<std::size_t>(i)];
            }
        }
        const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto istd = std::make_shared<Tensor>(std::move(inv_std));
        return push(std::move(out), rg, nullptr,
                    [this, x, gamma, beta, c, t_len, xh, istd](const Tensor& g, const Tensor&) {
                        const Tensor& tg = val(gamma);
                        if (requires_grad(gamma)) {
                            Tensor& gg = mutable_grad(gamma);
                            for (int64_t i = 0; i < c; ++i) {
                                double s = 0.0;
                                for (int64_t t = 0; t < t_len; ++t) {
                                    const std::size_t idx = static_cast<std::size_t>(i * t_len + t);
                                    s += g.data[idx] * xh->data[idx];
                                }
                                gg.data[static_cast<std::size_t>(i)] += s;
                            }
                        }
                        if (requires_grad(beta)) {
                            Tensor& gb = mutable_grad(beta);
                            for (int64_t i = 0; i < c; ++i) {
                                double s = 0.0;
                                for (int64_t t = 0; t < t_len; ++t)
                                    s += g.data[static_cast<std::size_t>(i * t_len + t)];
                                gb.data[static_cast<std::size_t>(i)] += s;
                            }
                        }
                        if (requires_grad(x)) {
                            Tensor& gx = mutable_grad(x);
                            const double invc = 1.0 / static_cast<double>(c);
                            for (int64_t t = 0; t < t_len; ++t) {
                                double sum_gxh = 0.0, sum_gxh_xh = 0.0;
                                for (int64_t i = 0; i < c; ++i) {
                                    const std::size_t idx = static_cast<std::size_t>(i * t_len + t);
                                    const double gxh =
                                        g.data[idx] * tg.data[static_cast<std::size_t>(i)];
                                    sum_gxh += gxh;
                                    sum_gxh_xh += gxh * xh->data[idx];
                                }
                                const double inv = istd->data[static_cast<std::size_t>(t)];
                                for (int64_t i = 0; i < c; ++i) {
                                    const std::size_t idx = static_cast<std::size_t>(i * t_len + t);
                                    const double gxh =
                                        g.data[idx] * tg.data[static_cast<std::size_t>(i)];
                                    gx.data[idx] += inv * (gxh - invc * sum_gxh -
                                                           xh->data[idx] * invc * sum_gxh_xh);
                                }
                            }
                        }
                    });
    }

    Var concat_rows(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(1))
            shape_error("concat_rows", ta, tb);
        const int64_t ra = ta.dim(0), rb = tb.dim(0), cols = ta.dim(1);
        Tensor out({ra + rb, cols});
        std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
        std::copy(tb.data.begin(), tb.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(ta.data.size()));
        const bool rg = requires_grad(a) || requires_grad(b);
        return push(std::move(out), rg, nullptr,
                    [this, a, b, ra, rb, cols](const Tensor& g, const Tensor&) {
                        if (requires_grad(a)) {
                            Tensor& ga = mutable_grad(a);
                            for (std::size_t i = 0; i < static_cast<std::size_t>(ra * cols); ++i)
                                ga.data[i] += g.data[i];
                        }
                        if (requires_grad(b)) {
                            Tensor& gb = mutable_grad(b);
                            const std::size_t off = static_cast<std::size_t>(ra * cols);
                            for (std::size_t i = 0; i < static_cast<std::size_t>(rb * cols); ++i)
                                gb.data[i] += g.data[off + i];
                        }
                    });
    }

    Var slice_rows(Var a, int64_t start, int64_t len) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) throw std::invalid_argument("slice_rows: need rank-2 input");
        if (start < 0 || len < 1 || start + len > ta.dim(0))
            throw std::invalid_argument("slice_rows: range out of bounds");
        const int64_t cols = ta.dim(1);
        Tensor out({len, cols});
        std::copy(ta.data.begin() + static_cast<std::ptrdiff_t>(start * cols),
                  ta.data.begin() + static_cast<std::ptrdiff_t>((start + len) * cols),
                  out.data.begin());
        return push(std::move(out), requires_grad(a), nullptr,
                    [this, a, start, len, cols](const Tensor& g, const Tensor&) {
                        if (!requires_grad(a)) return;
                        Tensor& ga = mutable_grad(a);
                        const std::size_t off = static_cast<std::size_t>(start * cols);
                        for (std::size_t i = 0; i < static_cast<std::size_t>(len * cols); ++i)
                            ga.data[off + i] += g.data[i];
                    });
    }

    Var transpose2d(Var a) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) throw std::invalid_argument("transpose2d: need rank-2 input");
        const int64_t r = ta.dim(0), c = ta.dim(1);
        Tensor out({c, r});
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
                out.data[static_cast<std::size_t>(j * r + i)] =
                    ta.data[static_cast<std::size_t>(i * c + j)];
        return push(std::move(out), requires_grad(a), nullptr,
                    [this, a, r, c](const Tensor& g, const Tensor&) {
                        if (!requires_grad(a)) return;
                        Tensor& ga = mutable_grad(a);
                        for (int64_t i = 0; i < r; ++i)
                            for (int64_t j = 0; j < c; ++j)
                                ga.data[static_cast<std::size_t>(i * c + j)] +=
                                    g.data[static_cast<std::size_t>(j * r + i)];
                    });
    }

    // Packs two {R, C} grids into {2, R, C} (complex spectrogram layout).
    Var pack2(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || !ta.same_shape(tb)) shape_error("pack2", ta, tb);
        Tensor out({2, ta.dim(0), ta.dim(1)});
        std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
        std::copy(tb.data.begin(), tb.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(ta.data.size()));
        const bool rg = requires_grad(a) || requires_grad(b);
        const std::size_t plane = ta.data.size();
        return push(std::move(out), rg, nullptr,
                    [this, a, b, plane](const Tensor& g, const Tensor&) {
                        if (requires_grad(a)) {
                            Tensor& ga = mutable_grad(a);
                            for (std::size_t i = 0; i < plane; ++i) ga.data[i] += g.data[i];
                        }
                        if (requires_grad(b)) {
                            Tensor& gb = mutable_grad(b);
                            for (std::size_t i = 0; i < plane; ++i) gb.data[i] += g.data[plane + i];
                        }
                    });
    }

    // Extracts plane i of a {P, R, C} tensor as {R, C}.
    Var plane(Var a, int64_t i) {
        const Tensor& ta = val(a);
        if (ta.rank() != 3 || i < 0 || i >= ta.dim(0))
            throw std::invalid_argument("plane: need rank-3 input and valid index");
        const std::size_t sz = static_cast<std::size_t>(ta.dim(1) * ta.dim(2));
        Tensor out({ta.dim(1), ta.dim(2)});
        std::copy(ta.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * sz),
                  ta.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i + 1) * sz),
                  out.data.begin());
        return push(std::move(out), requires_grad(a), nullptr,
                    [this, a, i, sz](const Tensor& g, const Tensor&) {
                        if (!requires_grad(a)) return;
                        Tensor& ga = mutable_grad(a);
                        const std::size_t off = static_cast<std::size_t>(i) * sz;
                        for (std::size_t k = 0; k < sz; ++k) ga.data[off + k] += g.data[k];
                    });
    }

    // ----- signal transforms as linear tape ops -----------------------------

    // wave {N} -> packed complex spectrogram {2, F, T}.
    Var stft_complex(Var wave, const StftConfig& cfg) {
        cfg.validate();
        const Tensor& tw = val(wave);
        if (tw.rank() != 1) throw std::invalid_argument("stft_complex: need rank-1 input");
        const int64_t n = tw.dim(0);
        Matrix re, im;
        signal_detail::stft_core(tw.data.data(), n, cfg, re, im);
        Tensor out({2, re.rows, re.cols});
        std::copy(re.a.begin(), re.a.end(), out.data.begin());
        std::copy(im.a.begin(), im.a.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(re.a.size()));
        const int64_t f_bins = re.rows, frames = re.cols;
        return push(std::move(out), requires_grad(wave), nullptr,
                    [this, wave, cfg, n, f_bins, frames](const Tensor& g, const Tensor&) {
                        if (!requires_grad(wave)) return;
                        Matrix gr(f_bins, frames), gi(f_bins, frames);
                        std::copy(g.data.begin(),
                                  g.data.begin() + static_cast<std::ptrdiff_t>(gr.a.size()),
                                  gr.a.begin());
                        std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(gr.a.size()),
                                  g.data.end(), gi.a.begin());
                        std::vector<double> gx;
                        signal_detail::stft_adjoint_core(gr, gi, n, cfg, gx);
                        Tensor& gw = mutable_grad(wave);
                        for (std::size_t i = 0; i < gx.size(); ++i) gw.data[i] += gx[i];
                    });
    }

    // packed complex spectrogram {2, F, T} -> wave {L}.
    Var istft_complex(Var packed, const StftConfig& cfg,
                      std::optional<int64_t> length = std::nullopt) {
        cfg.validate();
        const Tensor& tp = val(packed);
        if (tp.rank() != 3 || tp.dim(0) != 2 || tp.dim(1) != cfg.bins())
            throw std::invalid_argument("istft_complex: need {2, n_fft/2+1, T} input");
        const int64_t f_bins = tp.dim(1), frames = tp.dim(2);
        Matrix re(f_bins, frames), im(f_bins, frames);
        std::copy(tp.data.begin(), tp.data.begin() + static_cast<std::ptrdiff_t>(re.a.size()),
                  re.a.begin());
        std::copy(tp.data.begin() + static_cast<std::ptrdiff_t>(re.a.size()), tp.data.end(),
                  im.a.begin());
        std::vector<double> wave;
        signal_detail::istft_core(re, im, cfg, length, wave);
        Tensor out({static_cast<int64_t>(wave.size())});
        out.data = std::move(wave);
        return push(std::move(out), requires_grad(packed), nullptr,
                    [this, packed, cfg, frames, length](const Tensor& g, const Tensor&) {
                        if (!requires_grad(packed)) return;
                        Matrix gr, gi;
                        signal_detail::istft_adjoint_core(g.data, frames, cfg, length, gr, gi);
                        Tensor& gp = mutable_grad(packed);
                        for (std::size_t i = 0; i < gr.a.size(); ++i) gp.data[i] += gr.a[i];
                        for (std::size_t i = 0; i < gi.a.size(); ++i)
                            gp.data[gr.a.size() + i] += gi.a[i];
                    });
    }

    // ----- backward ---------------------------------------------------------

    void backward(Var loss) {
        if (val(loss).numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        if (!requires_grad(loss))
            throw std::invalid_argument("backward: loss does not require grad");
        if (ran_backward_)
            throw std::logic_error("backward: tape already differentiated; reset the tape first");
        ran_backward_ = true;
        mutable_grad(loss).data[0] = 1.0;
        for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.requires_grad && n.back) n.back(n.grad, n.value);
        }
        for (auto& [p, v] : param_nodes_) {
            if (p->has_grad && !accumulate_)
                throw std::logic_error("backward: parameter '" + p->name +
                                       "' already has gradients; zero them or opt in to "
                                       "accumulation");
            const Tensor& g = node(v).grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
            p->has_grad = true;
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(const Tensor&, const Tensor&)> back;  // (out grad, out value)
    };

    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, Var> param_nodes_;
    bool ran_backward_ = false;
    bool accumulate_ = false;

    const Node& node(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw std::logic_error("Tape: invalid var handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    bool requires_grad(Var v) const { return node(v).requires_grad; }

    Tensor& mutable_grad(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.requires_grad) throw std::logic_error("Tape: grad of non-differentiable node");
        return n.grad;
    }

    Var push(Tensor value, bool rg, Parameter* /*bound*/,
             std::function<void(const Tensor&, const Tensor&)> back) {
        if (!value.all_finite())
            throw std::runtime_error("Tape: non-finite value produced on the tape");
        Node n;
        n.requires_grad = rg;
        if (rg) n.grad = Tensor(value.shape);
        n.value = std::move(value);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    [[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) const {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }

    template <typename FwdFn, typename GradFn>
    Var unary(const char* name, Var a, FwdFn fwd, GradFn dfdx) {
        const Tensor& ta = val(a);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(ta.data[i]);
        if (!out.all_finite())
            throw std::runtime_error(std::string(name) + ": non-finite output");
        return push(std::move(out), requires_grad(a), nullptr,
                    [this, a, dfdx](const Tensor& g, const Tensor& y) {
                        if (!requires_grad(a)) return;
                        const Tensor& va = val(a);
                        Tensor& ga = mutable_grad(a);
                        for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] += g.data[i] * dfdx(va.data[i], y.data[i]);
                    });
    }

    // Elementwise binary op with scalar broadcast: shapes must match, or one
    // side must be a single element. dA/dB take (a, b, y).
    template <typename FwdFn, typename DaFn, typename DbFn>
    Var binary(const char* name, Var a, Var b, FwdFn fwd, DaFn dfda, DbFn dfdb) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        const bool a_scalar = ta.numel() == 1, b_scalar = tb.numel() == 1;
        if (!ta.same_shape(tb) && !a_scalar && !b_scalar) shape_error(name, ta, tb);
        const Tensor& shape_src = a_scalar && !b_scalar ? tb : ta;
        Tensor out(shape_src.shape);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const double av = ta.data[a_scalar ? 0 : i];
            const double bv = tb.data[b_scalar ? 0 : i];
            out.data[i] = fwd(av, bv);
        }
        if (!out.all_finite())
            throw std::runtime_error(std::string(name) + ": non-finite output");
        const bool rg = requires_grad(a) || requires_grad(b);
        return push(std::move(out), rg, nullptr,
                    [this, a, b, a_scalar, b_scalar, dfda, dfdb](const Tensor& g, const Tensor& y) {
                        const Tensor& va = val(a);
                        const Tensor& vb = val(b);
                        if (requires_grad(a)) {
                            Tensor& ga = mutable_grad(a);
                            for (std::size_t i = 0; i < g.data.size(); ++i) {
                                const double av = va.data[a_scalar ? 0 : i];
                                const double bv = vb.data[b_scalar ? 0 : i];
                                ga.data[a_scalar ? 0 : i] += g.data[i] * dfda(av, bv, y.data[i]);
                            }
                        }
                        if (requires_grad(b)) {
                            Tensor& gb = mutable_grad(b);
                            for (std::size_t i = 0; i < g.data.size(); ++i) {
                                const double av = va.data[a_scalar ? 0 : i];
                                const double bv = vb.data[b_scalar ? 0 : i];
                                gb.data[b_scalar ? 0 : i] += g.data[i] * dfdb(av, bv, y.data[i]);
                            }
                        }
                    });
    }
};

// Max relative error between analytic and central finite-difference gradients
// of a scalar-valued tensor function. f(tape, var) must be smooth at x; kinks
// (abs at 0, clamp thresholds) are outside the contract.
template <typename F>
double grad_check(F f, const Tensor& x, double h = 1e-5) {
    Tensor analytic;
    {
        Tape tape;
        Var in = tape.leaf(x);
        Var loss = f(tape, in);
        if (tape.val(loss).numel() != 1)
            throw std::invalid_argument("grad_check: function must be scalar-valued");
        tape.backward(loss);
        analytic = tape.grad(in);
    }
    auto eval = [&](const Tensor& point) {
        Tape tape;
        Var in = tape.leaf(point);
        return tape.val(f(tape, in)).data[0];
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double keep = probe.data[i];
        probe.data[i] = keep + h;
        const double up = eval(probe);
        probe.data[i] = keep - h;
        const double dn = eval(probe);
        probe.data[i] = keep;
        const double numeric = (up - dn) / (2.0 * h);
        const double a = analytic.data[i];
        const double err = std::abs(a - numeric) /
                           std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace mpvoc
