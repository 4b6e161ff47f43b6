#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stableidm/numcore/tape.hpp"

namespace stableidm::numcore {

namespace detail {

inline Tape& tape_of(Var a) {
    if (!a.valid()) throw ContractError("operation on an unbound Var");
    return *a.tape;
}

inline Tape& tape_of(Var a, Var b) {
    Tape& t = tape_of(a);
    if (b.tape != &t) throw ContractError("operands recorded on different tapes");
    return t;
}

// Runs fn(grad_of_input) only when the input participates in differentiation.
template <typename Fn>
void accumulate(Tape& t, std::size_t id, Fn&& fn) {
    if (!t.requires_grad(id)) return;
    fn(t.grad_buffer(id));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& av = a.value();
    av.require_same_shape(b.value(), "add");
    Tensor out = av;
    out += b.value();
    return t.record(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) { ga += g; });
                        detail::accumulate(tp, ib, [&](Tensor& gb) { gb += g; });
                    },
                    "add");
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    av.require_same_shape(bv, "sub");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return t.record(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) { ga += g; });
                        detail::accumulate(tp, ib, [&](Tensor& gb) {
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                        });
                    },
                    "sub");
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    av.require_same_shape(bv, "mul");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return t.record(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& av = tp.value(ia);
                        const Tensor& bv = tp.value(ib);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                        });
                        detail::accumulate(tp, ib, [&](Tensor& gb) {
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                        });
                    },
                    "mul");
}

inline Var add_const(Var a, const Tensor& c) {
    Tape& t = detail::tape_of(a);
    a.value().require_same_shape(c, "add_const");
    Tensor out = a.value();
    out += c;
    return t.record(std::move(out), {a.id},
                    [ia = a.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) { ga += g; });
                    },
                    "add_const");
}

inline Var scale(Var a, double s) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return t.record(std::move(out), {a.id},
                    [ia = a.id, s](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
                        });
                    },
                    "scale");
}

/// s * a where s is a single-element Var.
inline Var mul_scalar(Var a, Var s) {
    Tape& t = detail::tape_of(a, s);
    if (s.value().size() != 1) throw ShapeError("mul_scalar: scale must have one element, got " + shape_str(s.shape()));
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (auto& v : out.data()) v *= sv;
    return t.record(std::move(out), {a.id, s.id},
                    [ia = a.id, is = s.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const double sv = tp.value(is)[0];
                        const Tensor& av = tp.value(ia);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sv * g[i];
                        });
                        detail::accumulate(tp, is, [&](Tensor& gs) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                            gs[0] += acc;
                        });
                    },
                    "mul_scalar");
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var leaky_relu(Var a, double slope) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : slope * v;
    return t.record(std::move(out), {a.id},
                    [ia = a.id, slope](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& av = tp.value(ia);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : slope * g[i];
                        });
                    },
                    "leaky_relu");
}

inline Var sigmoid(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
    return t.record(std::move(out), {a.id},
                    [ia = a.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& y = tp.value(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        });
                    },
                    "sigmoid");
}

inline Var tanh(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::tanh(v);
    return t.record(std::move(out), {a.id},
                    [ia = a.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& y = tp.value(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                        });
                    },
                    "tanh");
}

inline double softplus_value(double x) {
    // log(1 + e^x) without overflow for large x.
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var softplus(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = softplus_value(v);
    return t.record(std::move(out), {a.id},
                    [ia = a.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& x = tp.value(ia);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / (1.0 + std::exp(-x[i]));
                        });
                    },
                    "softplus");
}

// ---------------------------------------------------------------------------
// Softmax

/// Plain-value softmax(logits / temperature), max-shifted.
inline std::vector<double> softmax_values(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ParameterError("softmax: temperature must be positive and finite, got " + std::to_string(temperature));
    }
    if (logits.empty()) throw ShapeError("softmax: empty logits");
    double mx = logits[0];
    for (double v : logits) {
        if (!std::isfinite(v)) throw ParameterError("softmax: non-finite logit");
        mx = std::max(mx, v);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - mx) / temperature);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

inline Var softmax(Var logits, double temperature) {
    Tape& t = detail::tape_of(logits);
    detail::require_rank(logits.value(), 1, "softmax", "logits");
    Tensor out = Tensor::vector(softmax_values(logits.value().data(), temperature));
    return t.record(std::move(out), {logits.id},
                    [il = logits.id, temperature](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& y = tp.value(self);
                        double dot = 0.0;
                        for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
                        detail::accumulate(tp, il, [&](Tensor& gl) {
                            for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += y[i] * (g[i] - dot) / temperature;
                        });
                    },
                    "softmax");
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
    std::size_t n, c, h, w;     // input
    std::size_t o, kh, kw;      // kernel
    std::size_t oh, ow;         // output
    std::size_t stride, pad;
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ParameterError("conv2d: stride must be positive");
    if (in.size() != 3 && in.size() != 4) {
        throw ShapeError("conv2d: input must be CxHxW or NxCxHxW, got " + shape_str(in));
    }
    if (kernel.size() != 4) throw ShapeError("conv2d: kernel must be OxIxKHxKW, got " + shape_str(kernel));
    ConvGeometry g{};
    const std::size_t off = in.size() == 4 ? 1 : 0;
    g.n = in.size() == 4 ? in[0] : 1;
    g.c = in[off];
    g.h = in[off + 1];
    g.w = in[off + 2];
    g.o = kernel[0];
    g.kh = kernel[2];
    g.kw = kernel[3];
    g.stride = stride;
    g.pad = pad;
    if (kernel[1] != g.c) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                         std::to_string(g.c) + " (input " + shape_str(in) + ", kernel " + shape_str(kernel) + ")");
    }
    if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
        throw ShapeError("conv2d: kernel " + shape_str(kernel) + " larger than padded input " + shape_str(in));
    }
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
    return g;
}

namespace detail {

/// Dot product with four interleaved partial sums, combined as (s0 + s1) + (s2 + s3).
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// Unfold one input image (C x H x W) into a (C*KH*KW) x (OH*OW) matrix with
// zeros where the window reaches into the padding.
inline void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t P = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * P;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add a column matrix back onto the image it was unfolded from.
inline void col2im(const double* col, const ConvGeometry& g, double* x) {
    const std::size_t P = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * P;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + oy * g.ow;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation with zero padding. Bias (length O) is optional.
inline Var conv2d(Var input, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t pad) {
    Tape& t = detail::tape_of(input, kernel);
    const Tensor& x = input.value();
    const Tensor& w = kernel.value();
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
    if (bias) {
        if (bias->tape != &t) throw ContractError("conv2d: bias on a different tape");
        if (bias->value().rank() != 1 || bias->value().size() != g.o) {
            throw ShapeError("conv2d: bias must have length " + std::to_string(g.o) + ", got " +
                             shape_str(bias->value().shape()));
        }
    }
    Shape out_shape = x.rank() == 4 ? Shape{g.n, g.o, g.oh, g.ow} : Shape{g.o, g.oh, g.ow};
    Tensor out(out_shape);
    const std::size_t K = g.c * g.kh * g.kw, P = g.oh * g.ow;
    std::vector<double> col(K * P);
    const double* wd = w.data().data();
    double* od = out.data().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        detail::im2col(x.data().data() + n * g.c * g.h * g.w, g, col.data());
        for (std::size_t o = 0; o < g.o; ++o) {
            double* orow = od + (n * g.o + o) * P;
            std::fill(orow, orow + P, bias ? bias->value()[o] : 0.0);
            const double* wrow = wd + o * K;
            for (std::size_t k = 0; k < K; ++k) {
                const double wv = wrow[k];
                const double* crow = col.data() + k * P;
                for (std::size_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
            }
        }
    }
    std::vector<std::size_t> inputs{input.id, kernel.id};
    const std::size_t ib = bias ? bias->id : input.id;
    if (bias) inputs.push_back(bias->id);
    const bool has_bias = bias.has_value();
    return t.record(
        std::move(out), std::move(inputs),
        [ix = input.id, iw = kernel.id, ib, has_bias, g](Tape& tp, std::size_t self) {
            const std::size_t K = g.c * g.kh * g.kw, P = g.oh * g.ow;
            const double* gd = tp.grad_buffer(self).data().data();
            const bool need_x = tp.requires_grad(ix);
            const bool need_w = tp.requires_grad(iw);
            const double* xd = tp.value(ix).data().data();
            const double* wd = tp.value(iw).data().data();
            double* gx = need_x ? tp.grad_buffer(ix).data().data() : nullptr;
            double* gw = need_w ? tp.grad_buffer(iw).data().data() : nullptr;
            std::vector<double> col(K * P);
            for (std::size_t n = 0; n < g.n; ++n) {
                const double* gn = gd + n * g.o * P;
                if (gw) {
                    detail::im2col(xd + n * g.c * g.h * g.w, g, col.data());
                    for (std::size_t o = 0; o < g.o; ++o) {
                        const double* grow = gn + o * P;
                        for (std::size_t k = 0; k < K; ++k) {
                            const double* crow = col.data() + k * P;
                            gw[o * K + k] += detail::dot(grow, crow, P);
                        }
                    }
                }
                if (gx) {
                    std::fill(col.begin(), col.end(), 0.0);
                    for (std::size_t o = 0; o < g.o; ++o) {
                        const double* grow = gn + o * P;
                        const double* wrow = wd + o * K;
                        for (std::size_t k = 0; k < K; ++k) {
                            const double wv = wrow[k];
                            double* crow = col.data() + k * P;
                            for (std::size_t p = 0; p < P; ++p) crow[p] += wv * grow[p];
                        }
                    }
                    detail::col2im(col.data(), g, gx + n * g.c * g.h * g.w);
                }
            }
            if (has_bias) {
                detail::accumulate(tp, ib, [&](Tensor& gb) {
                    for (std::size_t n = 0; n < g.n; ++n) {
                        for (std::size_t o = 0; o < g.o; ++o) {
                            const double* gplane = gd + (n * g.o + o) * P;
                            double acc = 0.0;
                            for (std::size_t i = 0; i < P; ++i) acc += gplane[i];
                            gb[o] += acc;
                        }
                    }
                });
            }
        },
        "conv2d");
}

// ---------------------------------------------------------------------------
// Bilinear sampling

namespace detail {

struct BilinearTap {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
    bool clamped_x, clamped_y;
};

inline BilinearTap bilinear_tap(double x, double y, std::size_t h, std::size_t w) {
    BilinearTap tap{};
    const double maxx = static_cast<double>(w - 1);
    const double maxy = static_cast<double>(h - 1);
    tap.clamped_x = x < 0.0 || x > maxx;
    tap.clamped_y = y < 0.0 || y > maxy;
    x = std::clamp(x, 0.0, maxx);
    y = std::clamp(y, 0.0, maxy);
    const double fx0 = std::floor(x);
    const double fy0 = std::floor(y);
    tap.x0 = static_cast<std::size_t>(fx0);
    tap.y0 = static_cast<std::size_t>(fy0);
    tap.x1 = std::min(tap.x0 + 1, w - 1);
    tap.y1 = std::min(tap.y0 + 1, h - 1);
    tap.fx = x - fx0;
    tap.fy = y - fy0;
    return tap;
}

}  // namespace detail

/// Sample map (C x H x W) at real pixel positions coords (2 x H' x W', channel
/// 0 = column x, channel 1 = row y). Positions outside the map are clamped to
/// the border, which makes the output flat in that coordinate.
inline Var bilinear_sample(Var map, Var coords) {
    Tape& t = detail::tape_of(map, coords);
    const Tensor& m = map.value();
    const Tensor& cd = coords.value();
    detail::require_rank(m, 3, "bilinear_sample", "map");
    detail::require_rank(cd, 3, "bilinear_sample", "coords");
    if (cd.dim(0) != 2) throw ShapeError("bilinear_sample: coords must have 2 channels, got " + shape_str(cd.shape()));
    if (cd.dim(1) != m.dim(1) || cd.dim(2) != m.dim(2)) {
        throw ShapeError("bilinear_sample: coords extents " + shape_str(cd.shape()) + " do not match map " +
                         shape_str(m.shape()));
    }
    const std::size_t C = m.dim(0), H = m.dim(1), W = m.dim(2);
    const std::size_t HW = H * W;
    Tensor out({C, H, W});
    for (std::size_t p = 0; p < HW; ++p) {
        const auto tap = detail::bilinear_tap(cd[p], cd[HW + p], H, W);
        const double w00 = (1 - tap.fx) * (1 - tap.fy), w01 = tap.fx * (1 - tap.fy);
        const double w10 = (1 - tap.fx) * tap.fy, w11 = tap.fx * tap.fy;
        for (std::size_t c = 0; c < C; ++c) {
            const double* pl = m.data().data() + c * HW;
            out[c * HW + p] = w00 * pl[tap.y0 * W + tap.x0] + w01 * pl[tap.y0 * W + tap.x1] +
                              w10 * pl[tap.y1 * W + tap.x0] + w11 * pl[tap.y1 * W + tap.x1];
        }
    }
    return t.record(
        std::move(out), {map.id, coords.id},
        [im = map.id, ic = coords.id, C, H, W](Tape& tp, std::size_t self) {
            const std::size_t HW = H * W;
            const Tensor& g = tp.grad_buffer(self);
            const Tensor& m = tp.value(im);
            const Tensor& cd = tp.value(ic);
            const bool need_m = tp.requires_grad(im);
            const bool need_c = tp.requires_grad(ic);
            double* gm = need_m ? tp.grad_buffer(im).data().data() : nullptr;
            double* gc = need_c ? tp.grad_buffer(ic).data().data() : nullptr;
            for (std::size_t p = 0; p < HW; ++p) {
                const auto tap = detail::bilinear_tap(cd[p], cd[HW + p], H, W);
                const double w00 = (1 - tap.fx) * (1 - tap.fy), w01 = tap.fx * (1 - tap.fy);
                const double w10 = (1 - tap.fx) * tap.fy, w11 = tap.fx * tap.fy;
                double dx = 0.0, dy = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double gv = g[c * HW + p];
                    const double* pl = m.data().data() + c * HW;
                    const double v00 = pl[tap.y0 * W + tap.x0], v01 = pl[tap.y0 * W + tap.x1];
                    const double v10 = pl[tap.y1 * W + tap.x0], v11 = pl[tap.y1 * W + tap.x1];
                    if (gm) {
                        double* gp = gm + c * HW;
                        gp[tap.y0 * W + tap.x0] += w00 * gv;
                        gp[tap.y0 * W + tap.x1] += w01 * gv;
                        gp[tap.y1 * W + tap.x0] += w10 * gv;
                        gp[tap.y1 * W + tap.x1] += w11 * gv;
                    }
                    dx += gv * ((v01 - v00) * (1 - tap.fy) + (v11 - v10) * tap.fy);
                    dy += gv * ((v10 - v00) * (1 - tap.fx) + (v11 - v01) * tap.fx);
                }
                if (gc) {
                    if (!tap.clamped_x) gc[p] += dx;
                    if (!tap.clamped_y) gc[HW + p] += dy;
                }
            }
        },
        "bilinear_sample");
}

/// Identity sampling grid (2 x H x W) for bilinear_sample.
inline Tensor identity_grid(std::size_t h, std::size_t w) {
    Tensor g({2, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            g[y * w + x] = static_cast<double>(x);
            g[h * w + y * w + x] = static_cast<double>(y);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dense layers and reductions

/// W (M x N) * x (N) + b (M, optional).
inline Var linear(Var x, Var weight, std::optional<Var> bias) {
    Tape& t = detail::tape_of(x, weight);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    detail::require_rank(wv, 2, "linear", "weight");
    detail::require_rank(xv, 1, "linear", "input");
    const std::size_t M = wv.dim(0), N = wv.dim(1);
    if (xv.size() != N) {
        throw ShapeError("linear: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
    }
    if (bias && (bias->value().rank() != 1 || bias->value().size() != M)) {
        throw ShapeError("linear: bias must have length " + std::to_string(M));
    }
    Tensor out({M});
    for (std::size_t i = 0; i < M; ++i) {
        const double* row = wv.data().data() + i * N;
        out[i] = (bias ? bias->value()[i] : 0.0) + detail::dot(row, xv.data().data(), N);
    }
    std::vector<std::size_t> inputs{x.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t ib = bias ? bias->id : x.id;
    const bool has_bias = bias.has_value();
    return t.record(std::move(out), std::move(inputs),
                    [ix = x.id, iw = weight.id, ib, has_bias, M, N](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& xv = tp.value(ix);
                        const Tensor& wv = tp.value(iw);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t i = 0; i < M; ++i) {
                                const double* row = wv.data().data() + i * N;
                                for (std::size_t j = 0; j < N; ++j) gx[j] += row[j] * g[i];
                            }
                        });
                        detail::accumulate(tp, iw, [&](Tensor& gw) {
                            for (std::size_t i = 0; i < M; ++i) {
                                double* row = gw.data().data() + i * N;
                                for (std::size_t j = 0; j < N; ++j) row[j] += g[i] * xv[j];
                            }
                        });
                        if (has_bias) detail::accumulate(tp, ib, [&](Tensor& gb) { gb += g; });
                    },
                    "linear");
}

/// Mean over the spatial extents of a C x H x W tensor -> C.
inline Var mean_spatial(Var x) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = x.value();
    detail::require_rank(xv, 3, "mean_spatial", "input");
    const std::size_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += xv[c * HW + i];
        out[c] = acc / static_cast<double>(HW);
    }
    return t.record(std::move(out), {x.id},
                    [ix = x.id, C, HW](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t c = 0; c < C; ++c) {
                                const double v = g[c] / static_cast<double>(HW);
                                for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += v;
                            }
                        });
                    },
                    "mean_spatial");
}

/// Weighted spatial average: sum(x * weights) / sum(weights) per channel.
/// weights is a constant H x W grid with a positive sum.
inline Var weighted_mean_spatial(Var x, const Tensor& weights) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = x.value();
    detail::require_rank(xv, 3, "weighted_mean_spatial", "input");
    detail::require_rank(weights, 2, "weighted_mean_spatial", "weights");
    if (weights.dim(0) != xv.dim(1) || weights.dim(1) != xv.dim(2)) {
        throw ShapeError("weighted_mean_spatial: weights " + shape_str(weights.shape()) + " do not match map " +
                         shape_str(xv.shape()));
    }
    const std::size_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
    double total = 0.0;
    for (std::size_t i = 0; i < HW; ++i) total += weights[i];
    if (!(total > 0.0)) throw ParameterError("weighted_mean_spatial: weights must have a positive sum");
    std::vector<double> norm(HW);
    for (std::size_t i = 0; i < HW; ++i) norm[i] = weights[i] / total;
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += xv[c * HW + i] * weights[i];
        out[c] = acc / total;
    }
    return t.record(std::move(out), {x.id},
                    [ix = x.id, C, HW, norm = std::move(norm)](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t c = 0; c < C; ++c) {
                                for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += g[c] * norm[i];
                            }
                        });
                    },
                    "weighted_mean_spatial");
}

/// Concatenate 1-D vars.
inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape& t = detail::tape_of(parts.front());
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    std::vector<double> data;
    for (const Var& p : parts) {
        if (p.tape != &t) throw ContractError("concat: operands on different tapes");
        detail::require_rank(p.value(), 1, "concat", "part");
        ids.push_back(p.id);
        offsets.push_back(data.size());
        data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    Tensor out = Tensor::vector(std::move(data));
    return t.record(std::move(out), ids,
                    [ids, offsets](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                            detail::accumulate(tp, ids[k], [&](Tensor& gp) {
                                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
                            });
                        }
                    },
                    "concat");
}

/// Stack two C x H x W maps along channels.
inline Var concat_channels(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_rank(av, 3, "concat_channels", "a");
    detail::require_rank(bv, 3, "concat_channels", "b");
    if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2)) {
        throw ShapeError("concat_channels: spatial mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    std::vector<double> data(av.data().begin(), av.data().end());
    data.insert(data.end(), bv.data().begin(), bv.data().end());
    Tensor out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)}, std::move(data));
    const std::size_t na = av.size();
    return t.record(std::move(out), {a.id, b.id},
                    [ia = a.id, ib = b.id, na](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                        });
                        detail::accumulate(tp, ib, [&](Tensor& gb) {
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                        });
                    },
                    "concat_channels");
}

/// Channels [begin, end) of a C x H x W map.
inline Var channel_slice(Var x, std::size_t begin, std::size_t end) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = x.value();
    detail::require_rank(xv, 3, "channel_slice", "input");
    if (begin >= end || end > xv.dim(0)) throw ShapeError("channel_slice: bad channel range");
    const std::size_t HW = xv.dim(1) * xv.dim(2);
    std::vector<double> data(xv.data().begin() + begin * HW, xv.data().begin() + end * HW);
    Tensor out({end - begin, xv.dim(1), xv.dim(2)}, std::move(data));
    return t.record(std::move(out), {x.id},
                    [ix = x.id, off = begin * HW](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
                        });
                    },
                    "channel_slice");
}

/// out[c] = scale[c] * x[c] for a C x H x W map and a length-C scale.
inline Var channel_scale(Var x, Var s) {
    Tape& t = detail::tape_of(x, s);
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    detail::require_rank(xv, 3, "channel_scale", "input");
    if (sv.rank() != 1 || sv.size() != xv.dim(0)) {
        throw ShapeError("channel_scale: scale " + shape_str(sv.shape()) + " does not match " + shape_str(xv.shape()));
    }
    const std::size_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
    Tensor out = xv;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] *= sv[c];
    }
    return t.record(std::move(out), {x.id, s.id},
                    [ix = x.id, is = s.id, C, HW](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& xv = tp.value(ix);
                        const Tensor& sv = tp.value(is);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t c = 0; c < C; ++c) {
                                for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += sv[c] * g[c * HW + i];
                            }
                        });
                        detail::accumulate(tp, is, [&](Tensor& gs) {
                            for (std::size_t c = 0; c < C; ++c) {
                                double acc = 0.0;
                                for (std::size_t i = 0; i < HW; ++i) acc += xv[c * HW + i] * g[c * HW + i];
                                gs[c] += acc;
                            }
                        });
                    },
                    "channel_scale");
}

/// out[c,y,x] = gate[0,y,x] * x[c,y,x].
inline Var gate_mul(Var gate, Var x) {
    Tape& t = detail::tape_of(gate, x);
    const Tensor& gv = gate.value();
    const Tensor& xv = x.value();
    detail::require_rank(xv, 3, "gate_mul", "input");
    if (gv.rank() != 3 || gv.dim(0) != 1 || gv.dim(1) != xv.dim(1) || gv.dim(2) != xv.dim(2)) {
        throw ShapeError("gate_mul: gate " + shape_str(gv.shape()) + " does not match " + shape_str(xv.shape()));
    }
    const std::size_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
    Tensor out = xv;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] *= gv[i];
    }
    return t.record(std::move(out), {gate.id, x.id},
                    [ig = gate.id, ix = x.id, C, HW](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        const Tensor& gv = tp.value(ig);
                        const Tensor& xv = tp.value(ix);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t c = 0; c < C; ++c) {
                                for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += gv[i] * g[c * HW + i];
                            }
                        });
                        detail::accumulate(tp, ig, [&](Tensor& gg) {
                            for (std::size_t c = 0; c < C; ++c) {
                                for (std::size_t i = 0; i < HW; ++i) gg[i] += xv[c * HW + i] * g[c * HW + i];
                            }
                        });
                    },
                    "gate_mul");
}

/// Single element of a 1-D var, as a length-1 var.
inline Var index(Var v, std::size_t i) {
    Tape& t = detail::tape_of(v);
    if (i >= v.value().size()) throw ShapeError("index: out of range");
    Tensor out = Tensor::scalar(v.value()[i]);
    return t.record(std::move(out), {v.id},
                    [iv = v.id, i](Tape& tp, std::size_t self) {
                        const double g = tp.grad_buffer(self)[0];
                        detail::accumulate(tp, iv, [&](Tensor& gv) { gv[i] += g; });
                    },
                    "index");
}

inline Var reshape(Var x, Shape shape) {
    Tape& t = detail::tape_of(x);
    Tensor out = x.value().reshaped(std::move(shape));
    return t.record(std::move(out), {x.id},
                    [ix = x.id](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad_buffer(self);
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
                    },
                    "reshape");
}

inline Var sum(Var x) {
    Tape& t = detail::tape_of(x);
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return t.record(Tensor::scalar(acc), {x.id},
                    [ix = x.id](Tape& tp, std::size_t self) {
                        const double g = tp.grad_buffer(self)[0];
                        detail::accumulate(tp, ix, [&](Tensor& gx) {
                            for (auto& v : gx.data()) v += g;
                        });
                    },
                    "sum");
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

/// Dot product with a constant tensor of matching shape.
inline Var dot_const(Var a, const Tensor& c) {
    Tape& t = detail::tape_of(a);
    a.value().require_same_shape(c, "dot_const");
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) acc += a.value()[i] * c[i];
    return t.record(Tensor::scalar(acc), {a.id},
                    [ia = a.id, c](Tape& tp, std::size_t self) {
                        const double g = tp.grad_buffer(self)[0];
                        detail::accumulate(tp, ia, [&](Tensor& ga) {
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * c[i];
                        });
                    },
                    "dot_const");
}

/// mean |pred - target| with sign(0) = 0.
inline Var l1_loss(Var pred, const Tensor& target) {
    Tape& t = detail::tape_of(pred);
    pred.value().require_same_shape(target, "l1_loss");
    const Tensor& p = pred.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - target[i]);
    const double n = static_cast<double>(p.size());
    return t.record(Tensor::scalar(acc / n), {pred.id},
                    [ip = pred.id, target, n](Tape& tp, std::size_t self) {
                        const double g = tp.grad_buffer(self)[0];
                        const Tensor& p = tp.value(ip);
                        detail::accumulate(tp, ip, [&](Tensor& gp) {
                            for (std::size_t i = 0; i < gp.size(); ++i) {
                                const double d = p[i] - target[i];
                                gp[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
                            }
                        });
                    },
                    "l1_loss");
}

}  // namespace stableidm::numcore
