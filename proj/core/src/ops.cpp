#include "cace/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cace::ops {

namespace {

void check_conv_args(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     const ConvSpec& spec, bool transposed) {
    spec.validate();
    long w_cin = transposed ? weights.n() : weights.c();
    long w_cout = transposed ? weights.c() : weights.n();
    if (w_cout != spec.out_channels)
        throw ShapeError("weight out_channels " + std::to_string(w_cout) +
                         " != spec out_channels " + std::to_string(spec.out_channels));
    if (w_cin != spec.in_channels)
        throw ShapeError("weight in_channels " + std::to_string(w_cin) +
                         " != spec in_channels " + std::to_string(spec.in_channels));
    if (weights.h() != spec.kh || weights.w() != spec.kw)
        throw ShapeError("weight kernel " + std::to_string(weights.h()) + "x" +
                         std::to_string(weights.w()) + " != spec kernel " +
                         std::to_string(spec.kh) + "x" + std::to_string(spec.kw));
    if (input.c() != spec.in_channels)
        throw ShapeError("input channel count " + std::to_string(input.c()) +
                         " != spec in_channels " + std::to_string(spec.in_channels));
    if (bias.c() != spec.out_channels || bias.n() != 1 || bias.h() != 1 || bias.w() != 1)
        throw ShapeError("bias must be 1x" + std::to_string(spec.out_channels) +
                         "x1x1, got " + bias.shape().str());
    if (input.dtype() != weights.dtype() || input.dtype() != bias.dtype())
        throw ShapeError("conv operand dtypes differ");
}

template <class T>
void conv2d_impl(const Tensor& input, const Tensor& weights, const Tensor& bias,
                 const ConvSpec& spec, Tensor& out) {
    const long N = input.n(), Ci = input.c(), H = input.h(), W = input.w();
    const long Co = spec.out_channels, Oh = out.h(), Ow = out.w();
    const T* in = input.data<T>();
    const T* wt = weights.data<T>();
    const T* b = bias.data<T>();
    T* o = out.data<T>();
    for (long n = 0; n < N; ++n) {
        for (long co = 0; co < Co; ++co) {
            T* acc = o + (n * Co + co) * Oh * Ow;
            std::fill(acc, acc + Oh * Ow, T(0));
            for (long ci = 0; ci < Ci; ++ci) {
                const T* ip = in + (n * Ci + ci) * H * W;
                const T* wp = wt + (co * Ci + ci) * spec.kh * spec.kw;
                for (long kh = 0; kh < spec.kh; ++kh) {
                    for (long kw = 0; kw < spec.kw; ++kw) {
                        const T wv = wp[kh * spec.kw + kw];
                        for (long oh = 0; oh < Oh; ++oh) {
                            const long ih = oh * spec.sh - spec.ph + kh * spec.dh;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = ip + ih * W;
                            T* arow = acc + oh * Ow;
                            const long iw0 = -spec.pw + kw * spec.dw;
                            // valid ow range so iw = ow*sw + iw0 stays in [0, W)
                            long ow_lo = 0, ow_hi = Ow;
                            if (iw0 < 0) ow_lo = (-iw0 + spec.sw - 1) / spec.sw;
                            if (iw0 + (Ow - 1) * spec.sw >= W)
                                ow_hi = (W - iw0 + spec.sw - 1) / spec.sw;
                            for (long ow = ow_lo; ow < ow_hi; ++ow)
                                arow[ow] += wv * irow[ow * spec.sw + iw0];
                        }
                    }
                }
            }
            const T bv = b[co];
            for (long i = 0; i < Oh * Ow; ++i) acc[i] += bv;
        }
    }
}

template <class T>
void conv2d_backward_impl(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                          const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w,
                          Tensor& grad_b) {
    const long N = input.n(), Ci = input.c(), H = input.h(), W = input.w();
    const long Co = spec.out_channels, Oh = grad_out.h(), Ow = grad_out.w();
    const T* in = input.data<T>();
    const T* wt = weights.data<T>();
    const T* go = grad_out.data<T>();
    T* gi = grad_in.data<T>();
    T* gw = grad_w.data<T>();
    T* gb = grad_b.data<T>();
    for (long n = 0; n < N; ++n) {
        for (long co = 0; co < Co; ++co) {
            const T* gp = go + (n * Co + co) * Oh * Ow;
            T gbs = 0;
            for (long i = 0; i < Oh * Ow; ++i) gbs += gp[i];
            gb[co] += gbs;
            for (long ci = 0; ci < Ci; ++ci) {
                const T* ip = in + (n * Ci + ci) * H * W;
                T* gip = gi + (n * Ci + ci) * H * W;
                const T* wp = wt + (co * Ci + ci) * spec.kh * spec.kw;
                T* gwp = gw + (co * Ci + ci) * spec.kh * spec.kw;
                for (long kh = 0; kh < spec.kh; ++kh) {
                    for (long kw = 0; kw < spec.kw; ++kw) {
                        const T wv = wp[kh * spec.kw + kw];
                        T wacc = 0;
                        for (long oh = 0; oh < Oh; ++oh) {
                            const long ih = oh * spec.sh - spec.ph + kh * spec.dh;
                            if (ih < 0 || ih >= H) continue;
                            const T* irow = ip + ih * W;
                            T* girow = gip + ih * W;
                            const T* grow = gp + oh * Ow;
                            const long iw0 = -spec.pw + kw * spec.dw;
                            long ow_lo = 0, ow_hi = Ow;
                            if (iw0 < 0) ow_lo = (-iw0 + spec.sw - 1) / spec.sw;
                            if (iw0 + (Ow - 1) * spec.sw >= W)
                                ow_hi = (W - iw0 + spec.sw - 1) / spec.sw;
                            for (long ow = ow_lo; ow < ow_hi; ++ow) {
                                const long iw = ow * spec.sw + iw0;
                                wacc += grow[ow] * irow[iw];
                                girow[iw] += wv * grow[ow];
                            }
                        }
                        gwp[kh * spec.kw + kw] += wacc;
                    }
                }
            }
        }
    }
}

template <class T>
void tconv2d_impl(const Tensor& input, const Tensor& weights, const Tensor& bias,
                  const ConvSpec& spec, Tensor& out) {
    const long N = input.n(), Ci = input.c(), H = input.h(), W = input.w();
    const long Co = spec.out_channels, Oh = out.h(), Ow = out.w();
    const T* in = input.data<T>();
    const T* wt = weights.data<T>();
    const T* b = bias.data<T>();
    T* o = out.data<T>();
    for (long n = 0; n < N; ++n) {
        for (long co = 0; co < Co; ++co) {
            T* acc = o + (n * Co + co) * Oh * Ow;
            const T bv = b[co];
            std::fill(acc, acc + Oh * Ow, bv);
            for (long ci = 0; ci < Ci; ++ci) {
                const T* ip = in + (n * Ci + ci) * H * W;
                const T* wp = wt + (ci * Co + co) * spec.kh * spec.kw;
                for (long ih = 0; ih < H; ++ih) {
                    for (long iw = 0; iw < W; ++iw) {
                        const T v = ip[ih * W + iw];
                        if (v == T(0)) continue;
                        for (long kh = 0; kh < spec.kh; ++kh) {
                            const long oh = ih * spec.sh - spec.ph + kh * spec.dh;
                            if (oh < 0 || oh >= Oh) continue;
                            for (long kw = 0; kw < spec.kw; ++kw) {
                                const long ow = iw * spec.sw - spec.pw + kw * spec.dw;
                                if (ow < 0 || ow >= Ow) continue;
                                acc[oh * Ow + ow] += v * wp[kh * spec.kw + kw];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void tconv2d_backward_impl(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                           const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w,
                           Tensor& grad_b) {
    const long N = input.n(), Ci = input.c(), H = input.h(), W = input.w();
    const long Co = spec.out_channels, Oh = grad_out.h(), Ow = grad_out.w();
    const T* in = input.data<T>();
    const T* wt = weights.data<T>();
    const T* go = grad_out.data<T>();
    T* gi = grad_in.data<T>();
    T* gw = grad_w.data<T>();
    T* gb = grad_b.data<T>();
    for (long n = 0; n < N; ++n) {
        for (long co = 0; co < Co; ++co) {
            const T* gp = go + (n * Co + co) * Oh * Ow;
            T gbs = 0;
            for (long i = 0; i < Oh * Ow; ++i) gbs += gp[i];
            gb[co] += gbs;
        }
        for (long ci = 0; ci < Ci; ++ci) {
            const T* ip = in + (n * Ci + ci) * H * W;
            T* gip = gi + (n * Ci + ci) * H * W;
            for (long co = 0; co < Co; ++co) {
                const T* gp = go + (n * Co + co) * Oh * Ow;
                const T* wp = wt + (ci * Co + co) * spec.kh * spec.kw;
                T* gwp = gw + (ci * Co + co) * spec.kh * spec.kw;
                for (long ih = 0; ih < H; ++ih) {
                    for (long iw = 0; iw < W; ++iw) {
                        const T v = ip[ih * W + iw];
                        T gacc = 0;
                        for (long kh = 0; kh < spec.kh; ++kh) {
                            const long oh = ih * spec.sh - spec.ph + kh * spec.dh;
                            if (oh < 0 || oh >= Oh) continue;
                            for (long kw = 0; kw < spec.kw; ++kw) {
                                const long ow = iw * spec.sw - spec.pw + kw * spec.dw;
                                if (ow < 0 || ow >= Ow) continue;
                                const T g = gp[oh * Ow + ow];
                                gacc += g * wp[kh * spec.kw + kw];
                                gwp[kh * spec.kw + kw] += g * v;
                            }
                        }
                        gip[ih * W + iw] += gacc;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec) {
    check_conv_args(input, weights, bias, spec, false);
    const long oh = spec.out_h(input.h()), ow = spec.out_w(input.w());
    if (oh < 1 || ow < 1)
        throw ShapeError("conv output would be empty for input " + input.shape().str());
    Tensor out(input.n(), spec.out_channels, oh, ow, input.dtype());
    if (input.dtype() == DType::f64)
        conv2d_impl<double>(input, weights, bias, spec, out);
    else
        conv2d_impl<float>(input, weights, bias, spec, out);
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w, Tensor& grad_b) {
    grad_in = Tensor(input.shape(), input.dtype());
    grad_w = Tensor(weights.shape(), input.dtype());
    grad_b = Tensor(1, spec.out_channels, 1, 1, input.dtype());
    if (input.dtype() == DType::f64)
        conv2d_backward_impl<double>(input, weights, spec, grad_out, grad_in, grad_w, grad_b);
    else
        conv2d_backward_impl<float>(input, weights, spec, grad_out, grad_in, grad_w, grad_b);
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
                         const ConvSpec& spec) {
    check_conv_args(input, weights, bias, spec, true);
    if (spec.oph >= spec.sh || spec.opw >= spec.sw)
        throw ShapeError("transposed conv output padding must be < stride");
    const long oh = spec.tconv_out_h(input.h()), ow = spec.tconv_out_w(input.w());
    if (oh < 1 || ow < 1)
        throw ShapeError("transposed conv output would be empty for input " + input.shape().str());
    Tensor out(input.n(), spec.out_channels, oh, ow, input.dtype());
    if (input.dtype() == DType::f64)
        tconv2d_impl<double>(input, weights, bias, spec, out);
    else
        tconv2d_impl<float>(input, weights, bias, spec, out);
    return out;
}

void transposed_conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                                const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w,
                                Tensor& grad_b) {
    grad_in = Tensor(input.shape(), input.dtype());
    grad_w = Tensor(weights.shape(), input.dtype());
    grad_b = Tensor(1, spec.out_channels, 1, 1, input.dtype());
    if (input.dtype() == DType::f64)
        tconv2d_backward_impl<double>(input, weights, spec, grad_out, grad_in, grad_w, grad_b);
    else
        tconv2d_backward_impl<float>(input, weights, spec, grad_out, grad_in, grad_w, grad_b);
}

PoolResult maxpool2d(const Tensor& input, long kh, long kw, long sh, long sw) {
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1) throw ShapeError("maxpool window/stride must be >= 1");
    if (kh > input.h() || kw > input.w())
        throw ShapeError("maxpool window " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than input " + input.shape().str());
    const long oh = (input.h() - kh) / sh + 1;
    const long ow = (input.w() - kw) / sw + 1;
    PoolResult r{Tensor(input.n(), input.c(), oh, ow, input.dtype()), {}};
    r.argmax.resize(size_t(r.value.numel()));
    long oi = 0;
    for (long n = 0; n < input.n(); ++n)
        for (long c = 0; c < input.c(); ++c)
            for (long i = 0; i < oh; ++i)
                for (long j = 0; j < ow; ++j, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    long best_idx = -1;
                    for (long di = 0; di < kh; ++di)
                        for (long dj = 0; dj < kw; ++dj) {
                            const long idx = input.index(n, c, i * sh + di, j * sw + dj);
                            const double v = input.get(idx);
                            if (v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    r.value.set(oi, best);
                    r.argmax[size_t(oi)] = best_idx;
                }
    return r;
}

Tensor maxpool2d_backward(const Shape& in_shape, DType dt, const std::vector<long>& argmax,
                          const Tensor& grad_out) {
    Tensor gi(in_shape, dt);
    for (long i = 0; i < grad_out.numel(); ++i)
        gi.set(argmax[size_t(i)], gi.get(argmax[size_t(i)]) + grad_out.get(i));
    return gi;
}

Tensor global_avg_pool(const Tensor& input) {
    Tensor out(input.n(), input.c(), 1, 1, input.dtype());
    const double inv = 1.0 / double(input.h() * input.w());
    for (long n = 0; n < input.n(); ++n)
        for (long c = 0; c < input.c(); ++c) {
            double s = 0;
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j) s += input.at(n, c, i, j);
            out.at(n, c, 0, 0, s * inv);
        }
    return out;
}

Tensor global_avg_pool_backward(const Shape& in_shape, const Tensor& grad_out) {
    Tensor gi(in_shape, grad_out.dtype());
    const double inv = 1.0 / double(in_shape.h * in_shape.w);
    for (long n = 0; n < in_shape.n; ++n)
        for (long c = 0; c < in_shape.c; ++c) {
            const double g = grad_out.at(n, c, 0, 0) * inv;
            for (long i = 0; i < in_shape.h; ++i)
                for (long j = 0; j < in_shape.w; ++j) gi.at(n, c, i, j, g);
        }
    return gi;
}

BnResult batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, BnMode mode, double momentum,
                    double epsilon) {
    const long C = input.c();
    if (gamma.c() != C || beta.c() != C)
        throw ShapeError("batch norm gamma/beta channel count != " + std::to_string(C));
    BnResult r;
    r.value = Tensor(input.shape(), input.dtype());
    r.mean = Tensor(1, C, 1, 1);
    r.invstd = Tensor(1, C, 1, 1);
    const long m = input.n() * input.h() * input.w();
    for (long c = 0; c < C; ++c) {
        double mean, var;
        if (mode == BnMode::train) {
            double s = 0;
            for (long n = 0; n < input.n(); ++n)
                for (long i = 0; i < input.h(); ++i)
                    for (long j = 0; j < input.w(); ++j) s += input.at(n, c, i, j);
            mean = s / double(m);
            double sq = 0;
            for (long n = 0; n < input.n(); ++n)
                for (long i = 0; i < input.h(); ++i)
                    for (long j = 0; j < input.w(); ++j) {
                        const double d = input.at(n, c, i, j) - mean;
                        sq += d * d;
                    }
            var = sq / double(m);  // biased, as normalization uses batch statistics
            running_mean.set(c, (1.0 - momentum) * running_mean.get(c) + momentum * mean);
            running_var.set(c, (1.0 - momentum) * running_var.get(c) + momentum * var);
        } else {
            mean = running_mean.get(c);
            var = running_var.get(c);
        }
        const double invstd = 1.0 / std::sqrt(var + epsilon);
        r.mean.set(c, mean);
        r.invstd.set(c, invstd);
        const double g = gamma.get(c), b = beta.get(c);
        for (long n = 0; n < input.n(); ++n)
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j) {
                    const long idx = input.index(n, c, i, j);
                    r.value.set(idx, g * (input.get(idx) - mean) * invstd + b);
                }
    }
    return r;
}

void batch_norm_backward(const Tensor& input, const Tensor& gamma, const Tensor& mean,
                         const Tensor& invstd, BnMode mode, const Tensor& grad_out,
                         Tensor& grad_in, Tensor& grad_gamma, Tensor& grad_beta) {
    const long C = input.c();
    grad_in = Tensor(input.shape(), input.dtype());
    grad_gamma = Tensor(1, C, 1, 1, input.dtype());
    grad_beta = Tensor(1, C, 1, 1, input.dtype());
    const long m = input.n() * input.h() * input.w();
    for (long c = 0; c < C; ++c) {
        const double mu = mean.get(c), is = invstd.get(c), g = gamma.get(c);
        double sum_g = 0, sum_gx = 0;
        for (long n = 0; n < input.n(); ++n)
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j) {
                    const long idx = input.index(n, c, i, j);
                    const double go = grad_out.get(idx);
                    sum_g += go;
                    sum_gx += go * (input.get(idx) - mu) * is;
                }
        grad_gamma.set(c, sum_gx);
        grad_beta.set(c, sum_g);
        for (long n = 0; n < input.n(); ++n)
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j) {
                    const long idx = input.index(n, c, i, j);
                    const double go = grad_out.get(idx);
                    if (mode == BnMode::train) {
                        const double xhat = (input.get(idx) - mu) * is;
                        grad_in.set(idx, g * is *
                                             (go - sum_g / double(m) - xhat * sum_gx / double(m)));
                    } else {
                        grad_in.set(idx, g * is * go);
                    }
                }
    }
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape(), input.dtype());
    for (long i = 0; i < input.numel(); ++i) out.set(i, std::max(0.0, input.get(i)));
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    Tensor gi(input.shape(), input.dtype());
    for (long i = 0; i < input.numel(); ++i)
        gi.set(i, input.get(i) > 0.0 ? grad_out.get(i) : 0.0);
    return gi;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out(input.shape(), input.dtype());
    // keep the range strictly inside (0, 1): at large inputs the quotient
    // rounds to exactly 1, which downstream log/boundary code must never see
    const bool f32 = input.dtype() == DType::f32;
    const double hi = f32 ? double(std::nextafter(1.0f, 0.0f)) : std::nextafter(1.0, 0.0);
    const double lo = f32 ? double(std::numeric_limits<float>::denorm_min())
                          : std::numeric_limits<double>::denorm_min();
    for (long i = 0; i < input.numel(); ++i)
        out.set(i, std::clamp(1.0 / (1.0 + std::exp(-input.get(i))), lo, hi));
    return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
    Tensor gi(output.shape(), output.dtype());
    for (long i = 0; i < output.numel(); ++i) {
        const double y = output.get(i);
        gi.set(i, grad_out.get(i) * y * (1.0 - y));
    }
    return gi;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = a;
    out += b;
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels needs at least one operand");
    long ctot = 0;
    for (const auto& p : parts) {
        if (p.n() != parts[0].n() || p.h() != parts[0].h() || p.w() != parts[0].w())
            throw ShapeError("concat_channels operands disagree on n/h/w");
        ctot += p.c();
    }
    Tensor out(parts[0].n(), ctot, parts[0].h(), parts[0].w(), parts[0].dtype());
    long coff = 0;
    for (const auto& p : parts) {
        for (long n = 0; n < p.n(); ++n)
            for (long c = 0; c < p.c(); ++c)
                for (long i = 0; i < p.h(); ++i)
                    for (long j = 0; j < p.w(); ++j)
                        out.at(n, coff + c, i, j, p.at(n, c, i, j));
        coff += p.c();
    }
    return out;
}

Tensor slice_channels(const Tensor& input, long c_begin, long c_count) {
    if (c_begin < 0 || c_count < 1 || c_begin + c_count > input.c())
        throw ShapeError("slice_channels range out of bounds");
    Tensor out(input.n(), c_count, input.h(), input.w(), input.dtype());
    for (long n = 0; n < input.n(); ++n)
        for (long c = 0; c < c_count; ++c)
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j)
                    out.at(n, c, i, j, input.at(n, c_begin + c, i, j));
    return out;
}

Tensor scale_channels(const Tensor& input, const Tensor& s) {
    if (s.n() != input.n() || s.c() != input.c() || s.h() != 1 || s.w() != 1)
        throw ShapeError("scale_channels expects scale shaped " + std::to_string(input.n()) + "x" +
                         std::to_string(input.c()) + "x1x1, got " + s.shape().str());
    Tensor out(input.shape(), input.dtype());
    for (long n = 0; n < input.n(); ++n)
        for (long c = 0; c < input.c(); ++c) {
            const double sv = s.at(n, c, 0, 0);
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j)
                    out.at(n, c, i, j, input.at(n, c, i, j) * sv);
        }
    return out;
}

void scale_channels_backward(const Tensor& input, const Tensor& s, const Tensor& grad_out,
                             Tensor& grad_in, Tensor& grad_s) {
    grad_in = Tensor(input.shape(), input.dtype());
    grad_s = Tensor(s.shape(), input.dtype());
    for (long n = 0; n < input.n(); ++n)
        for (long c = 0; c < input.c(); ++c) {
            const double sv = s.at(n, c, 0, 0);
            double acc = 0;
            for (long i = 0; i < input.h(); ++i)
                for (long j = 0; j < input.w(); ++j) {
                    const long idx = input.index(n, c, i, j);
                    grad_in.set(idx, grad_out.get(idx) * sv);
                    acc += grad_out.get(idx) * input.get(idx);
                }
            grad_s.at(n, c, 0, 0, acc);
        }
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.h() != 1 || input.w() != 1)
        throw ShapeError("linear expects input shaped n x c x 1 x 1, got " + input.shape().str());
    const long in_f = input.c(), out_f = weights.n();
    if (weights.c() != in_f)
        throw ShapeError("linear weight in features " + std::to_string(weights.c()) +
                         " != input features " + std::to_string(in_f));
    if (bias.c() != out_f) throw ShapeError("linear bias length != out features");
    Tensor out(input.n(), out_f, 1, 1, input.dtype());
    for (long n = 0; n < input.n(); ++n)
        for (long o = 0; o < out_f; ++o) {
            double acc = 0;
            for (long i = 0; i < in_f; ++i) acc += weights.at(o, i, 0, 0) * input.at(n, i, 0, 0);
            out.at(n, o, 0, 0, acc + bias.get(o));
        }
    return out;
}

void linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w, Tensor& grad_b) {
    const long in_f = input.c(), out_f = weights.n();
    grad_in = Tensor(input.shape(), input.dtype());
    grad_w = Tensor(weights.shape(), input.dtype());
    grad_b = Tensor(1, out_f, 1, 1, input.dtype());
    for (long n = 0; n < input.n(); ++n)
        for (long o = 0; o < out_f; ++o) {
            const double g = grad_out.at(n, o, 0, 0);
            grad_b.set(o, grad_b.get(o) + g);
            for (long i = 0; i < in_f; ++i) {
                grad_w.at(o, i, 0, 0, grad_w.at(o, i, 0, 0) + g * input.at(n, i, 0, 0));
                grad_in.at(n, i, 0, 0, grad_in.at(n, i, 0, 0) + g * weights.at(o, i, 0, 0));
            }
        }
}

namespace {

struct LerpCoord {
    long lo, hi;
    double w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

LerpCoord bilinear_coord(long out_i, long out_n, long in_n) {
    const double scale = double(in_n) / double(out_n);
    double src = (double(out_i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > double(in_n - 1)) src = double(in_n - 1);
    LerpCoord c;
    c.lo = long(src);
    c.hi = std::min(c.lo + 1, in_n - 1);
    c.w_hi = src - double(c.lo);
    return c;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, long target_h, long target_w) {
    if (target_h < 1 || target_w < 1) throw ShapeError("bilinear target size must be >= 1");
    Tensor out(input.n(), input.c(), target_h, target_w, input.dtype());
    for (long i = 0; i < target_h; ++i) {
        const LerpCoord ry = bilinear_coord(i, target_h, input.h());
        for (long j = 0; j < target_w; ++j) {
            const LerpCoord rx = bilinear_coord(j, target_w, input.w());
            for (long n = 0; n < input.n(); ++n)
                for (long c = 0; c < input.c(); ++c) {
                    const double v =
                        (1 - ry.w_hi) * ((1 - rx.w_hi) * input.at(n, c, ry.lo, rx.lo) +
                                         rx.w_hi * input.at(n, c, ry.lo, rx.hi)) +
                        ry.w_hi * ((1 - rx.w_hi) * input.at(n, c, ry.hi, rx.lo) +
                                   rx.w_hi * input.at(n, c, ry.hi, rx.hi));
                    out.at(n, c, i, j, v);
                }
        }
    }
    return out;
}

Tensor bilinear_upsample_backward(const Shape& in_shape, DType dt, const Tensor& grad_out) {
    Tensor gi(in_shape, dt);
    for (long i = 0; i < grad_out.h(); ++i) {
        const LerpCoord ry = bilinear_coord(i, grad_out.h(), in_shape.h);
        for (long j = 0; j < grad_out.w(); ++j) {
            const LerpCoord rx = bilinear_coord(j, grad_out.w(), in_shape.w);
            for (long n = 0; n < in_shape.n; ++n)
                for (long c = 0; c < in_shape.c; ++c) {
                    const double g = grad_out.at(n, c, i, j);
                    gi.at(n, c, ry.lo, rx.lo,
                          gi.at(n, c, ry.lo, rx.lo) + g * (1 - ry.w_hi) * (1 - rx.w_hi));
                    gi.at(n, c, ry.lo, rx.hi,
                          gi.at(n, c, ry.lo, rx.hi) + g * (1 - ry.w_hi) * rx.w_hi);
                    gi.at(n, c, ry.hi, rx.lo,
                          gi.at(n, c, ry.hi, rx.lo) + g * ry.w_hi * (1 - rx.w_hi));
                    gi.at(n, c, ry.hi, rx.hi,
                          gi.at(n, c, ry.hi, rx.hi) + g * ry.w_hi * rx.w_hi);
                }
        }
    }
    return gi;
}

Tensor mean_all(const Tensor& input) {
    double s = 0;
    for (long i = 0; i < input.numel(); ++i) s += input.get(i);
    return Tensor::full(1, 1, 1, 1, s / double(input.numel()), input.dtype());
}

Tensor mean_all_backward(const Shape& in_shape, DType dt, const Tensor& grad_out) {
    return Tensor::full(in_shape.n, in_shape.c, in_shape.h, in_shape.w,
                        grad_out.get(0) / double(in_shape.numel()), dt);
}

double bce_loss(const Tensor& prediction, const Tensor& target, double epsilon) {
    if (prediction.shape() != target.shape())
        throw ShapeError("bce shape mismatch: " + prediction.shape().str() + " vs " +
                         target.shape().str());
    if (epsilon <= 0 || epsilon >= 0.5) throw ConfigError("bce epsilon must be in (0, 0.5)");
    double acc = 0;
    for (long i = 0; i < prediction.numel(); ++i) {
        const double y = target.get(i);
        if (y != 0.0 && y != 1.0)
            throw ConfigError("bce target must be binary, found " + std::to_string(y));
        const double d = std::clamp(prediction.get(i), epsilon, 1.0 - epsilon);
        acc += -(y * std::log(d) + (1.0 - y) * std::log(1.0 - d));
    }
    return acc / double(prediction.numel());
}

Tensor bce_loss_backward(const Tensor& prediction, const Tensor& target, double epsilon,
                         double grad_out) {
    Tensor gi(prediction.shape(), prediction.dtype());
    const double inv_n = 1.0 / double(prediction.numel());
    for (long i = 0; i < prediction.numel(); ++i) {
        const double d = prediction.get(i);
        if (d <= epsilon || d >= 1.0 - epsilon) continue;  // clamp region, zero slope
        const double y = target.get(i);
        gi.set(i, grad_out * inv_n * (-y / d + (1.0 - y) / (1.0 - d)));
    }
    return gi;
}

}  // namespace cace::ops
