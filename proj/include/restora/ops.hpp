// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over rank-4 tensors. Every op that records a
// tape node ships its own reverse rule; the finite-difference suite in
// gradcheck.hpp is the ground truth for all of them.
//
// Kernels may parallelize over independent output elements only: each
// element is produced by exactly one thread with a fixed inner summation
// order, so results are bit-identical at any thread count.

#ifndef RESTORA_OPS_HPP_
#define RESTORA_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "restora/tensor.hpp"

namespace restora {
namespace ops {

namespace detail {
using restora::detail::merge_tapes;
using restora::detail::node_on;
using restora::detail::record;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
}
} // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out(a.shape, std::vector<T>(a.numel()));
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];

    auto st = detail::merge_tapes<T>({&a, &b});
    if (st) {
        int na = detail::node_on(st, a), nb = detail::node_on(st, b);
        detail::record(out, st, [na, nb](TapeState<T>& S, const std::vector<T>& g) {
            if (na >= 0) {
                auto& ga = S.accum(na);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (nb >= 0) {
                auto& gb = S.accum(nb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape, std::vector<T>(a.numel()));
    for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];

    auto st = detail::merge_tapes<T>({&a, &b});
    if (st) {
        int na = detail::node_on(st, a), nb = detail::node_on(st, b);
        detail::record(out, st, [na, nb](TapeState<T>& S, const std::vector<T>& g) {
            if (na >= 0) {
                auto& ga = S.accum(na);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (nb >= 0) {
                auto& gb = S.accum(nb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape, std::vector<T>(a.numel()));
    for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];

    auto st = detail::merge_tapes<T>({&a, &b});
    if (st) {
        int na = detail::node_on(st, a), nb = detail::node_on(st, b);
        Tensor<T> sa = a, sb = b;
        detail::record(out, st, [na, nb, sa, sb](TapeState<T>& S, const std::vector<T>& g) {
            if (na >= 0) {
                auto& ga = S.accum(na);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sb.ptr()[i];
            }
            if (nb >= 0) {
                auto& gb = S.accum(nb);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * sa.ptr()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] * s;
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, s](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
        });
    }
    return out;
}

// clamp to [0,1]; subgradient passes through on the closed interval.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = std::min(T(1), std::max(T(0), x.ptr()[i]));
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        Tensor<T> sx = x;
        detail::record(out, st, [nx, sx](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (std::size_t i = 0; i < g.size(); ++i) {
                T v = sx.ptr()[i];
                if (v >= T(0) && v <= T(1)) gx[i] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d

namespace detail {

// Stride-1 forward: per-tap axpy over contiguous rows, one thread per
// output plane.
template <typename T>
void conv_fwd_s1(const T* px, const T* pw, const T* pb, T* po, int n, int cin, int h, int wd, int cout,
                 int cinpg, int coutpg, int k, int p, int oh, int ow) {
    const std::size_t plane_in = static_cast<std::size_t>(h) * wd;
    const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < n * cout; ++nc) {
        const int in = nc / cout, oc = nc % cout;
        const int gi = oc / coutpg;
        T* op = po + static_cast<std::size_t>(nc) * plane_out;
        std::fill(op, op + plane_out, pb[oc]);
        for (int ic = 0; ic < cinpg; ++ic) {
            const int ci = gi * cinpg + ic;
            const T* xp = px + (static_cast<std::size_t>(in) * cin + ci) * plane_in;
            const T* wr = pw + (static_cast<std::size_t>(oc) * cinpg + ic) * k * k;
            for (int ky = 0; ky < k; ++ky)
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy - p + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* xrow = xp + static_cast<std::size_t>(iy) * wd;
                    T* orow = op + static_cast<std::size_t>(oy) * ow;
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wr[ky * k + kx];
                        const int ox0 = std::max(0, p - kx);
                        const int ox1 = std::min(ow, wd + p - kx);
                        const T* xr = xrow - p + kx;
                        for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox];
                    }
                }
        }
    }
}

// Stride-1 input gradient: correlation of the output gradient with the
// kernel, one thread per input plane.
template <typename T>
void conv_bwd_x_s1(const T* pg, const T* pw, T* gx, int n, int cin, int h, int wd, int cout, int cinpg,
                   int coutpg, int k, int p, int oh, int ow) {
    const std::size_t plane_in = static_cast<std::size_t>(h) * wd;
    const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int nci = 0; nci < n * cin; ++nci) {
        const int in = nci / cin, ci = nci % cin;
        const int gi = ci / cinpg, ic = ci - gi * cinpg;
        T* gxp = gx + static_cast<std::size_t>(nci) * plane_in;
        for (int oc = gi * coutpg; oc < (gi + 1) * coutpg; ++oc) {
            const T* gp = pg + (static_cast<std::size_t>(in) * cout + oc) * plane_out;
            const T* wr = pw + (static_cast<std::size_t>(oc) * cinpg + ic) * k * k;
            for (int ky = 0; ky < k; ++ky)
                for (int iy = 0; iy < h; ++iy) {
                    const int oy = iy + p - ky;
                    if (oy < 0 || oy >= oh) continue;
                    const T* grow = gp + static_cast<std::size_t>(oy) * ow;
                    T* gxrow = gxp + static_cast<std::size_t>(iy) * wd;
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wr[ky * k + kx];
                        const int ix0 = std::max(0, kx - p);
                        const int ix1 = std::min(wd, ow + kx - p);
                        const T* gr = grow + p - kx;
                        for (int ix = ix0; ix < ix1; ++ix) gxrow[ix] += wv * gr[ix];
                    }
                }
        }
    }
}

// Stride-1 weight gradient: contiguous row dot products, one thread per
// output channel.
template <typename T>
void conv_bwd_w_s1(const T* pg, const T* px, T* gw, int n, int cin, int h, int wd, int cout, int cinpg,
                   int coutpg, int k, int p, int oh, int ow) {
    const std::size_t plane_in = static_cast<std::size_t>(h) * wd;
    const std::size_t plane_out = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < cout; ++oc) {
        const int gi = oc / coutpg;
        for (int ic = 0; ic < cinpg; ++ic) {
            const int ci = gi * cinpg + ic;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T acc = T(0);
                    const int ox0 = std::max(0, p - kx);
                    const int ox1 = std::min(ow, wd + p - kx);
                    for (int in = 0; in < n; ++in) {
                        const T* gp = pg + (static_cast<std::size_t>(in) * cout + oc) * plane_out;
                        const T* xp = px + (static_cast<std::size_t>(in) * cin + ci) * plane_in;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy - p + ky;
                            if (iy < 0 || iy >= h) continue;
                            const T* grow = gp + static_cast<std::size_t>(oy) * ow;
                            const T* xrow = xp + static_cast<std::size_t>(iy) * wd - p + kx;
                            for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xrow[ox];
                        }
                    }
                    gw[(static_cast<std::size_t>(oc) * cinpg + ic) * k * k + ky * k + kx] += acc;
                }
        }
    }
}

} // namespace detail

// x: (n, c_in, h, w); w: (c_out, c_in/groups, k, k); b: (1, c_out, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int padding = 0, int groups = 1) {
    const int n = x.shape.n, cin = x.shape.c, h = x.shape.h, wd = x.shape.w;
    const int cout = w.shape.n, cinpg = w.shape.c, kh = w.shape.h, kw = w.shape.w;
    if (kh != kw) throw DimensionError("conv2d: kernel must be square");
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ConfigError("conv2d: groups must divide both channel counts");
    if (cinpg != cin / groups)
        throw DimensionError("conv2d: weight shape " + w.shape.str() + " inconsistent with c_in=" +
                             std::to_string(cin) + " groups=" + std::to_string(groups));
    if (b.shape.c != cout || b.shape.n != 1 || b.shape.h != 1 || b.shape.w != 1)
        throw DimensionError("conv2d: bias must be (1,c_out,1,1)");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int k = kh;
    if ((h + 2 * padding - k) % stride != 0 || (wd + 2 * padding - k) % stride != 0)
        throw DimensionError("conv2d: padding/stride do not yield integer output extents");
    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (wd + 2 * padding - k) / stride + 1;
    if (oh < 1 || ow < 1) throw DimensionError("conv2d: empty output");

    Tensor<T> out(Shape4{n, cout, oh, ow}, std::vector<T>(static_cast<std::size_t>(n) * cout * oh * ow));
    const int coutpg = cout / groups;
    const T* px = x.ptr();
    const T* pw = w.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();

    if (stride == 1) {
        detail::conv_fwd_s1(px, pw, pb, po, n, cin, h, wd, cout, cinpg, coutpg, k, padding, oh, ow);
    } else {
#pragma omp parallel for schedule(static)
        for (int nc = 0; nc < n * cout; ++nc) {
            const int in = nc / cout, oc = nc % cout;
            const int gi = oc / coutpg;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = pb[oc];
                    for (int ic = 0; ic < cinpg; ++ic) {
                        const int ci = gi * cinpg + ic;
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            const std::size_t xrow = ((static_cast<std::size_t>(in) * cin + ci) * h + iy) * wd;
                            const std::size_t wrow = ((static_cast<std::size_t>(oc) * cinpg + ic) * k + ky) * k;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += px[xrow + ix] * pw[wrow + kx];
                            }
                        }
                    }
                    po[((static_cast<std::size_t>(in) * cout + oc) * oh + oy) * ow + ox] = acc;
                }
        }
    }

    auto st = detail::merge_tapes<T>({&x, &w, &b});
    if (st) {
        int nx = detail::node_on(st, x), nw = detail::node_on(st, w), nb2 = detail::node_on(st, b);
        Tensor<T> sx = x, sw = w;
        const Shape4 xs = x.shape, ws = w.shape, os = out.shape;
        const int pad = padding, str = stride;
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            const T* pg = g.data();
            if (nx >= 0) {
                auto& gx = S.accum(nx);
                if (str == 1) {
                    detail::conv_bwd_x_s1(pg, sw.ptr(), gx.data(), xs.n, xs.c, xs.h, xs.w, os.c, cinpg,
                                          coutpg, k, pad, os.h, os.w);
                } else {
#pragma omp parallel for schedule(static)
                    for (int nci = 0; nci < xs.n * xs.c; ++nci) {
                        const int in = nci / xs.c, ci = nci % xs.c;
                        const int gi = ci / cinpg;
                        for (int iy = 0; iy < xs.h; ++iy)
                            for (int ix = 0; ix < xs.w; ++ix) {
                                T acc = T(0);
                                for (int oc = gi * coutpg; oc < (gi + 1) * coutpg; ++oc)
                                    for (int ky = 0; ky < k; ++ky) {
                                        const int ty = iy + pad - ky;
                                        if (ty < 0 || ty % str != 0) continue;
                                        const int oy = ty / str;
                                        if (oy >= os.h) continue;
                                        for (int kx = 0; kx < k; ++kx) {
                                            const int tx = ix + pad - kx;
                                            if (tx < 0 || tx % str != 0) continue;
                                            const int ox = tx / str;
                                            if (ox >= os.w) continue;
                                            acc += pg[idx4(os, in, oc, oy, ox)] *
                                                   sw.ptr()[((static_cast<std::size_t>(oc) * cinpg + ci - gi * cinpg) * k + ky) * k + kx];
                                        }
                                    }
                                gx[idx4(xs, in, ci, iy, ix)] += acc;
                            }
                    }
                }
            }
            if (nw >= 0) {
                auto& gw = S.accum(nw);
                if (str == 1) {
                    detail::conv_bwd_w_s1(pg, sx.ptr(), gw.data(), xs.n, xs.c, xs.h, xs.w, os.c, cinpg,
                                          coutpg, k, pad, os.h, os.w);
                } else {
#pragma omp parallel for schedule(static)
                    for (int oc = 0; oc < ws.n; ++oc) {
                        const int gi = oc / coutpg;
                        for (int ic = 0; ic < cinpg; ++ic) {
                            const int ci = gi * cinpg + ic;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    T acc = T(0);
                                    for (int in = 0; in < xs.n; ++in)
                                        for (int oy = 0; oy < os.h; ++oy) {
                                            const int iy = oy * str - pad + ky;
                                            if (iy < 0 || iy >= xs.h) continue;
                                            for (int ox = 0; ox < os.w; ++ox) {
                                                const int ix = ox * str - pad + kx;
                                                if (ix < 0 || ix >= xs.w) continue;
                                                acc += pg[idx4(os, in, oc, oy, ox)] * sx.at(in, ci, iy, ix);
                                            }
                                        }
                                    gw[((static_cast<std::size_t>(oc) * cinpg + ic) * k + ky) * k + kx] += acc;
                                }
                        }
                    }
                }
            }
            if (nb2 >= 0) {
                auto& gb = S.accum(nb2);
                for (int oc = 0; oc < os.c; ++oc) {
                    T acc = T(0);
                    for (int in = 0; in < os.n; ++in) {
                        const T* gp = pg + (static_cast<std::size_t>(in) * os.c + oc) *
                                               (static_cast<std::size_t>(os.h) * os.w);
                        for (std::size_t i = 0; i < static_cast<std::size_t>(os.h) * os.w; ++i) acc += gp[i];
                    }
                    gb[static_cast<std::size_t>(oc)] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear over token layout (n, t, d, 1)

// x: (n, t, d_in, 1); w: (d_out, d_in, 1, 1); b: (1, 1, d_out, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.shape.w != 1) throw DimensionError("linear: expects token layout (n,t,d,1)");
    const int n = x.shape.n, t = x.shape.c, din = x.shape.h;
    const int dout = w.shape.n;
    if (w.shape.c != din || w.shape.h != 1 || w.shape.w != 1)
        throw DimensionError("linear: weight must be (d_out,d_in,1,1)");
    if (b.shape.h != dout || b.shape.n != 1 || b.shape.c != 1 || b.shape.w != 1)
        throw DimensionError("linear: bias must be (1,1,d_out,1)");

    Tensor<T> out(Shape4{n, t, dout, 1}, std::vector<T>(static_cast<std::size_t>(n) * t * dout));
    const T* px = x.ptr();
    const T* pw = w.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
#pragma omp parallel for schedule(static)
    for (int nt = 0; nt < n * t; ++nt) {
        const T* xr = px + static_cast<std::size_t>(nt) * din;
        T* orow = po + static_cast<std::size_t>(nt) * dout;
        for (int o = 0; o < dout; ++o) {
            T acc = pb[o];
            const T* wr = pw + static_cast<std::size_t>(o) * din;
            for (int i = 0; i < din; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }

    auto st = detail::merge_tapes<T>({&x, &w, &b});
    if (st) {
        int nx = detail::node_on(st, x), nw = detail::node_on(st, w), nb = detail::node_on(st, b);
        Tensor<T> sx = x, sw = w;
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            const T* pg = g.data();
            if (nx >= 0) {
                auto& gx = S.accum(nx);
#pragma omp parallel for schedule(static)
                for (int nt = 0; nt < n * t; ++nt) {
                    const T* gr = pg + static_cast<std::size_t>(nt) * dout;
                    T* gxr = gx.data() + static_cast<std::size_t>(nt) * din;
                    for (int i = 0; i < din; ++i) {
                        T acc = T(0);
                        for (int o = 0; o < dout; ++o) acc += gr[o] * sw.ptr()[static_cast<std::size_t>(o) * din + i];
                        gxr[i] += acc;
                    }
                }
            }
            if (nw >= 0) {
                auto& gw = S.accum(nw);
#pragma omp parallel for schedule(static)
                for (int o = 0; o < dout; ++o) {
                    for (int i = 0; i < din; ++i) {
                        T acc = T(0);
                        for (int nt = 0; nt < n * t; ++nt)
                            acc += pg[static_cast<std::size_t>(nt) * dout + o] * sx.ptr()[static_cast<std::size_t>(nt) * din + i];
                        gw[static_cast<std::size_t>(o) * din + i] += acc;
                    }
                }
            }
            if (nb >= 0) {
                auto& gb = S.accum(nb);
                for (int o = 0; o < dout; ++o) {
                    T acc = T(0);
                    for (int nt = 0; nt < n * t; ++nt) acc += pg[static_cast<std::size_t>(nt) * dout + o];
                    gb[static_cast<std::size_t>(o)] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization

// LayerNorm over the channel axis, per spatial location.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
    const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    if (c < 1) throw DimensionError("layer_norm: needs at least one channel");
    if (gamma.shape.c != c || beta.shape.c != c)
        throw DimensionError("layer_norm: gamma/beta must have length c");

    const std::size_t loc_count = static_cast<std::size_t>(n) * h * w;
    std::vector<T> mu(loc_count), ivar(loc_count);
    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    for (int in = 0; in < n; ++in)
        for (int y = 0; y < h; ++y)
            for (int xpos = 0; xpos < w; ++xpos) {
                const std::size_t base = (static_cast<std::size_t>(in) * c) * plane + static_cast<std::size_t>(y) * w + xpos;
                T m = T(0);
                for (int ci = 0; ci < c; ++ci) m += x.ptr()[base + ci * plane];
                m /= static_cast<T>(c);
                T v = T(0);
                for (int ci = 0; ci < c; ++ci) {
                    T d = x.ptr()[base + ci * plane] - m;
                    v += d * d;
                }
                v /= static_cast<T>(c);
                const T iv = T(1) / std::sqrt(v + eps);
                const std::size_t li = (static_cast<std::size_t>(in) * h + y) * w + xpos;
                mu[li] = m;
                ivar[li] = iv;
                for (int ci = 0; ci < c; ++ci) {
                    T xh = (x.ptr()[base + ci * plane] - m) * iv;
                    out.ptr()[base + ci * plane] = gamma.ptr()[ci] * xh + beta.ptr()[ci];
                }
            }

    auto st = detail::merge_tapes<T>({&x, &gamma, &beta});
    if (st) {
        int nx = detail::node_on(st, x), ng = detail::node_on(st, gamma), nb = detail::node_on(st, beta);
        Tensor<T> sx = x, sg = gamma;
        detail::record(out, st, [=, mu = std::move(mu), ivar = std::move(ivar)](TapeState<T>& S,
                                                                                const std::vector<T>& g) {
            std::vector<T>* gx = nx >= 0 ? &S.accum(nx) : nullptr;
            std::vector<T>* gg = ng >= 0 ? &S.accum(ng) : nullptr;
            std::vector<T>* gb = nb >= 0 ? &S.accum(nb) : nullptr;
            for (int in = 0; in < n; ++in)
                for (int y = 0; y < h; ++y)
                    for (int xpos = 0; xpos < w; ++xpos) {
                        const std::size_t base =
                            (static_cast<std::size_t>(in) * c) * plane + static_cast<std::size_t>(y) * w + xpos;
                        const std::size_t li = (static_cast<std::size_t>(in) * h + y) * w + xpos;
                        const T m = mu[li], iv = ivar[li];
                        T s1 = T(0), s2 = T(0);
                        for (int ci = 0; ci < c; ++ci) {
                            const T xh = (sx.ptr()[base + ci * plane] - m) * iv;
                            const T dxh = g[base + ci * plane] * sg.ptr()[ci];
                            s1 += dxh;
                            s2 += dxh * xh;
                            if (gg) (*gg)[ci] += g[base + ci * plane] * xh;
                            if (gb) (*gb)[ci] += g[base + ci * plane];
                        }
                        if (gx) {
                            for (int ci = 0; ci < c; ++ci) {
                                const T xh = (sx.ptr()[base + ci * plane] - m) * iv;
                                const T dxh = g[base + ci * plane] * sg.ptr()[ci];
                                (*gx)[base + ci * plane] +=
                                    iv * (dxh - s1 / static_cast<T>(c) - xh * s2 / static_cast<T>(c));
                            }
                        }
                    }
        });
    }
    return out;
}

// Global response normalization (ConvNeXt v2 style):
//   G_c = ||x_c||_2 over space, N_c = G_c / (mean_c G_c + eps),
//   out = gamma * (x * N) + beta + x.
template <typename T>
Tensor<T> grn(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6)) {
    const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    if (gamma.shape.c != c || beta.shape.c != c) throw DimensionError("grn: gamma/beta must have length c");
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    std::vector<T> G(static_cast<std::size_t>(n) * c), M(static_cast<std::size_t>(n));
    for (int in = 0; in < n; ++in) {
        T msum = T(0);
        for (int ci = 0; ci < c; ++ci) {
            const T* p = x.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
            T s = T(0);
            for (std::size_t i = 0; i < plane; ++i) s += p[i] * p[i];
            G[static_cast<std::size_t>(in) * c + ci] = std::sqrt(s);
            msum += G[static_cast<std::size_t>(in) * c + ci];
        }
        M[static_cast<std::size_t>(in)] = msum / static_cast<T>(c);
    }

    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    for (int in = 0; in < n; ++in)
        for (int ci = 0; ci < c; ++ci) {
            const T N = G[static_cast<std::size_t>(in) * c + ci] / (M[static_cast<std::size_t>(in)] + eps);
            const T* p = x.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
            T* o = out.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
            const T ga = gamma.ptr()[ci], be = beta.ptr()[ci];
            for (std::size_t i = 0; i < plane; ++i) o[i] = ga * (p[i] * N) + be + p[i];
        }

    auto st = detail::merge_tapes<T>({&x, &gamma, &beta});
    if (st) {
        int nx = detail::node_on(st, x), ng = detail::node_on(st, gamma), nb = detail::node_on(st, beta);
        Tensor<T> sx = x, sg = gamma;
        detail::record(out, st, [=, G = std::move(G), M = std::move(M)](TapeState<T>& S,
                                                                        const std::vector<T>& g) {
            std::vector<T>* gx = nx >= 0 ? &S.accum(nx) : nullptr;
            std::vector<T>* gg = ng >= 0 ? &S.accum(ng) : nullptr;
            std::vector<T>* gb = nb >= 0 ? &S.accum(nb) : nullptr;
            for (int in = 0; in < n; ++in) {
                const T m = M[static_cast<std::size_t>(in)] + eps;
                // dL/dN per channel plus gamma/beta grads
                std::vector<T> dN(static_cast<std::size_t>(c), T(0));
                for (int ci = 0; ci < c; ++ci) {
                    const T Nc = G[static_cast<std::size_t>(in) * c + ci] / m;
                    const T* p = sx.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    const T* gr = g.data() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    T acc = T(0), accg = T(0), accb = T(0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        acc += gr[i] * sg.ptr()[ci] * p[i];
                        accg += gr[i] * (p[i] * Nc);
                        accb += gr[i];
                    }
                    dN[static_cast<std::size_t>(ci)] = acc;
                    if (gg) (*gg)[ci] += accg;
                    if (gb) (*gb)[ci] += accb;
                }
                if (!gx) continue;
                T dot = T(0);
                for (int ci = 0; ci < c; ++ci)
                    dot += dN[static_cast<std::size_t>(ci)] * G[static_cast<std::size_t>(in) * c + ci];
                for (int ci = 0; ci < c; ++ci) {
                    const T Gc = G[static_cast<std::size_t>(in) * c + ci];
                    const T Nc = Gc / m;
                    const T dG = dN[static_cast<std::size_t>(ci)] / m - dot / (m * m * static_cast<T>(c));
                    const T* p = sx.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    const T* gr = g.data() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    T* gxr = gx->data() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    const T inv_g = Gc > T(0) ? T(1) / Gc : T(0);
                    for (std::size_t i = 0; i < plane; ++i)
                        gxr[i] += gr[i] * (sg.ptr()[ci] * Nc + T(1)) + dG * p[i] * inv_g;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations / pooling

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = x.ptr()[i];
        out.ptr()[i] = T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865475244)));
    }
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        Tensor<T> sx = x;
        detail::record(out, st, [nx, sx](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = sx.ptr()[i];
                const T phi = std::exp(T(-0.5) * v * v) * T(0.3989422804014326779);
                const T Phi = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475244)));
                gx[i] += g[i] * (Phi + v * phi);
            }
        });
    }
    return out;
}

// Numerically stabilized softmax along one axis (0..3 = n,c,h,w).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis > 3) throw DimensionError("softmax: axis must be in [0,3]");
    const int dims[4] = {x.shape.n, x.shape.c, x.shape.h, x.shape.w};
    const std::size_t strides[4] = {static_cast<std::size_t>(x.shape.c) * x.shape.h * x.shape.w,
                                    static_cast<std::size_t>(x.shape.h) * x.shape.w,
                                    static_cast<std::size_t>(x.shape.w), 1};
    const int len = dims[axis];
    const std::size_t stride = strides[axis];

    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    const std::size_t total = x.numel();
    // iterate every line along `axis`
    std::vector<std::size_t> line_starts;
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t along = (i / stride) % static_cast<std::size_t>(len);
        if (along == 0) line_starts.push_back(i);
    }
    for (std::size_t s0 : line_starts) {
        T mx = x.ptr()[s0];
        for (int j = 1; j < len; ++j) mx = std::max(mx, x.ptr()[s0 + j * stride]);
        T sum = T(0);
        for (int j = 0; j < len; ++j) {
            const T e = std::exp(x.ptr()[s0 + j * stride] - mx);
            out.ptr()[s0 + j * stride] = e;
            sum += e;
        }
        for (int j = 0; j < len; ++j) out.ptr()[s0 + j * stride] /= sum;
    }

    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        Tensor<T> sy = out; // softmax backward needs only the output
        detail::record(out, st, [nx, sy, line_starts, len, stride](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (std::size_t s0 : line_starts) {
                T dot = T(0);
                for (int j = 0; j < len; ++j) dot += g[s0 + j * stride] * sy.ptr()[s0 + j * stride];
                for (int j = 0; j < len; ++j)
                    gx[s0 + j * stride] += sy.ptr()[s0 + j * stride] * (g[s0 + j * stride] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out(Shape4{n, c, 1, 1}, std::vector<T>(static_cast<std::size_t>(n) * c));
    for (int i = 0; i < n * c; ++i) {
        const T* p = x.ptr() + static_cast<std::size_t>(i) * plane;
        T s = T(0);
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
        out.ptr()[i] = s / static_cast<T>(plane);
    }
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, n, c, plane](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (int i = 0; i < n * c; ++i) {
                const T gi = g[static_cast<std::size_t>(i)] / static_cast<T>(plane);
                T* p = gx.data() + static_cast<std::size_t>(i) * plane;
                for (std::size_t j = 0; j < plane; ++j) p[j] += gi;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pixel shuffle / unshuffle

namespace detail {
// (n, c*r^2, h, w) -> (n, c, h*r, w*r); out[c, y*r+i, x*r+j] = in[c*r^2 + i*r + j, y, x]
template <typename T>
void shuffle_raw(const T* in, T* out, int n, int c_out, int h, int w, int r) {
    for (int in_n = 0; in_n < n; ++in_n)
        for (int oc = 0; oc < c_out; ++oc)
            for (int y = 0; y < h; ++y)
                for (int i = 0; i < r; ++i)
                    for (int x = 0; x < w; ++x)
                        for (int j = 0; j < r; ++j) {
                            const std::size_t src =
                                ((static_cast<std::size_t>(in_n) * (c_out * r * r) + oc * r * r + i * r + j) * h + y) * w + x;
                            const std::size_t dst =
                                ((static_cast<std::size_t>(in_n) * c_out + oc) * (h * r) + y * r + i) * (static_cast<std::size_t>(w) * r) +
                                x * r + j;
                            out[dst] = in[src];
                        }
}

template <typename T>
void unshuffle_raw(const T* in, T* out, int n, int c_in, int h, int w, int r) {
    // inverse of shuffle_raw: in is (n, c_in, h, w) with h, w divisible by r
    const int oh = h / r, ow = w / r;
    for (int in_n = 0; in_n < n; ++in_n)
        for (int ci = 0; ci < c_in; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int i = 0; i < r; ++i)
                    for (int x = 0; x < ow; ++x)
                        for (int j = 0; j < r; ++j) {
                            const std::size_t src =
                                ((static_cast<std::size_t>(in_n) * c_in + ci) * h + y * r + i) * w + x * r + j;
                            const std::size_t dst =
                                ((static_cast<std::size_t>(in_n) * (c_in * r * r) + ci * r * r + i * r + j) * oh + y) * ow + x;
                            out[dst] = in[src];
                        }
}
} // namespace detail

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
    if (r < 1) throw ConfigError("pixel_shuffle: r must be >= 1");
    if (x.shape.c % (r * r) != 0)
        throw DimensionError("pixel_shuffle: channels " + std::to_string(x.shape.c) +
                             " not divisible by r^2=" + std::to_string(r * r));
    const int n = x.shape.n, c_out = x.shape.c / (r * r), h = x.shape.h, w = x.shape.w;
    Tensor<T> out(Shape4{n, c_out, h * r, w * r}, std::vector<T>(x.numel()));
    detail::shuffle_raw(x.ptr(), out.ptr(), n, c_out, h, w, r);

    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, n, c_out, h, w, r](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            std::vector<T> tmp(g.size());
            detail::unshuffle_raw(g.data(), tmp.data(), n, c_out, h * r, w * r, r);
            for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
    if (r < 1) throw ConfigError("pixel_unshuffle: r must be >= 1");
    if (x.shape.h % r != 0 || x.shape.w % r != 0)
        throw DimensionError("pixel_unshuffle: spatial dims " + x.shape.str() + " not divisible by r=" +
                             std::to_string(r));
    const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    Tensor<T> out(Shape4{n, c * r * r, h / r, w / r}, std::vector<T>(x.numel()));
    detail::unshuffle_raw(x.ptr(), out.ptr(), n, c, h, w, r);

    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, n, c, h, w, r](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            std::vector<T> tmp(g.size());
            detail::shuffle_raw(g.data(), tmp.data(), n, c, h / r, w / r, r);
            for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcast helpers

// out = x * s, where s is (n, c, 1, 1) broadcast over space.
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.shape.n != x.shape.n || s.shape.c != x.shape.c || s.shape.h != 1 || s.shape.w != 1)
        throw DimensionError("channel_scale: gate must be (n,c,1,1)");
    const int n = x.shape.n, c = x.shape.c;
    const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
    Tensor<T> out(x.shape, std::vector<T>(x.numel()));
    for (int i = 0; i < n * c; ++i) {
        const T sv = s.ptr()[i];
        const T* p = x.ptr() + static_cast<std::size_t>(i) * plane;
        T* o = out.ptr() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) o[j] = p[j] * sv;
    }
    auto st = detail::merge_tapes<T>({&x, &s});
    if (st) {
        int nx = detail::node_on(st, x), ns = detail::node_on(st, s);
        Tensor<T> sx = x, ss = s;
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            if (nx >= 0) {
                auto& gx = S.accum(nx);
                for (int i = 0; i < n * c; ++i) {
                    const T sv = ss.ptr()[i];
                    const T* gr = g.data() + static_cast<std::size_t>(i) * plane;
                    T* p = gx.data() + static_cast<std::size_t>(i) * plane;
                    for (std::size_t j = 0; j < plane; ++j) p[j] += gr[j] * sv;
                }
            }
            if (ns >= 0) {
                auto& gs = S.accum(ns);
                for (int i = 0; i < n * c; ++i) {
                    const T* gr = g.data() + static_cast<std::size_t>(i) * plane;
                    const T* p = sx.ptr() + static_cast<std::size_t>(i) * plane;
                    T acc = T(0);
                    for (std::size_t j = 0; j < plane; ++j) acc += gr[j] * p[j];
                    gs[static_cast<std::size_t>(i)] += acc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw DimensionError("concat_channels: mismatched shapes " + a.shape.str() + " vs " + b.shape.str());
    const int n = a.shape.n, ca = a.shape.c, cb = b.shape.c, h = a.shape.h, w = a.shape.w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out(Shape4{n, ca + cb, h, w}, std::vector<T>(static_cast<std::size_t>(n) * (ca + cb) * plane));
    for (int in = 0; in < n; ++in) {
        std::copy_n(a.ptr() + static_cast<std::size_t>(in) * ca * plane, static_cast<std::size_t>(ca) * plane,
                    out.ptr() + static_cast<std::size_t>(in) * (ca + cb) * plane);
        std::copy_n(b.ptr() + static_cast<std::size_t>(in) * cb * plane, static_cast<std::size_t>(cb) * plane,
                    out.ptr() + static_cast<std::size_t>(in) * (ca + cb) * plane + static_cast<std::size_t>(ca) * plane);
    }
    auto st = detail::merge_tapes<T>({&a, &b});
    if (st) {
        int na = detail::node_on(st, a), nb = detail::node_on(st, b);
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            for (int in = 0; in < n; ++in) {
                const T* gr = g.data() + static_cast<std::size_t>(in) * (ca + cb) * plane;
                if (na >= 0) {
                    auto& ga = S.accum(na);
                    T* p = ga.data() + static_cast<std::size_t>(in) * ca * plane;
                    for (std::size_t j = 0; j < static_cast<std::size_t>(ca) * plane; ++j) p[j] += gr[j];
                }
                if (nb >= 0) {
                    auto& gb = S.accum(nb);
                    T* p = gb.data() + static_cast<std::size_t>(in) * cb * plane;
                    for (std::size_t j = 0; j < static_cast<std::size_t>(cb) * plane; ++j)
                        p[j] += gr[static_cast<std::size_t>(ca) * plane + j];
                }
            }
        });
    }
    return out;
}

// (n, c, h, w) -> token layout (n, h*w, c, 1)
template <typename T>
Tensor<T> nchw_to_tokens(const Tensor<T>& x) {
    const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out(Shape4{n, h * w, c, 1}, std::vector<T>(x.numel()));
    for (int in = 0; in < n; ++in)
        for (int ci = 0; ci < c; ++ci) {
            const T* p = x.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
            for (std::size_t t = 0; t < plane; ++t)
                out.ptr()[(static_cast<std::size_t>(in) * plane + t) * c + ci] = p[t];
        }
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, n, c, plane](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (int in = 0; in < n; ++in)
                for (int ci = 0; ci < c; ++ci) {
                    T* p = gx.data() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    for (std::size_t t = 0; t < plane; ++t)
                        p[t] += g[(static_cast<std::size_t>(in) * plane + t) * c + ci];
                }
        });
    }
    return out;
}

// token layout (n, h*w, c, 1) -> (n, c, h, w)
template <typename T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, int h, int w) {
    const int n = x.shape.n, t = x.shape.c, c = x.shape.h;
    if (t != h * w) throw DimensionError("tokens_to_nchw: token count does not match h*w");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out(Shape4{n, c, h, w}, std::vector<T>(x.numel()));
    for (int in = 0; in < n; ++in)
        for (int ci = 0; ci < c; ++ci) {
            T* p = out.ptr() + (static_cast<std::size_t>(in) * c + ci) * plane;
            for (std::size_t tt = 0; tt < plane; ++tt)
                p[tt] = x.ptr()[(static_cast<std::size_t>(in) * plane + tt) * c + ci];
        }
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, n, c, plane](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (int in = 0; in < n; ++in)
                for (int ci = 0; ci < c; ++ci) {
                    const T* p = g.data() + (static_cast<std::size_t>(in) * c + ci) * plane;
                    for (std::size_t tt = 0; tt < plane; ++tt)
                        gx[(static_cast<std::size_t>(in) * plane + tt) * c + ci] += p[tt];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// attention

// Scaled dot-product multi-head attention over token layouts.
// q: (n, tq, d, 1); k, v: (n, tk, d, 1); d divisible by heads.
// key_len (optional, per batch item): only keys [0, key_len[n]) attend;
// an item with zero valid keys yields a zero output row.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    const std::vector<int>& key_len = {}) {
    const int n = q.shape.n, tq = q.shape.c, d = q.shape.h;
    const int tk = k.shape.c;
    if (k.shape.n != n || v.shape.n != n || k.shape.h != d || v.shape.h != d || v.shape.c != tk)
        throw DimensionError("attention: q/k/v layout mismatch");
    if (heads < 1 || d % heads != 0) throw ConfigError("attention: dim not divisible by heads");
    if (!key_len.empty() && static_cast<int>(key_len.size()) != n)
        throw DimensionError("attention: key_len must have one entry per batch item");
    const int dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> out(q.shape, std::vector<T>(q.numel(), T(0)));
    // attention weights saved for backward: (n, heads, tq, tk)
    auto P = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * heads * tq * tk, T(0));

#pragma omp parallel for schedule(static)
    for (int nh = 0; nh < n * heads; ++nh) {
        const int in = nh / heads, hd = nh % heads;
        const int valid = key_len.empty() ? tk : std::min(key_len[static_cast<std::size_t>(in)], tk);
        if (valid <= 0) continue;
        const int off = hd * dh;
        std::vector<T> row(static_cast<std::size_t>(valid));
        for (int i = 0; i < tq; ++i) {
            const T* qr = q.ptr() + (static_cast<std::size_t>(in) * tq + i) * d + off;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < valid; ++j) {
                const T* kr = k.ptr() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                T s = T(0);
                for (int e = 0; e < dh; ++e) s += qr[e] * kr[e];
                s *= inv_sqrt;
                row[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            T sum = T(0);
            for (int j = 0; j < valid; ++j) {
                row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
                sum += row[static_cast<std::size_t>(j)];
            }
            T* prow = P->data() + ((static_cast<std::size_t>(nh)) * tq + i) * tk;
            T* orow = out.ptr() + (static_cast<std::size_t>(in) * tq + i) * d + off;
            for (int j = 0; j < valid; ++j) {
                const T p = row[static_cast<std::size_t>(j)] / sum;
                prow[j] = p;
                const T* vr = v.ptr() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                for (int e = 0; e < dh; ++e) orow[e] += p * vr[e];
            }
        }
    }

    auto st = detail::merge_tapes<T>({&q, &k, &v});
    if (st) {
        int nq = detail::node_on(st, q), nk = detail::node_on(st, k), nv = detail::node_on(st, v);
        Tensor<T> sq = q, sk = k, sv = v;
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            std::vector<T>* gq = nq >= 0 ? &S.accum(nq) : nullptr;
            std::vector<T>* gk = nk >= 0 ? &S.accum(nk) : nullptr;
            std::vector<T>* gv = nv >= 0 ? &S.accum(nv) : nullptr;
            for (int nh = 0; nh < n * heads; ++nh) {
                const int in = nh / heads, hd = nh % heads;
                const int valid = key_len.empty() ? tk : std::min(key_len[static_cast<std::size_t>(in)], tk);
                if (valid <= 0) continue;
                const int off = hd * dh;
                for (int i = 0; i < tq; ++i) {
                    const T* prow = P->data() + ((static_cast<std::size_t>(nh)) * tq + i) * tk;
                    const T* grow = g.data() + (static_cast<std::size_t>(in) * tq + i) * d + off;
                    // dP and the softmax Jacobian row-dot
                    T rowdot = T(0);
                    std::vector<T> dp(static_cast<std::size_t>(valid));
                    for (int j = 0; j < valid; ++j) {
                        const T* vr = sv.ptr() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                        T acc = T(0);
                        for (int e = 0; e < dh; ++e) acc += grow[e] * vr[e];
                        dp[static_cast<std::size_t>(j)] = acc;
                        rowdot += acc * prow[j];
                    }
                    const T* qr = sq.ptr() + (static_cast<std::size_t>(in) * tq + i) * d + off;
                    for (int j = 0; j < valid; ++j) {
                        const T p = prow[j];
                        const T ds = p * (dp[static_cast<std::size_t>(j)] - rowdot) * inv_sqrt;
                        const T* kr = sk.ptr() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                        if (gq) {
                            T* gqr = gq->data() + (static_cast<std::size_t>(in) * tq + i) * d + off;
                            for (int e = 0; e < dh; ++e) gqr[e] += ds * kr[e];
                        }
                        if (gk) {
                            T* gkr = gk->data() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                            for (int e = 0; e < dh; ++e) gkr[e] += ds * qr[e];
                        }
                        if (gv) {
                            T* gvr = gv->data() + (static_cast<std::size_t>(in) * tk + j) * d + off;
                            for (int e = 0; e < dh; ++e) gvr[e] += p * grow[e];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// embeddings

// Gather prompt token embeddings plus learned positions into a padded
// (batch, k_max, d, 1) context. Rows past each prompt length are exact zeros.
// emb: (1, vocab, d, 1); pos: (1, k_max, d, 1).
template <typename T>
Tensor<T> prompt_embed(const Tensor<T>& emb, const Tensor<T>& pos,
                       const std::vector<std::vector<int>>& indices) {
    const int vocab = emb.shape.c, d = emb.shape.h;
    const int kmax = pos.shape.c;
    if (pos.shape.h != d) throw DimensionError("prompt_embed: embedding/positional width mismatch");
    const int batch = static_cast<int>(indices.size());
    if (batch < 1) throw ContractError("prompt_embed: empty batch");

    Tensor<T> out(Shape4{batch, kmax, d, 1}, std::vector<T>(static_cast<std::size_t>(batch) * kmax * d, T(0)));
    for (int bi = 0; bi < batch; ++bi) {
        const auto& row = indices[static_cast<std::size_t>(bi)];
        const int len = std::min<int>(static_cast<int>(row.size()), kmax);
        for (int i = 0; i < len; ++i) {
            const int tok = row[static_cast<std::size_t>(i)];
            if (tok < 0 || tok >= vocab) throw RangeError("prompt_embed: token index out of range");
            const T* er = emb.ptr() + static_cast<std::size_t>(tok) * d;
            const T* pr = pos.ptr() + static_cast<std::size_t>(i) * d;
            T* o = out.ptr() + (static_cast<std::size_t>(bi) * kmax + i) * d;
            for (int e = 0; e < d; ++e) o[e] = er[e] + pr[e];
        }
    }

    auto st = detail::merge_tapes<T>({&emb, &pos});
    if (st) {
        int ne = detail::node_on(st, emb), np = detail::node_on(st, pos);
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            std::vector<T>* ge = ne >= 0 ? &S.accum(ne) : nullptr;
            std::vector<T>* gp = np >= 0 ? &S.accum(np) : nullptr;
            for (int bi = 0; bi < batch; ++bi) {
                const auto& row = indices[static_cast<std::size_t>(bi)];
                const int len = std::min<int>(static_cast<int>(row.size()), kmax);
                for (int i = 0; i < len; ++i) {
                    const T* gr = g.data() + (static_cast<std::size_t>(bi) * kmax + i) * d;
                    if (ge) {
                        T* er = ge->data() + static_cast<std::size_t>(row[static_cast<std::size_t>(i)]) * d;
                        for (int e = 0; e < d; ++e) er[e] += gr[e];
                    }
                    if (gp) {
                        T* pr = gp->data() + static_cast<std::size_t>(i) * d;
                        for (int e = 0; e < d; ++e) pr[e] += gr[e];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / losses

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.ptr()[i];
    Tensor<T> out(Shape4{1, 1, 1, 1}, {s});
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (auto& v : gx) v += g[0];
        });
    }
    return out;
}

// Scalar-valued dot product with fixed weights; used to build well-scaled
// losses for gradient checking.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& wts) {
    if (wts.size() != x.numel()) throw DimensionError("weighted_sum: weight count mismatch");
    T s = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.ptr()[i] * wts[i];
    Tensor<T> out(Shape4{1, 1, 1, 1}, {s});
    auto st = detail::merge_tapes<T>({&x});
    if (st) {
        int nx = detail::node_on(st, x);
        detail::record(out, st, [nx, wts](TapeState<T>& S, const std::vector<T>& g) {
            if (nx < 0) return;
            auto& gx = S.accum(nx);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * wts[i];
        });
    }
    return out;
}

// Mean absolute error; the subgradient at ties is zero.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape != target.shape)
        throw ContractError("l1_loss: shape mismatch " + pred.shape.str() + " vs " + target.shape.str());
    const std::size_t nel = pred.numel();
    T s = T(0);
    for (std::size_t i = 0; i < nel; ++i) s += std::abs(pred.ptr()[i] - target.ptr()[i]);
    Tensor<T> out(Shape4{1, 1, 1, 1}, {s / static_cast<T>(nel)});
    auto st = detail::merge_tapes<T>({&pred, &target});
    if (st) {
        int np = detail::node_on(st, pred), nt = detail::node_on(st, target);
        Tensor<T> sp = pred, stg = target;
        detail::record(out, st, [=](TapeState<T>& S, const std::vector<T>& g) {
            const T gi = g[0] / static_cast<T>(nel);
            std::vector<T>* gp = np >= 0 ? &S.accum(np) : nullptr;
            std::vector<T>* gt = nt >= 0 ? &S.accum(nt) : nullptr;
            for (std::size_t i = 0; i < nel; ++i) {
                const T d = sp.ptr()[i] - stg.ptr()[i];
                const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                if (gp) (*gp)[i] += gi * sgn;
                if (gt) (*gt)[i] -= gi * sgn;
            }
        });
    }
    return out;
}

} // namespace ops
} // namespace restora

#endif // RESTORA_OPS_HPP_
