#include <algorithm>
#include <vector>

#include "kernels.hpp"
#include "man/ops.hpp"

namespace man {

namespace {

struct ConvGeom {
    i64 n, cin, h, w;
    i64 cout, cin_pg, cout_pg, k;
    i64 d, g;
    i64 pad, hw;
};

template <class T>
ConvGeom check_conv(const TensorT<T>& x, const ConvParamsT<T>& p) {
    MAN_CHECK(x.defined() && p.weight.defined(), "conv2d: undefined operand");
    const Shape xs = x.shape();
    const Shape ws = p.weight.shape();
    MAN_CHECK(ws.h == ws.w && ws.h >= 1, "conv2d: kernel must be square, weight shape ", ws.str());
    MAN_CHECK(p.groups >= 1 && p.dilation >= 1, "conv2d: groups and dilation must be positive");
    MAN_CHECK(xs.c % p.groups == 0, "conv2d: input channels ", xs.c, " not divisible by groups ",
              p.groups);
    MAN_CHECK(ws.n % p.groups == 0, "conv2d: output channels ", ws.n, " not divisible by groups ",
              p.groups);
    MAN_CHECK(ws.c * p.groups == xs.c, "conv2d: weight expects ", ws.c * p.groups,
              " input channels, tensor has ", xs.c);
    const i64 extent = (ws.h - 1) * p.dilation + 1;
    MAN_CHECK(extent % 2 == 1, "conv2d: effective kernel extent ", extent,
              " must be odd for same padding");
    if (p.bias.defined())
        MAN_CHECK(p.bias.shape() == channel_vec(ws.n), "conv2d: bias must have shape ",
                  channel_vec(ws.n).str(), ", got ", p.bias.shape().str());
    ConvGeom g;
    g.n = xs.n;
    g.cin = xs.c;
    g.h = xs.h;
    g.w = xs.w;
    g.cout = ws.n;
    g.cin_pg = ws.c;
    g.cout_pg = ws.n / p.groups;
    g.k = ws.h;
    g.d = p.dilation;
    g.g = p.groups;
    g.pad = (ws.h - 1) * p.dilation / 2;
    g.hw = xs.h * xs.w;
    return g;
}

// out[y][x] += wv * in[y+oy][x+ox] over the in-bounds region (zero padding
// elsewhere contributes nothing).
template <class T>
inline void axpy_shifted(T* out, const T* in, T wv, i64 h, i64 w, i64 oy, i64 ox) {
    const i64 y_lo = std::max<i64>(0, -oy), y_hi = std::min<i64>(h, h - oy);
    const i64 x_lo = std::max<i64>(0, -ox), x_hi = std::min<i64>(w, w - ox);
    for (i64 y = y_lo; y < y_hi; ++y) {
        T* orow = out + y * w;
        const T* irow = in + (y + oy) * w + ox;
        for (i64 x = x_lo; x < x_hi; ++x) orow[x] += wv * irow[x];
    }
}

// sum over the in-bounds region of a[y][x] * b[y+oy][x+ox].
template <class T>
inline T dot_shifted(const T* a, const T* b, i64 h, i64 w, i64 oy, i64 ox) {
    const i64 y_lo = std::max<i64>(0, -oy), y_hi = std::min<i64>(h, h - oy);
    const i64 x_lo = std::max<i64>(0, -ox), x_hi = std::min<i64>(w, w - ox);
    T acc = 0;
    for (i64 y = y_lo; y < y_hi; ++y) {
        const T* ar = a + y * w;
        const T* br = b + (y + oy) * w + ox;
        T row = 0;
        for (i64 x = x_lo; x < x_hi; ++x) row += ar[x] * br[x];
        acc += row;
    }
    return acc;
}

// ---- grouped direct path (depthwise and small grouped kernels) ----

template <class T>
void grouped_forward(const ConvGeom& g, const T* x, const T* w, const T* b, T* out) {
    detail::parallel_for(0, g.n * g.cout, [&](i64 idx) {
        const i64 ni = idx / g.cout, co = idx % g.cout;
        const i64 grp = co / g.cout_pg;
        T* oc = out + (ni * g.cout + co) * g.hw;
        std::fill(oc, oc + g.hw, b ? b[co] : T(0));
        for (i64 cl = 0; cl < g.cin_pg; ++cl) {
            const T* xc = x + (ni * g.cin + grp * g.cin_pg + cl) * g.hw;
            const T* wk = w + (co * g.cin_pg + cl) * g.k * g.k;
            for (i64 u = 0; u < g.k; ++u)
                for (i64 v = 0; v < g.k; ++v)
                    axpy_shifted(oc, xc, wk[u * g.k + v], g.h, g.w, u * g.d - g.pad,
                                 v * g.d - g.pad);
        }
    });
}

template <class T>
void grouped_backward_input(const ConvGeom& g, const T* w, const T* og, T* gx) {
    detail::parallel_for(0, g.n * g.cin, [&](i64 idx) {
        const i64 ni = idx / g.cin, ci = idx % g.cin;
        const i64 grp = ci / g.cin_pg, cl = ci % g.cin_pg;
        T* gc = gx + (ni * g.cin + ci) * g.hw;
        for (i64 cop = 0; cop < g.cout_pg; ++cop) {
            const i64 co = grp * g.cout_pg + cop;
            const T* oc = og + (ni * g.cout + co) * g.hw;
            const T* wk = w + (co * g.cin_pg + cl) * g.k * g.k;
            for (i64 u = 0; u < g.k; ++u)
                for (i64 v = 0; v < g.k; ++v)
                    axpy_shifted(gc, oc, wk[u * g.k + v], g.h, g.w, g.pad - u * g.d,
                                 g.pad - v * g.d);
        }
    });
}

template <class T>
void grouped_backward_weight(const ConvGeom& g, const T* x, const T* og, T* gw) {
    detail::parallel_for(0, g.cout, [&](i64 co) {
        const i64 grp = co / g.cout_pg;
        for (i64 cl = 0; cl < g.cin_pg; ++cl) {
            T* wk = gw + (co * g.cin_pg + cl) * g.k * g.k;
            for (i64 u = 0; u < g.k; ++u)
                for (i64 v = 0; v < g.k; ++v) {
                    T acc = 0;
                    for (i64 ni = 0; ni < g.n; ++ni) {
                        const T* oc = og + (ni * g.cout + co) * g.hw;
                        const T* xc = x + (ni * g.cin + grp * g.cin_pg + cl) * g.hw;
                        acc += dot_shifted(oc, xc, g.h, g.w, u * g.d - g.pad, v * g.d - g.pad);
                    }
                    wk[u * g.k + v] += acc;
                }
        }
    });
}

// ---- pointwise path (1x1, groups == 1): plain GEMM per sample ----

template <class T>
void pointwise_forward(const ConvGeom& g, const T* x, const T* w, const T* b, T* out) {
    for (i64 ni = 0; ni < g.n; ++ni) {
        T* o = out + ni * g.cout * g.hw;
        if (b) {
            detail::parallel_for(0, g.cout, [&](i64 co) { std::fill(o + co * g.hw, o + (co + 1) * g.hw, b[co]); });
            detail::mm_cols(w, g.cout, g.cin, x + ni * g.cin * g.hw, g.hw, o, true);
        } else {
            detail::mm_cols(w, g.cout, g.cin, x + ni * g.cin * g.hw, g.hw, o, false);
        }
    }
}

// ---- dense path (groups == 1, k > 1): chunked im2col + GEMM ----

constexpr i64 kIm2colBudget = i64(8) << 20;  // bytes per im2col buffer

struct DenseChunking {
    i64 rows_per_chunk;
};

inline DenseChunking dense_chunking(const ConvGeom& g, i64 scalar_size) {
    i64 rows = kIm2colBudget / std::max<i64>(1, g.w * g.cin * g.k * g.k * scalar_size);
    rows = std::clamp<i64>(rows, 1, g.h);
    return {rows};
}

// col is (cin*k*k) x (rows*w) for output rows [y0, y0+rows).
template <class T>
void im2col_chunk(const ConvGeom& g, const T* x_sample, i64 y0, i64 rows, T* col) {
    detail::parallel_for(0, g.cin * g.k * g.k, [&](i64 r) {
        const i64 ci = r / (g.k * g.k);
        const i64 u = (r / g.k) % g.k, v = r % g.k;
        const i64 oy = u * g.d - g.pad, ox = v * g.d - g.pad;
        const T* xc = x_sample + ci * g.hw;
        T* dst = col + r * rows * g.w;
        for (i64 yy = 0; yy < rows; ++yy, dst += g.w) {
            const i64 iy = y0 + yy + oy;
            if (iy < 0 || iy >= g.h) {
                std::fill(dst, dst + g.w, T(0));
                continue;
            }
            const i64 x_lo = std::max<i64>(0, -ox), x_hi = std::min<i64>(g.w, g.w - ox);
            std::fill(dst, dst + x_lo, T(0));
            const T* src = xc + iy * g.w + ox;
            std::copy(src + x_lo, src + x_hi, dst + x_lo);
            std::fill(dst + x_hi, dst + g.w, T(0));
        }
    });
}

template <class T>
void dense_forward(const ConvGeom& g, const T* x, const T* w, const T* b, T* out) {
    const auto chunking = dense_chunking(g, sizeof(T));
    std::vector<T> col(static_cast<size_t>(g.cin * g.k * g.k * chunking.rows_per_chunk * g.w));
    std::vector<T> tmp(static_cast<size_t>(g.cout * chunking.rows_per_chunk * g.w));
    for (i64 ni = 0; ni < g.n; ++ni) {
        const T* xs = x + ni * g.cin * g.hw;
        for (i64 y0 = 0; y0 < g.h; y0 += chunking.rows_per_chunk) {
            const i64 rows = std::min(chunking.rows_per_chunk, g.h - y0);
            im2col_chunk(g, xs, y0, rows, col.data());
            detail::mm_cols(w, g.cout, g.cin * g.k * g.k, col.data(), rows * g.w, tmp.data(),
                            false);
            detail::parallel_for(0, g.cout, [&](i64 co) {
                T* dst = out + (ni * g.cout + co) * g.hw + y0 * g.w;
                const T* src = tmp.data() + co * rows * g.w;
                if (b) {
                    const T bv = b[co];
                    for (i64 i = 0; i < rows * g.w; ++i) dst[i] = src[i] + bv;
                } else {
                    std::copy(src, src + rows * g.w, dst);
                }
            });
        }
    }
}

template <class T>
void dense_backward_input(const ConvGeom& g, const T* w, const T* og, T* gx) {
    const auto chunking = dense_chunking(g, sizeof(T));
    std::vector<T> gcol(static_cast<size_t>(g.cin * g.k * g.k * chunking.rows_per_chunk * g.w));
    std::vector<T> ogtmp(static_cast<size_t>(g.cout * chunking.rows_per_chunk * g.w));
    for (i64 ni = 0; ni < g.n; ++ni) {
        for (i64 y0 = 0; y0 < g.h; y0 += chunking.rows_per_chunk) {
            const i64 rows = std::min(chunking.rows_per_chunk, g.h - y0);
            detail::parallel_for(0, g.cout, [&](i64 co) {
                const T* src = og + (ni * g.cout + co) * g.hw + y0 * g.w;
                std::copy(src, src + rows * g.w, ogtmp.data() + co * rows * g.w);
            });
            detail::mm_at_cols(w, g.cout, g.cin * g.k * g.k, ogtmp.data(), rows * g.w,
                               gcol.data(), false);
            // Scatter-add back; each worker owns one input channel.
            detail::parallel_for(0, g.cin, [&](i64 ci) {
                T* gc = gx + (ni * g.cin + ci) * g.hw;
                for (i64 u = 0; u < g.k; ++u)
                    for (i64 v = 0; v < g.k; ++v) {
                        const i64 r = (ci * g.k + u) * g.k + v;
                        const i64 oy = u * g.d - g.pad, ox = v * g.d - g.pad;
                        const T* src = gcol.data() + r * rows * g.w;
                        for (i64 yy = 0; yy < rows; ++yy) {
                            const i64 iy = y0 + yy + oy;
                            if (iy < 0 || iy >= g.h) continue;
                            const i64 x_lo = std::max<i64>(0, -ox),
                                      x_hi = std::min<i64>(g.w, g.w - ox);
                            T* dst = gc + iy * g.w + ox;
                            const T* s = src + yy * g.w;
                            for (i64 xx = x_lo; xx < x_hi; ++xx) dst[xx] += s[xx];
                        }
                    }
            });
        }
    }
}

template <class T>
void dense_backward_weight(const ConvGeom& g, const T* x, const T* og, T* gw) {
    const auto chunking = dense_chunking(g, sizeof(T));
    std::vector<T> col(static_cast<size_t>(g.cin * g.k * g.k * chunking.rows_per_chunk * g.w));
    std::vector<T> ogtmp(static_cast<size_t>(g.cout * chunking.rows_per_chunk * g.w));
    for (i64 ni = 0; ni < g.n; ++ni) {
        const T* xs = x + ni * g.cin * g.hw;
        for (i64 y0 = 0; y0 < g.h; y0 += chunking.rows_per_chunk) {
            const i64 rows = std::min(chunking.rows_per_chunk, g.h - y0);
            im2col_chunk(g, xs, y0, rows, col.data());
            detail::parallel_for(0, g.cout, [&](i64 co) {
                const T* src = og + (ni * g.cout + co) * g.hw + y0 * g.w;
                std::copy(src, src + rows * g.w, ogtmp.data() + co * rows * g.w);
            });
            detail::mm_abt_batched<T>({ogtmp.data()}, {col.data()}, g.cout, rows * g.w,
                                      g.cin * g.k * g.k, gw);
        }
    }
}

template <class T>
void conv_forward_dispatch(const ConvGeom& g, const T* x, const T* w, const T* b, T* out) {
    if (g.k == 1 && g.g == 1) {
        pointwise_forward(g, x, w, b, out);
    } else if (g.g == 1) {
        dense_forward(g, x, w, b, out);
    } else {
        grouped_forward(g, x, w, b, out);
    }
}

template <class T>
void conv_backward_input_dispatch(const ConvGeom& g, const T* w, const T* og, T* gx) {
    if (g.k == 1 && g.g == 1) {
        for (i64 ni = 0; ni < g.n; ++ni)
            detail::mm_at_cols(w, g.cout, g.cin, og + ni * g.cout * g.hw, g.hw,
                               gx + ni * g.cin * g.hw, true);
    } else if (g.g == 1) {
        dense_backward_input(g, w, og, gx);
    } else {
        grouped_backward_input(g, w, og, gx);
    }
}

template <class T>
void conv_backward_weight_dispatch(const ConvGeom& g, const T* x, const T* og, T* gw) {
    if (g.k == 1 && g.g == 1) {
        std::vector<const T*> as(static_cast<size_t>(g.n)), bs(static_cast<size_t>(g.n));
        for (i64 ni = 0; ni < g.n; ++ni) {
            as[static_cast<size_t>(ni)] = og + ni * g.cout * g.hw;
            bs[static_cast<size_t>(ni)] = x + ni * g.cin * g.hw;
        }
        detail::mm_abt_batched(as, bs, g.cout, g.hw, g.cin, gw);
    } else if (g.g == 1) {
        dense_backward_weight(g, x, og, gw);
    } else {
        grouped_backward_weight(g, x, og, gw);
    }
}

}  // namespace

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& p, TapeT<T>* tape) {
    const ConvGeom g = check_conv(x, p);
    TensorT<T> out(Shape{g.n, g.cout, g.h, g.w});
    conv_forward_dispatch(g, x.data(), p.weight.data(),
                          p.bias.defined() ? p.bias.data() : nullptr, out.data());

    const bool needs = x.requires_grad() || p.weight.requires_grad() ||
                       (p.bias.defined() && p.bias.requires_grad());
    out.set_requires_grad(needs);
    if (tape && needs) {
        tape->stamp(out);
        tape->record([x = x, p = p, out = out, g = g]() mutable {
            const T* og = out.grad();
            if (x.requires_grad())
                conv_backward_input_dispatch(g, p.weight.data(), og, x.grad());
            if (p.weight.requires_grad()) {
                TensorT<T> wt = p.weight;  // non-const handle for grad access
                conv_backward_weight_dispatch(g, x.data(), og, wt.grad());
            }
            if (p.bias.defined() && p.bias.requires_grad()) {
                TensorT<T> bt = p.bias;
                T* gb = bt.grad();
                detail::parallel_for(0, g.cout, [&](i64 co) {
                    T acc = 0;
                    for (i64 ni = 0; ni < g.n; ++ni) {
                        const T* oc = og + (ni * g.cout + co) * g.hw;
                        T s = 0;
                        for (i64 i = 0; i < g.hw; ++i) s += oc[i];
                        acc += s;
                    }
                    gb[co] += acc;
                });
            }
        });
    }
    return out;
}

template TensorT<float> conv2d(const TensorT<float>&, const ConvParamsT<float>&, TapeT<float>*);
template TensorT<double> conv2d(const TensorT<double>&, const ConvParamsT<double>&,
                                TapeT<double>*);

}  // namespace man
