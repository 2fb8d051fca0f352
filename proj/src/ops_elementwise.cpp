#include <cmath>
#include <numbers>

#include "kernels.hpp"
#include "man/ops.hpp"

namespace man {

namespace {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    MAN_CHECK(a.defined() && b.defined(), op, ": undefined operand");
    MAN_CHECK(a.shape() == b.shape(), op, ": shape mismatch ", a.shape().str(), " vs ",
              b.shape().str());
}

template <class T>
bool wants_grad(const TensorT<T>& a) {
    return a.requires_grad();
}
template <class T, class... Rest>
bool wants_grad(const TensorT<T>& a, const Rest&... rest) {
    return a.requires_grad() || wants_grad(rest...);
}

}  // namespace

template <class T>
TensorT<T> add(const TensorT<T>& x, const TensorT<T>& y, TapeT<T>* tape) {
    check_same_shape(x, y, "add");
    TensorT<T> out(x.shape());
    const T* a = x.data();
    const T* b = y.data();
    T* o = out.data();
    detail::parallel_ranges(x.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) o[i] = a[i] + b[i];
    });
    out.set_requires_grad(wants_grad(x, y));
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, y = y, out = out]() mutable {
            const T* og = out.grad();
            const i64 n = out.numel();
            if (x.requires_grad()) {
                T* gx = x.grad();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) gx[i] += og[i];
                });
            }
            if (y.requires_grad()) {
                T* gy = y.grad();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) gy[i] += og[i];
                });
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& x, const TensorT<T>& y, TapeT<T>* tape) {
    check_same_shape(x, y, "mul");
    TensorT<T> out(x.shape());
    const T* a = x.data();
    const T* b = y.data();
    T* o = out.data();
    detail::parallel_ranges(x.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) o[i] = a[i] * b[i];
    });
    out.set_requires_grad(wants_grad(x, y));
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, y = y, out = out]() mutable {
            const T* og = out.grad();
            const i64 n = out.numel();
            if (x.requires_grad()) {
                T* gx = x.grad();
                const T* yb = y.data();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) gx[i] += og[i] * yb[i];
                });
            }
            if (y.requires_grad()) {
                T* gy = y.grad();
                const T* xb = x.data();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) gy[i] += og[i] * xb[i];
                });
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> channel_scale(const TensorT<T>& x, const TensorT<T>& lambda, TapeT<T>* tape) {
    MAN_CHECK(x.defined() && lambda.defined(), "channel_scale: undefined operand");
    MAN_CHECK(lambda.shape() == channel_vec(x.shape().c), "channel_scale: lambda must be ",
              channel_vec(x.shape().c).str(), ", got ", lambda.shape().str());
    const Shape s = x.shape();
    TensorT<T> out(s);
    const T* a = x.data();
    const T* lv = lambda.data();
    T* o = out.data();
    const i64 hw = s.h * s.w;
    detail::parallel_for(0, s.n * s.c, [&](i64 idx) {
        const T l = lv[idx % s.c];
        const T* src = a + idx * hw;
        T* dst = o + idx * hw;
        for (i64 i = 0; i < hw; ++i) dst[i] = src[i] * l;
    });
    out.set_requires_grad(wants_grad(x, lambda));
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, lambda = lambda, out = out]() mutable {
            const Shape s = x.shape();
            const i64 hw = s.h * s.w;
            const T* og = out.grad();
            if (x.requires_grad()) {
                T* gx = x.grad();
                const T* lv = lambda.data();
                detail::parallel_for(0, s.n * s.c, [&](i64 idx) {
                    const T l = lv[idx % s.c];
                    const T* src = og + idx * hw;
                    T* dst = gx + idx * hw;
                    for (i64 i = 0; i < hw; ++i) dst[i] += src[i] * l;
                });
            }
            if (lambda.requires_grad()) {
                TensorT<T> lt = lambda;
                T* gl = lt.grad();
                const T* xb = x.data();
                detail::parallel_for(0, s.c, [&](i64 c) {
                    T acc = 0;
                    for (i64 ni = 0; ni < s.n; ++ni) {
                        const i64 base = (ni * s.c + c) * hw;
                        T row = 0;
                        for (i64 i = 0; i < hw; ++i) row += og[base + i] * xb[base + i];
                        acc += row;
                    }
                    gl[c] += acc;
                });
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x, TapeT<T>* tape) {
    MAN_CHECK(x.defined(), "gelu: undefined operand");
    TensorT<T> out(x.shape());
    const T* a = x.data();
    T* o = out.data();
    const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2.0);
    detail::parallel_ranges(x.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) {
            const T v = a[i];
            o[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        }
    });
    out.set_requires_grad(x.requires_grad());
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, out = out, inv_sqrt2 = inv_sqrt2]() mutable {
            const T* og = out.grad();
            const T* a = x.data();
            T* gx = x.grad();
            const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
            detail::parallel_ranges(x.numel(), [&](i64 lo, i64 hi) {
                for (i64 i = lo; i < hi; ++i) {
                    const T v = a[i];
                    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                    gx[i] += og[i] * (cdf + v * pdf);
                }
            });
        });
    }
    return out;
}

template <class T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target, TapeT<T>* tape) {
    check_same_shape(pred, target, "l1_loss");
    const i64 n = pred.numel();
    MAN_CHECK(n > 0, "l1_loss: empty tensors");
    const T* a = pred.data();
    const T* b = target.data();
    double acc = 0;  // fixed row-major accumulation
    for (i64 i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    TensorT<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc / static_cast<double>(n)));
    out.set_requires_grad(wants_grad(pred, target));
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([pred = pred, target = target, out = out]() mutable {
            const T g = out.grad()[0];
            const i64 n = pred.numel();
            const T scale = g / static_cast<T>(n);
            const T* a = pred.data();
            const T* b = target.data();
            if (pred.requires_grad()) {
                T* gp = pred.grad();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) {
                        const T d = a[i] - b[i];
                        gp[i] += d > 0 ? scale : (d < 0 ? -scale : T(0));
                    }
                });
            }
            if (target.requires_grad()) {
                T* gt = target.grad();
                detail::parallel_ranges(n, [&](i64 lo, i64 hi) {
                    for (i64 i = lo; i < hi; ++i) {
                        const T d = a[i] - b[i];
                        gt[i] -= d > 0 ? scale : (d < 0 ? -scale : T(0));
                    }
                });
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> sum(const TensorT<T>& x, TapeT<T>* tape) {
    MAN_CHECK(x.defined(), "sum: undefined operand");
    const T* a = x.data();
    double acc = 0;
    for (i64 i = 0; i < x.numel(); ++i) acc += static_cast<double>(a[i]);
    TensorT<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc));
    out.set_requires_grad(x.requires_grad());
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, out = out]() mutable {
            const T g = out.grad()[0];
            T* gx = x.grad();
            detail::parallel_ranges(x.numel(), [&](i64 lo, i64 hi) {
                for (i64 i = lo; i < hi; ++i) gx[i] += g;
            });
        });
    }
    return out;
}

template <class T>
std::vector<TensorT<T>> channel_split(const TensorT<T>& x, int n_groups, TapeT<T>* tape) {
    MAN_CHECK(x.defined(), "channel_split: undefined operand");
    const Shape s = x.shape();
    MAN_CHECK(n_groups >= 1 && s.c % n_groups == 0, "channel_split: ", s.c,
              " channels not divisible into ", n_groups, " groups");
    const i64 cg = s.c / n_groups;
    const i64 hw = s.h * s.w;
    std::vector<TensorT<T>> parts;
    parts.reserve(static_cast<size_t>(n_groups));
    for (int gi = 0; gi < n_groups; ++gi) {
        TensorT<T> part(Shape{s.n, cg, s.h, s.w});
        T* dst = part.data();
        const T* src = x.data();
        for (i64 ni = 0; ni < s.n; ++ni)
            std::copy(src + (ni * s.c + gi * cg) * hw, src + (ni * s.c + (gi + 1) * cg) * hw,
                      dst + ni * cg * hw);
        part.set_requires_grad(x.requires_grad());
        if (tape && x.requires_grad()) {
            tape->stamp(part);
            tape->record([x = x, part = part, gi = gi, cg = cg, hw = hw]() mutable {
                const Shape s = x.shape();
                T* gx = x.grad();
                const T* gp = part.grad();
                for (i64 ni = 0; ni < s.n; ++ni) {
                    T* dst = gx + (ni * s.c + gi * cg) * hw;
                    const T* src = gp + ni * cg * hw;
                    for (i64 i = 0; i < cg * hw; ++i) dst[i] += src[i];
                }
            });
        }
        parts.push_back(std::move(part));
    }
    return parts;
}

template <class T>
TensorT<T> channel_concat(const std::vector<TensorT<T>>& parts, TapeT<T>* tape) {
    MAN_CHECK(!parts.empty(), "channel_concat: no inputs");
    const Shape first = parts.front().shape();
    i64 c_total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        MAN_CHECK(p.defined(), "channel_concat: undefined part");
        const Shape s = p.shape();
        MAN_CHECK(s.n == first.n && s.h == first.h && s.w == first.w,
                  "channel_concat: incompatible shapes ", s.str(), " vs ", first.str());
        c_total += s.c;
        needs = needs || p.requires_grad();
    }
    TensorT<T> out(Shape{first.n, c_total, first.h, first.w});
    const i64 hw = first.h * first.w;
    i64 c_off = 0;
    for (const auto& p : parts) {
        const i64 cg = p.shape().c;
        const T* src = p.data();
        T* dst = out.data();
        for (i64 ni = 0; ni < first.n; ++ni)
            std::copy(src + ni * cg * hw, src + (ni + 1) * cg * hw,
                      dst + (ni * c_total + c_off) * hw);
        c_off += cg;
    }
    out.set_requires_grad(needs);
    if (tape && needs) {
        tape->stamp(out);
        tape->record([parts = parts, out = out, c_total = c_total, hw = hw]() mutable {
            const T* og = out.grad();
            const i64 n = out.shape().n;
            i64 c_off = 0;
            for (auto& p : parts) {
                const i64 cg = p.shape().c;
                if (p.requires_grad()) {
                    TensorT<T> pt = p;
                    T* gp = pt.grad();
                    for (i64 ni = 0; ni < n; ++ni) {
                        const T* src = og + (ni * c_total + c_off) * hw;
                        T* dst = gp + ni * cg * hw;
                        for (i64 i = 0; i < cg * hw; ++i) dst[i] += src[i];
                    }
                }
                c_off += cg;
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, int r, TapeT<T>* tape) {
    MAN_CHECK(x.defined(), "pixel_shuffle: undefined operand");
    MAN_CHECK(r >= 1, "pixel_shuffle: factor must be positive");
    const Shape s = x.shape();
    MAN_CHECK(s.c % (static_cast<i64>(r) * r) == 0, "pixel_shuffle: ", s.c,
              " channels not divisible by r^2 = ", r * r);
    const i64 rr = static_cast<i64>(r);
    const i64 co = s.c / (rr * rr);
    TensorT<T> out(Shape{s.n, co, s.h * rr, s.w * rr});
    const T* a = x.data();
    T* o = out.data();
    const i64 oh = s.h * rr, ow = s.w * rr;
    detail::parallel_for(0, s.n * co, [&](i64 idx) {
        const i64 ni = idx / co, c = idx % co;
        for (i64 dy = 0; dy < rr; ++dy)
            for (i64 dx = 0; dx < rr; ++dx) {
                const i64 ci = c * rr * rr + dy * rr + dx;
                const T* src = a + ((ni * s.c + ci) * s.h) * s.w;
                for (i64 y = 0; y < s.h; ++y) {
                    T* dst = o + ((ni * co + c) * oh + y * rr + dy) * ow + dx;
                    const T* srow = src + y * s.w;
                    for (i64 xx = 0; xx < s.w; ++xx) dst[xx * rr] = srow[xx];
                }
            }
    });
    out.set_requires_grad(x.requires_grad());
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, out = out, rr = rr, co = co]() mutable {
            const Shape s = x.shape();
            const i64 oh = s.h * rr, ow = s.w * rr;
            const T* og = out.grad();
            T* gx = x.grad();
            detail::parallel_for(0, s.n * co, [&](i64 idx) {
                const i64 ni = idx / co, c = idx % co;
                for (i64 dy = 0; dy < rr; ++dy)
                    for (i64 dx = 0; dx < rr; ++dx) {
                        const i64 ci = c * rr * rr + dy * rr + dx;
                        T* dst = gx + ((ni * s.c + ci) * s.h) * s.w;
                        for (i64 y = 0; y < s.h; ++y) {
                            const T* srow =
                                og + ((ni * co + c) * oh + y * rr + dy) * ow + dx;
                            T* drow = dst + y * s.w;
                            for (i64 xx = 0; xx < s.w; ++xx) drow[xx] += srow[xx * rr];
                        }
                    }
            });
        });
    }
    return out;
}

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps, TapeT<T>* tape) {
    MAN_CHECK(x.defined() && gamma.defined() && beta.defined(), "layer_norm: undefined operand");
    const Shape s = x.shape();
    MAN_CHECK(s.c > 0, "layer_norm: zero channel count");
    MAN_CHECK(gamma.shape() == channel_vec(s.c) && beta.shape() == channel_vec(s.c),
              "layer_norm: gamma/beta must be ", channel_vec(s.c).str());
    TensorT<T> out(s);
    const i64 hw = s.h * s.w;
    const i64 positions = s.n * hw;
    // Per-position statistics saved for the backward pass.
    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(positions));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(positions));
    const T* a = x.data();
    const T* gv = gamma.data();
    const T* bv = beta.data();
    T* o = out.data();
    detail::parallel_for(0, s.n, [&](i64 ni) {
        const T* xs = a + ni * s.c * hw;
        T* os = o + ni * s.c * hw;
        T* mu = mean->data() + ni * hw;
        T* is = inv_std->data() + ni * hw;
        for (i64 p = 0; p < hw; ++p) {
            T m = 0;
            for (i64 c = 0; c < s.c; ++c) m += xs[c * hw + p];
            m /= static_cast<T>(s.c);
            T var = 0;
            for (i64 c = 0; c < s.c; ++c) {
                const T d = xs[c * hw + p] - m;
                var += d * d;
            }
            var /= static_cast<T>(s.c);
            mu[p] = m;
            is[p] = T(1) / std::sqrt(var + eps);
        }
        for (i64 c = 0; c < s.c; ++c) {
            const T g = gv[c], b = bv[c];
            const T* xc = xs + c * hw;
            T* oc = os + c * hw;
            for (i64 p = 0; p < hw; ++p) oc[p] = (xc[p] - mu[p]) * is[p] * g + b;
        }
    });
    out.set_requires_grad(wants_grad(x, gamma, beta));
    if (tape && out.requires_grad()) {
        tape->stamp(out);
        tape->record([x = x, gamma = gamma, beta = beta, out = out, mean = mean, inv_std = inv_std]() mutable {
            const Shape s = x.shape();
            const i64 hw = s.h * s.w;
            const T* og = out.grad();
            const T* a = x.data();
            const T* gv = gamma.data();
            const T inv_c = T(1) / static_cast<T>(s.c);
            if (x.requires_grad()) {
                T* gx = x.grad();
                detail::parallel_for(0, s.n, [&](i64 ni) {
                    const T* xs = a + ni * s.c * hw;
                    const T* ogs = og + ni * s.c * hw;
                    T* gxs = gx + ni * s.c * hw;
                    const T* mu = mean->data() + ni * hw;
                    const T* is = inv_std->data() + ni * hw;
                    std::vector<T> s1(static_cast<size_t>(hw), T(0));
                    std::vector<T> s2(static_cast<size_t>(hw), T(0));
                    for (i64 c = 0; c < s.c; ++c) {
                        const T g = gv[c];
                        const T* xc = xs + c * hw;
                        const T* oc = ogs + c * hw;
                        for (i64 p = 0; p < hw; ++p) {
                            const T gd = g * oc[p];
                            s1[static_cast<size_t>(p)] += gd;
                            s2[static_cast<size_t>(p)] += gd * (xc[p] - mu[p]) * is[p];
                        }
                    }
                    for (i64 c = 0; c < s.c; ++c) {
                        const T g = gv[c];
                        const T* xc = xs + c * hw;
                        const T* oc = ogs + c * hw;
                        T* gc = gxs + c * hw;
                        for (i64 p = 0; p < hw; ++p) {
                            const T xh = (xc[p] - mu[p]) * is[p];
                            gc[p] += (g * oc[p] - inv_c * s1[static_cast<size_t>(p)] -
                                      xh * inv_c * s2[static_cast<size_t>(p)]) *
                                     is[p];
                        }
                    }
                });
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                TensorT<T> gt = gamma;
                TensorT<T> bt = beta;
                T* gg = gamma.requires_grad() ? gt.grad() : nullptr;
                T* gb = beta.requires_grad() ? bt.grad() : nullptr;
                detail::parallel_for(0, s.c, [&](i64 c) {
                    T ag = 0, ab = 0;
                    for (i64 ni = 0; ni < s.n; ++ni) {
                        const T* xc = a + (ni * s.c + c) * hw;
                        const T* oc = og + (ni * s.c + c) * hw;
                        const T* mu = mean->data() + ni * hw;
                        const T* is = inv_std->data() + ni * hw;
                        for (i64 p = 0; p < hw; ++p) {
                            ag += oc[p] * (xc[p] - mu[p]) * is[p];
                            ab += oc[p];
                        }
                    }
                    if (gg) gg[c] += ag;
                    if (gb) gb[c] += ab;
                });
            }
        });
    }
    return out;
}

#define MAN_INSTANTIATE(T)                                                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&, TapeT<T>*);               \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&, TapeT<T>*);               \
    template TensorT<T> channel_scale(const TensorT<T>&, const TensorT<T>&, TapeT<T>*);     \
    template TensorT<T> gelu(const TensorT<T>&, TapeT<T>*);                                 \
    template TensorT<T> l1_loss(const TensorT<T>&, const TensorT<T>&, TapeT<T>*);           \
    template TensorT<T> sum(const TensorT<T>&, TapeT<T>*);                                  \
    template std::vector<TensorT<T>> channel_split(const TensorT<T>&, int, TapeT<T>*);      \
    template TensorT<T> channel_concat(const std::vector<TensorT<T>>&, TapeT<T>*);          \
    template TensorT<T> pixel_shuffle(const TensorT<T>&, int, TapeT<T>*);                   \
    template TensorT<T> layer_norm(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                   T, TapeT<T>*);

MAN_INSTANTIATE(float)
MAN_INSTANTIATE(double)
#undef MAN_INSTANTIATE

}  // namespace man
