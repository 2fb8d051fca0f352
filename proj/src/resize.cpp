#include "man/resize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace man {

double cubic_kernel(double x) {
    const double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace {

struct AxisWeights {
    i64 taps = 0;
    std::vector<i64> index;    // out * taps source indices (border-replicated)
    std::vector<double> weight;  // matching weights, rows normalized to 1
};

AxisWeights axis_weights(i64 in, i64 out, bool antialias) {
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const bool shrink = antialias && scale < 1.0;
    const double kscale = shrink ? scale : 1.0;
    const double support = 2.0 / kscale;  // cubic support is 2 on each side
    const i64 taps = static_cast<i64>(std::ceil(2.0 * support)) + 2;

    AxisWeights aw;
    aw.taps = taps;
    aw.index.resize(static_cast<size_t>(out * taps));
    aw.weight.resize(static_cast<size_t>(out * taps));
    for (i64 i = 0; i < out; ++i) {
        const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
        const i64 left = static_cast<i64>(std::floor(center - support)) + 1;
        double total = 0.0;
        for (i64 t = 0; t < taps; ++t) {
            const i64 src = left + t;
            const double w = kscale * cubic_kernel(kscale * (center - static_cast<double>(src)));
            aw.index[static_cast<size_t>(i * taps + t)] = std::clamp<i64>(src, 0, in - 1);
            aw.weight[static_cast<size_t>(i * taps + t)] = w;
            total += w;
        }
        for (i64 t = 0; t < taps; ++t) aw.weight[static_cast<size_t>(i * taps + t)] /= total;
    }
    return aw;
}

// Resamples the height axis of one channel plane: (h,w) -> (out_h,w).
void resample_rows(const float* src, i64 h, i64 w, const AxisWeights& aw, i64 out_h,
                   double* dst) {
    for (i64 y = 0; y < out_h; ++y) {
        double* drow = dst + y * w;
        std::fill(drow, drow + w, 0.0);
        for (i64 t = 0; t < aw.taps; ++t) {
            const double wv = aw.weight[static_cast<size_t>(y * aw.taps + t)];
            const float* srow = src + aw.index[static_cast<size_t>(y * aw.taps + t)] * w;
            for (i64 x = 0; x < w; ++x) drow[x] += wv * static_cast<double>(srow[x]);
        }
    }
    (void)h;
}

}  // namespace

Tensor bicubic_resize(const Tensor& img, i64 out_h, i64 out_w, bool antialias) {
    MAN_CHECK(img.defined(), "bicubic_resize: undefined image");
    MAN_CHECK(out_h > 0 && out_w > 0, "bicubic_resize: target dims must be positive, got ", out_h,
              "x", out_w);
    const Shape s = img.shape();
    const auto wh = axis_weights(s.h, out_h, antialias);
    const auto ww = axis_weights(s.w, out_w, antialias);

    Tensor out(Shape{s.n, s.c, out_h, out_w});
    std::vector<double> tmp(static_cast<size_t>(out_h * s.w));
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const float* plane = img.data() + (n * s.c + c) * s.h * s.w;
            resample_rows(plane, s.h, s.w, wh, out_h, tmp.data());
            float* dst = out.data() + (n * s.c + c) * out_h * out_w;
            for (i64 y = 0; y < out_h; ++y) {
                const double* trow = tmp.data() + y * s.w;
                for (i64 x = 0; x < out_w; ++x) {
                    double acc = 0.0;
                    for (i64 t = 0; t < ww.taps; ++t)
                        acc += ww.weight[static_cast<size_t>(x * ww.taps + t)] *
                               trow[ww.index[static_cast<size_t>(x * ww.taps + t)]];
                    dst[y * out_w + x] =
                        static_cast<float>(std::clamp(acc, 0.0, 1.0));
                }
            }
        }
    return out;
}

}  // namespace man
