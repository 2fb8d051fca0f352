#include "man/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "man/image_io.hpp"

namespace man {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

template <class T>
TensorT<T> shave_border(const TensorT<T>& x, int shave) {
    if (shave == 0) return x;
    const Shape s = x.shape();
    MAN_CHECK(shave > 0 && 2 * shave < s.h && 2 * shave < s.w,
              "shave ", shave, " leaves no pixels on a ", s.h, "x", s.w, " image");
    TensorT<T> out(Shape{s.n, s.c, s.h - 2 * shave, s.w - 2 * shave});
    const i64 oh = out.shape().h, ow = out.shape().w;
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
            for (i64 y = 0; y < oh; ++y) {
                const T* src = x.data() + ((n * s.c + c) * s.h + y + shave) * s.w + shave;
                std::copy(src, src + ow, out.data() + ((n * s.c + c) * oh + y) * ow);
            }
    return out;
}

std::vector<double> gaussian_window() {
    std::vector<double> w(kSsimWindow * kSsimWindow);
    const double c = (kSsimWindow - 1) / 2.0;
    double total = 0;
    for (int y = 0; y < kSsimWindow; ++y)
        for (int x = 0; x < kSsimWindow; ++x) {
            const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
            w[static_cast<size_t>(y * kSsimWindow + x)] =
                std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
            total += w[static_cast<size_t>(y * kSsimWindow + x)];
        }
    for (auto& v : w) v /= total;
    return w;
}

template <class T>
double ssim_plane(const T* a, const T* b, i64 h, i64 w) {
    MAN_CHECK(h >= kSsimWindow && w >= kSsimWindow, "image ", h, "x", w,
              " is smaller than the ", kSsimWindow, "x", kSsimWindow, " SSIM window");
    static const std::vector<double> win = gaussian_window();
    double total = 0;
    i64 count = 0;
    for (i64 y = 0; y + kSsimWindow <= h; ++y)
        for (i64 x = 0; x + kSsimWindow <= w; ++x) {
            double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
            for (int wy = 0; wy < kSsimWindow; ++wy)
                for (int wx = 0; wx < kSsimWindow; ++wx) {
                    const double wv = win[static_cast<size_t>(wy * kSsimWindow + wx)];
                    const double va = a[(y + wy) * w + x + wx];
                    const double vb = b[(y + wy) * w + x + wx];
                    ma += wv * va;
                    mb += wv * vb;
                    maa += wv * va * va;
                    mbb += wv * vb * vb;
                    mab += wv * va * vb;
                }
            const double va = maa - ma * ma;
            const double vb = mbb - mb * mb;
            const double cov = mab - ma * mb;
            total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
                     ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace

Tensor rgb_to_y(const Tensor& img) {
    MAN_CHECK(img.defined() && img.shape().c == 3, "rgb_to_y: expected 3 channels, got ",
              img.defined() ? img.shape().c : 0);
    const Shape s = img.shape();
    Tensor out(Shape{s.n, 1, s.h, s.w});
    const i64 hw = s.h * s.w;
    for (i64 n = 0; n < s.n; ++n) {
        const float* r = img.data() + n * 3 * hw;
        const float* g = r + hw;
        const float* b = g + hw;
        float* y = out.data() + n * hw;
        for (i64 p = 0; p < hw; ++p)
            y[p] = static_cast<float>(
                (16.0 + 65.481 * r[p] + 128.553 * g[p] + 24.966 * b[p]) / 255.0);
    }
    return out;
}

template <class T>
double psnr(const TensorT<T>& a, const TensorT<T>& b, int shave) {
    MAN_CHECK(a.defined() && b.defined() && a.shape() == b.shape(),
              "psnr: shape mismatch");
    const TensorT<T> sa = shave_border(a, shave);
    const TensorT<T> sb = shave_border(b, shave);
    double mse = 0;
    for (i64 i = 0; i < sa.numel(); ++i) {
        const double d = static_cast<double>(sa.data()[i]) - static_cast<double>(sb.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(sa.numel());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

template <class T>
double ssim(const TensorT<T>& a, const TensorT<T>& b, int shave) {
    MAN_CHECK(a.defined() && b.defined() && a.shape() == b.shape(),
              "ssim: shape mismatch");
    const TensorT<T> sa = shave_border(a, shave);
    const TensorT<T> sb = shave_border(b, shave);
    const Shape s = sa.shape();
    double total = 0;
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
            total += ssim_plane(sa.data() + (n * s.c + c) * s.h * s.w,
                                sb.data() + (n * s.c + c) * s.h * s.w, s.h, s.w);
    return total / static_cast<double>(s.n * s.c);
}

template double psnr(const TensorT<float>&, const TensorT<float>&, int);
template double psnr(const TensorT<double>&, const TensorT<double>&, int);
template double ssim(const TensorT<float>&, const TensorT<float>&, int);
template double ssim(const TensorT<double>&, const TensorT<double>&, int);

Tensor self_ensemble(const SrFn& fn, const Tensor& lr) {
    Tensor acc;
    for (int t = 0; t < 8; ++t) {
        Tensor sr = inverse_transform_dihedral(fn(transform_dihedral(lr, t)), t);
        if (!acc.defined()) {
            acc = sr.clone();
        } else {
            MAN_CHECK(acc.shape() == sr.shape(), "self_ensemble: inconsistent output shapes");
            for (i64 i = 0; i < acc.numel(); ++i) acc.data()[i] += sr.data()[i];
        }
    }
    for (i64 i = 0; i < acc.numel(); ++i) acc.data()[i] /= 8.0f;
    return acc;
}

MetricReport evaluate(const SrFn& fn, const DatasetIndex& data, const EvalProtocol& protocol) {
    if (data.pairs.empty()) throw DataError("evaluate: empty dataset");
    MetricReport report;
    report.protocol = protocol;
    for (const auto& pair : data.pairs) {
        Tensor sr = protocol.self_ensemble ? self_ensemble(fn, pair.lr) : fn(pair.lr);
        if (sr.shape() != pair.hr.shape())
            throw DataError(cat("evaluate: model output ", sr.shape().str(),
                                " does not match HR ", pair.hr.shape().str(), " for '", pair.id,
                                "' (scale mismatch between model and dataset?)"));
        // Published numbers are computed from saved 8-bit images.
        Tensor sq = quantize_roundtrip(sr);
        Tensor hq = quantize_roundtrip(pair.hr);
        if (protocol.y_channel) {
            sq = rgb_to_y(sq);
            hq = rgb_to_y(hq);
        }
        MetricReport::Row row;
        row.id = pair.id;
        row.psnr = psnr(sq, hq, protocol.shave);
        row.ssim = ssim(sq, hq, protocol.shave);
        report.per_image.push_back(row);
    }
    for (const auto& r : report.per_image) {
        report.mean_psnr += r.psnr;
        report.mean_ssim += r.ssim;
    }
    report.mean_psnr /= static_cast<double>(report.per_image.size());
    report.mean_ssim /= static_cast<double>(report.per_image.size());
    return report;
}

namespace {
std::string protocol_line(const EvalProtocol& p) {
    return cat("# protocol: scale=", p.scale, " shave=", p.shave, " y_channel=",
               p.y_channel ? 1 : 0, " self_ensemble=", p.self_ensemble ? 1 : 0);
}
}  // namespace

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream os;
    os << protocol_line(report.protocol) << "\n";
    os << "id,psnr,ssim\n";
    os << std::fixed;
    for (const auto& r : report.per_image)
        os << r.id << "," << std::setprecision(4) << r.psnr << "," << std::setprecision(6)
           << r.ssim << "\n";
    os << "mean," << std::setprecision(4) << report.mean_psnr << "," << std::setprecision(6)
       << report.mean_ssim << "\n";
    return os.str();
}

void write_report_csv(const std::string& path, const MetricReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError(cat("cannot open '", path, "' for writing"));
    out << report_to_csv(report);
}

std::string report_to_table(const MetricReport& report) {
    std::ostringstream os;
    os << protocol_line(report.protocol) << "\n";
    os << std::left << std::setw(24) << "image" << std::right << std::setw(10) << "psnr"
       << std::setw(10) << "ssim" << "\n";
    os << std::fixed;
    for (const auto& r : report.per_image)
        os << std::left << std::setw(24) << r.id << std::right << std::setw(10)
           << std::setprecision(3) << r.psnr << std::setw(10) << std::setprecision(4) << r.ssim
           << "\n";
    os << std::left << std::setw(24) << "mean" << std::right << std::setw(10)
       << std::setprecision(3) << report.mean_psnr << std::setw(10) << std::setprecision(4)
       << report.mean_ssim << "\n";
    return os.str();
}

}  // namespace man
