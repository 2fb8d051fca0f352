#pragma once

#include <functional>
#include <string>
#include <vector>

#include "man/dataset.hpp"
#include "man/tensor.hpp"

namespace man {

// BT.601 studio-swing luma: Y = (16 + 65.481 R + 128.553 G + 24.966 B)/255.
Tensor rgb_to_y(const Tensor& img);

// 10*log10(1/MSE) over the centrally shaved region for [0,1]-range
// inputs, capped at 100 dB (identical images would be infinite).
template <class T>
double psnr(const TensorT<T>& a, const TensorT<T>& b, int shave);

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
// C2=0.03^2, valid windows only. Multi-channel inputs average the
// per-channel scores.
template <class T>
double ssim(const TensorT<T>& a, const TensorT<T>& b, int shave);

struct EvalProtocol {
    bool y_channel = true;
    int shave = 0;
    int scale = 0;
    bool self_ensemble = false;
};

struct MetricReport {
    struct Row {
        std::string id;
        double psnr = 0;
        double ssim = 0;
    };
    std::vector<Row> per_image;
    double mean_psnr = 0;
    double mean_ssim = 0;
    EvalProtocol protocol;
};

using SrFn = std::function<Tensor(const Tensor& lr)>;

// Average of the 8 dihedral round trips: transform, forward, inverse
// transform, mean.
Tensor self_ensemble(const SrFn& fn, const Tensor& lr);

// Per-image SR -> 8-bit quantization -> optional Y conversion -> shave ->
// PSNR/SSIM, plus arithmetic means.
MetricReport evaluate(const SrFn& fn, const DatasetIndex& data, const EvalProtocol& protocol);

std::string report_to_csv(const MetricReport& report);
void write_report_csv(const std::string& path, const MetricReport& report);
std::string report_to_table(const MetricReport& report);

}  // namespace man
