#pragma once

#include <functional>

#include "man/ops.hpp"

namespace man {

// Scalar-valued differentiable function of one tensor. Called with a tape
// for the analytic pass and with nullptr for finite-difference probes, so
// it must be deterministic.
using ScalarFn64 = std::function<Tensor64(Tape64*, const Tensor64&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    i64 argmax = -1;
};

// Central finite differences against the taped gradient, in 64-bit.
// Error metric per coordinate: |analytic - fd| / max(1, |fd|).
inline GradCheckResult grad_check_detail(const ScalarFn64& f, Tensor64 x, double eps) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tape64 tape;
    Tensor64 y = f(&tape, x);
    MAN_CHECK(y.defined() && y.numel() == 1, "grad_check: f must be scalar-valued");
    tape.backward(y);
    std::vector<double> analytic(x.grad(), x.grad() + x.numel());

    GradCheckResult res;
    double* data = x.data();
    for (i64 i = 0; i < x.numel(); ++i) {
        const double orig = data[i];
        data[i] = orig + eps;
        const double fp = f(nullptr, x).item();
        data[i] = orig - eps;
        const double fm = f(nullptr, x).item();
        data[i] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[static_cast<size_t>(i)] - fd) /
                           std::max(1.0, std::abs(fd));
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.argmax = i;
        }
    }
    return res;
}

inline double grad_check(const ScalarFn64& f, const Tensor64& x, double eps) {
    return grad_check_detail(f, x, eps).max_rel_error;
}

}  // namespace man
