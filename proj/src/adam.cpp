#include <cmath>

#include "man/optim.hpp"

namespace man {

AdamState AdamState::init(ManModel& model) {
    AdamState st;
    visit_params<float>(model, [&](const std::string& name, Tensor& t) {
        st.names.push_back(name);
        st.m.emplace_back(t.shape());
        st.v.emplace_back(t.shape());
    });
    return st;
}

template <class T>
void adam_update(T* p, const T* g, T* m, T* v, i64 n, i64 step, T beta1, T beta2, T eps, T lr) {
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step));
    for (i64 i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

template void adam_update(float*, const float*, float*, float*, i64, i64, float, float, float,
                          float);
template void adam_update(double*, const double*, double*, double*, i64, i64, double, double,
                          double, double);

void adam_step(ManModel& model, AdamState& state, double lr, double grad_clip) {
    state.step += 1;
    double scale = 1.0;
    if (grad_clip > 0.0) {
        double sq = 0.0;
        visit_params<float>(model, [&](const std::string& name, Tensor& t) {
            if (!t.has_grad()) throw NumericError(cat("adam_step: '", name, "' has no gradient"));
            const float* g = t.grad();
            for (i64 i = 0; i < t.numel(); ++i) sq += double(g[i]) * g[i];
        });
        const double norm = std::sqrt(sq);
        if (norm > grad_clip) scale = grad_clip / norm;
    }
    size_t idx = 0;
    visit_params<float>(model, [&](const std::string& name, Tensor& t) {
        if (!t.has_grad()) throw NumericError(cat("adam_step: '", name, "' has no gradient"));
        MAN_CHECK(idx < state.m.size() && state.names[idx] == name,
                  "adam_step: optimizer state does not match the model (at '", name, "')");
        float* g = t.grad();
        if (scale != 1.0)
            for (i64 i = 0; i < t.numel(); ++i) g[i] = static_cast<float>(g[i] * scale);
        adam_update(t.data(), g, state.m[idx].data(), state.v[idx].data(), t.numel(), state.step,
                    state.beta1, state.beta2, state.eps, static_cast<float>(lr));
        ++idx;
    });
}

double cosine_lr(i64 t, i64 total, double lr0, double lr_min) {
    MAN_CHECK(total > 0, "cosine_lr: total iterations must be positive");
    if (t < 0 || t > total)
        throw std::invalid_argument(cat("cosine_lr: step ", t, " outside [0, ", total, "]"));
    const double pi = 3.14159265358979323846;
    return lr_min + (lr0 - lr_min) * (1.0 + std::cos(pi * static_cast<double>(t) /
                                                     static_cast<double>(total))) /
                        2.0;
}

TrainConfig TrainConfig::preset(Stage s) {
    TrainConfig cfg;
    cfg.stage = s;
    if (s == Stage::Finetune) {
        cfg.lr0 = 1e-4;
        cfg.total_iters = 80000;
        cfg.batch = 16;
        cfg.patch = 64;
    }
    return cfg;
}

}  // namespace man
