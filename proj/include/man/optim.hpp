#pragma once

#include <functional>
#include <string>
#include <vector>

#include "man/arch.hpp"
#include "man/dataset.hpp"

namespace man {

// Adam first/second moments aligned with the model's parameter order.
struct AdamState {
    std::vector<std::string> names;
    std::vector<Tensor> m, v;
    i64 step = 0;
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;

    static AdamState init(ManModel& model);
};

// One bias-corrected Adam update over n scalars. Exposed as a template so
// tests can drive a 64-bit instance against an independent reference.
template <class T>
void adam_update(T* p, const T* g, T* m, T* v, i64 n, i64 step, T beta1, T beta2, T eps, T lr);

// Applies one step to every parameter; throws if a parameter is missing
// its gradient. grad_clip > 0 rescales by the global gradient norm.
void adam_step(ManModel& model, AdamState& state, double lr, double grad_clip = 0.0);

// lr_min + (lr0 - lr_min) * (1 + cos(pi t / T)) / 2, 0 <= t <= T.
double cosine_lr(i64 t, i64 total, double lr0, double lr_min);

enum class Stage { Scratch, Finetune };

struct TrainConfig {
    double lr0 = 5e-4;
    double lr_min = 1e-7;
    i64 total_iters = 160000;
    int batch = 32;
    int patch = 48;
    u64 seed = 0;
    Stage stage = Stage::Scratch;
    i64 eval_every = 0;        // 0 = off
    i64 checkpoint_every = 0;  // 0 = off
    double grad_clip = 0.0;    // 0 = off

    // scratch = (5e-4, 160K iters, batch 32, patch 48),
    // finetune = (1e-4, 80K, 16, 64).
    static TrainConfig preset(Stage s);
};

struct LossEntry {
    i64 iter = 0;
    double loss = 0;
    double lr = 0;
};
using LossLog = std::vector<LossEntry>;

void write_loss_csv(const std::string& path, const LossLog& log);

// Everything a checkpoint must capture for bit-exact resume.
struct TrainState {
    AdamState adam;
    Rng rng{0};
    i64 iter = 0;  // completed iterations
};

TrainState init_train_state(ManModel& model, const TrainConfig& cfg);

struct TrainHooks {
    std::function<void(i64 iter, ManModel& model, const TrainState& st)> on_checkpoint;
    std::function<void(i64 iter, ManModel& model)> on_eval;
    // Checked after each completed iteration; returning true pauses the
    // run (resume later from a checkpoint under the same schedule).
    std::function<bool(i64 iter)> should_stop;
};

// Runs sample -> augment -> forward -> l1 -> backward -> adam with the
// cosine schedule, from st.iter up to cfg.total_iters. Aborts with
// NumericError on a non-finite loss.
LossLog train(ManModel& model, TrainState& st, const DatasetIndex& data, const TrainConfig& cfg,
              const TrainHooks& hooks = {});

}  // namespace man
