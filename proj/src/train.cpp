#include <cmath>
#include <fstream>

#include "man/optim.hpp"

namespace man {

void write_loss_csv(const std::string& path, const LossLog& log) {
    std::ofstream out(path);
    if (!out) throw DataError(cat("cannot open '", path, "' for writing"));
    out << "iter,loss,lr\n";
    for (const auto& e : log) {
        char line[96];
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g\n", static_cast<long long>(e.iter),
                      e.loss, e.lr);
        out << line;
    }
}

TrainState init_train_state(ManModel& model, const TrainConfig& cfg) {
    TrainState st;
    st.adam = AdamState::init(model);
    st.rng = Rng(cfg.seed);
    st.iter = 0;
    return st;
}

LossLog train(ManModel& model, TrainState& st, const DatasetIndex& data, const TrainConfig& cfg,
              const TrainHooks& hooks) {
    MAN_CHECK(cfg.batch > 0 && cfg.patch > 0, "train: batch and patch must be positive");
    MAN_CHECK(data.scale == model.config.scale, "train: dataset scale ", data.scale,
              " does not match model scale ", model.config.scale);
    LossLog log;
    for (i64 it = st.iter + 1; it <= cfg.total_iters; ++it) {
        const double lr = cosine_lr(it - 1, cfg.total_iters, cfg.lr0, cfg.lr_min);
        PatchBatch batch = sample_batch(data, cfg.batch, cfg.patch, st.rng);
        Tape tape;
        auto sr = man_forward(batch.lr, model, &tape);
        auto loss = l1_loss(sr, batch.hr, &tape);
        const double loss_v = loss.item();
        if (!std::isfinite(loss_v))
            throw NumericError(cat("training aborted: non-finite loss ", loss_v, " at iteration ",
                                   it, " (lr=", lr, ")"));
        tape.backward(loss);
        adam_step(model, st.adam, lr, cfg.grad_clip);
        zero_grads(model);
        st.iter = it;
        log.push_back({it, loss_v, lr});
        if (cfg.checkpoint_every > 0 && hooks.on_checkpoint &&
            (it % cfg.checkpoint_every == 0 || it == cfg.total_iters))
            hooks.on_checkpoint(it, model, st);
        if (cfg.eval_every > 0 && hooks.on_eval && it % cfg.eval_every == 0)
            hooks.on_eval(it, model);
        if (hooks.should_stop && hooks.should_stop(it)) break;
    }
    return log;
}

}  // namespace man
