#pragma once

#include <functional>
#include <vector>

#include "man/common.hpp"
#include "man/tensor.hpp"

namespace man {

// Records backward rules in forward order; backward() replays them in
// reverse, accumulating into every tensor's gradient buffer exactly once
// per recorded use. Repeated backward() calls without zeroing grads
// accumulate (gradients are summed, never assigned).
template <class T>
class TapeT {
public:
    TapeT() : epoch_(next_epoch()) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    // Marks an op output as produced under this tape's current epoch.
    void stamp(TensorT<T>& t) {
        t.set_tape_epoch(epoch_);
        produced_.push_back(t);
    }

    void backward(TensorT<T>& loss) {
        MAN_CHECK(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar tensor");
        if (loss.tape_epoch() != epoch_)
            throw std::logic_error("backward: loss was not produced on this tape (tape was reset?)");
        // Intermediate grads are scratch space for the replay; only leaf
        // grads persist, so repeated calls accumulate leaves exactly once
        // per call.
        for (auto& t : produced_) t.zero_grad();
        loss.grad()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    // Drops all recorded rules and invalidates tensors produced so far.
    void clear() {
        ops_.clear();
        produced_.clear();
        epoch_ = next_epoch();
    }

    size_t size() const { return ops_.size(); }
    u64 epoch() const { return epoch_; }

private:
    static u64 next_epoch() {
        static u64 counter = 0;
        return ++counter;
    }

    std::vector<std::function<void()>> ops_;
    std::vector<TensorT<T>> produced_;
    u64 epoch_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace man
