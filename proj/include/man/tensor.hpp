#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "man/common.hpp"

namespace man {

// Dense 4-D (batch, channel, height, width) shape. Vectors that live on
// the channel axis (biases, layer-norm affine, per-channel scales) use
// (1, c, 1, 1).
struct Shape {
    i64 n = 0, c = 0, h = 0, w = 0;

    i64 numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const { return cat("(", n, ",", c, ",", h, ",", w, ")"); }
};

inline Shape channel_vec(i64 c) { return Shape{1, c, 1, 1}; }

// Shared-ownership dense tensor of a single scalar type. Values are
// immutable by convention once a forward op produced them; the gradient
// buffer is the only part mutated afterwards (by tape replay).
template <class T>
class TensorT {
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // allocated on first use, same length as data
        bool requires_grad = false;
        u64 tape_epoch = 0;  // epoch of the tape that produced this tensor (0 = leaf)
    };

public:
    using value_type = T;

    TensorT() = default;
    explicit TensorT(Shape s, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        MAN_CHECK(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0, "negative tensor dimension ", s.str());
        impl_->shape = s;
        impl_->data.assign(static_cast<size_t>(s.numel()), fill);
        impl_->requires_grad = requires_grad;
    }

    static TensorT from_data(Shape s, std::vector<T> values) {
        TensorT t;
        t.impl_ = std::make_shared<Impl>();
        MAN_CHECK(static_cast<i64>(values.size()) == s.numel(), "data length ", values.size(),
                  " does not match shape ", s.str());
        t.impl_->shape = s;
        t.impl_->data = std::move(values);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    i64 numel() const { return impl_->shape.numel(); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::span<T> values() { return impl_->data; }
    std::span<const T> values() const { return impl_->data; }

    T& at(i64 n, i64 c, i64 h, i64 w) {
        const Shape& s = impl_->shape;
        return impl_->data[static_cast<size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
    }
    T at(i64 n, i64 c, i64 h, i64 w) const { return const_cast<TensorT*>(this)->at(n, c, h, w); }

    // Scalar convenience for loss tensors.
    T item() const {
        MAN_CHECK(numel() == 1, "item() on non-scalar tensor ", shape().str());
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Gradient buffer, zero-initialized on first access.
    T* grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad.data();
    }
    std::span<const T> grad_view() const {
        return impl_->grad;  // empty if backward never reached this tensor
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    u64 tape_epoch() const { return impl_->tape_epoch; }
    void set_tape_epoch(u64 e) { impl_->tape_epoch = e; }

    bool same_object(const TensorT& o) const { return impl_ == o.impl_; }

    TensorT clone() const {
        TensorT t = from_data(shape(), impl_->data);
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(impl_->data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(impl_->data[i]);
        auto t = TensorT<U>::from_data(shape(), std::move(out));
        t.set_requires_grad(impl_->requires_grad);
        return t;
    }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::shared_ptr<Impl> impl_;

    template <class U>
    friend class TensorT;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace man
