#pragma once

#include <vector>

#include "man/tape.hpp"
#include "man/tensor.hpp"

namespace man {

// Convolution parameters. Stride is fixed at 1 and padding at "same"
// (zero padding); the effective kernel extent (k-1)*dilation+1 must be
// odd so the padding is symmetric.
template <class T>
struct ConvParamsT {
    TensorT<T> weight;  // (c_out, c_in/groups, k, k)
    TensorT<T> bias;    // (1, c_out, 1, 1); undefined tensor = no bias
    int dilation = 1;
    int groups = 1;

    i64 out_channels() const { return weight.shape().n; }
    i64 in_channels() const { return weight.shape().c * groups; }
    i64 kernel() const { return weight.shape().h; }
};

using ConvParams = ConvParamsT<float>;
using ConvParams64 = ConvParamsT<double>;

// All ops allocate a fresh output, propagate requires_grad from their
// inputs, and record a backward rule on `tape` when given one. A null
// tape is inference mode.

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& p, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, int r, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> add(const TensorT<T>& x, const TensorT<T>& y, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> mul(const TensorT<T>& x, const TensorT<T>& y, TapeT<T>* tape = nullptr);

// Per-channel scaling by a (1,c,1,1) vector (the learnable lambdas).
template <class T>
TensorT<T> channel_scale(const TensorT<T>& x, const TensorT<T>& lambda, TapeT<T>* tape = nullptr);

// Exact erf-form GELU.
template <class T>
TensorT<T> gelu(const TensorT<T>& x, TapeT<T>* tape = nullptr);

// Mean absolute deviation over all elements; returns a (1,1,1,1) tensor.
template <class T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target, TapeT<T>* tape = nullptr);

// Sum of all elements; returns a (1,1,1,1) tensor.
template <class T>
TensorT<T> sum(const TensorT<T>& x, TapeT<T>* tape = nullptr);

// Splits the channel axis into n equal groups / concatenates groups back
// in order. Used by the multi-scale channel split.
template <class T>
std::vector<TensorT<T>> channel_split(const TensorT<T>& x, int n_groups, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> channel_concat(const std::vector<TensorT<T>>& parts, TapeT<T>* tape = nullptr);

}  // namespace man
