#pragma once

#include <type_traits>
#include <vector>

#include "prood/layers.hpp"
#include "prood/tensor.hpp"

namespace prood {

/// activations[0] is the input, activations[i + 1] the output of layer i;
/// activations.back() are the logits.
template <typename T>
using Activations = std::vector<BasicTensor<T>>;

/// Per-parameter gradients, aligned with BasicNetwork::parameters().
template <typename T>
using ParamGrads = std::vector<BasicTensor<T>>;

template <typename T>
BasicTensor<T> forward_layer(const Layer<T>& layer, const BasicTensor<T>& x);

/// Forward pass of one sample. Throws ShapeError if x does not match the input shape.
template <typename T>
Activations<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& x);

/// Logits only.
template <typename T>
BasicTensor<T> logits(const BasicNetwork<T>& net, const BasicTensor<T>& x);

template <typename T>
ParamGrads<T> zero_grads(const BasicNetwork<T>& net);

/// Reverse-mode pass for one sample. Accumulates parameter gradients into
/// `grads` (may be null) and returns the gradient with respect to the input.
template <typename T>
BasicTensor<T> backward_into(const BasicNetwork<T>& net, const Activations<T>& acts,
                             const BasicTensor<T>& logit_grad,
                             std::type_identity_t<ParamGrads<T>>* grads);

template <typename T>
struct Backprop {
  ParamGrads<T> params;
  BasicTensor<T> input;
};

template <typename T>
Backprop<T> backward(const BasicNetwork<T>& net, const Activations<T>& acts,
                     const BasicTensor<T>& logit_grad);

template <typename T>
struct Softmax {
  BasicTensor<T> probs;
  T conf;
  std::size_t argmax;
};

/// Max-subtracted softmax and its maximum component. Requires at least two logits.
template <typename T>
Softmax<T> softmax_conf(const BasicTensor<T>& logits);

/// Logistic function without overflow for large |t|.
template <typename T>
T sigmoid(T t);

/// log(1 + e^t) computed as max(t, 0) + log1p(e^-|t|).
template <typename T>
T softplus(T t);

}  // namespace prood
