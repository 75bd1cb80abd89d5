#pragma once

#include <vector>

#include "prood/layers.hpp"
#include "prood/nn.hpp"
#include "prood/tensor.hpp"

namespace prood {

/// l-infinity ball of radius epsilon intersected with the pixel box [domain_low, domain_high]^d.
struct ThreatModel {
  double epsilon = 0.0;
  double domain_low = 0.0;
  double domain_high = 1.0;
};

template <typename T>
struct BasicIntervalTensor {
  BasicTensor<T> lower;
  BasicTensor<T> upper;

  const Shape& shape() const { return lower.shape(); }
};

using IntervalTensor = BasicIntervalTensor<float>;
using IntervalTensor64 = BasicIntervalTensor<double>;

/// bounds[0] is the input box, bounds[i + 1] the enclosure after layer i.
template <typename T>
using IntervalTrace = std::vector<BasicIntervalTensor<T>>;

/// [max(z - eps, low), min(z + eps, high)]. Throws ConfigError if z leaves the domain
/// or epsilon is negative.
template <typename T>
BasicIntervalTensor<T> input_interval(const BasicTensor<T>& z, const ThreatModel& tm);

/// Affine layers use upper = W+ u + W- l + b and lower = W+ l + W- u + b;
/// activations and pooling are monotone and act on each bound separately.
template <typename T>
BasicIntervalTensor<T> propagate_layer(const BasicIntervalTensor<T>& iv, const Layer<T>& layer);

template <typename T>
IntervalTrace<T> propagate(const BasicNetwork<T>& net, const BasicIntervalTensor<T>& input);

/// Interval of the logits only.
template <typename T>
BasicIntervalTensor<T> logit_bounds(const BasicNetwork<T>& net, const BasicIntervalTensor<T>& input);

/// Sound upper bound on the scalar output of a NegExpHead network over the threat ball of z.
template <typename T>
T upper_logit(const BasicNetwork<T>& g, const BasicTensor<T>& z, const ThreatModel& tm);

/// Gradients of a loss depending on the final bounds, given d loss / d lower and
/// d loss / d upper of the logits. Parameter gradients are accumulated into `grads`
/// (may be null); returns the gradients with respect to the input bounds.
template <typename T>
BasicIntervalTensor<T> interval_backward(const BasicNetwork<T>& net, const IntervalTrace<T>& trace,
                                         const BasicTensor<T>& grad_lower,
                                         const BasicTensor<T>& grad_upper, ParamGrads<T>* grads);

}  // namespace prood
