#pragma once

#include <variant>
#include <vector>

#include "prood/layers.hpp"
#include "prood/nn.hpp"

namespace prood {

template <typename T>
struct AdamState {
  std::vector<BasicTensor<T>> m, v;
  long t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct SgdMomentumState {
  std::vector<BasicTensor<T>> buffer;
  long t = 0;
  double lr = 0.1;
  double momentum = 0.9;
};

/// Optimizer with decoupled weight decay: p <- p * (1 - lr * weight_decay) is
/// applied before the gradient update to every parameter not excluded.
template <typename T>
struct OptimizerState {
  std::variant<AdamState<T>, SgdMomentumState<T>> method;
  double weight_decay = 0.0;
  std::vector<bool> decay_exclude;
};

template <typename T>
OptimizerState<T> make_adam(const BasicNetwork<T>& net, double lr, double weight_decay,
                            std::vector<bool> decay_exclude = {});

template <typename T>
OptimizerState<T> make_sgd(const BasicNetwork<T>& net, double lr, double momentum,
                           double weight_decay, std::vector<bool> decay_exclude = {});

template <typename T>
void set_learning_rate(OptimizerState<T>& state, double lr);

template <typename T>
double learning_rate(const OptimizerState<T>& state);

/// One update of `net`'s parameters from gradients aligned with net.parameters().
template <typename T>
void optimizer_step(OptimizerState<T>& state, BasicNetwork<T>& net, const ParamGrads<T>& grads);

/// Piecewise-constant schedule: base * factor^(number of drop epochs <= epoch).
double step_schedule(double base, double factor, const std::vector<int>& drop_epochs, int epoch);

/// Drop epochs at the given fractions of `epochs`, rounded to the nearest epoch.
std::vector<int> drop_epochs_at(int epochs, const std::vector<double>& fractions);

}  // namespace prood
