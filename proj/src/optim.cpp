#include "prood/optim.hpp"

#include <cmath>

#include "prood/error.hpp"

namespace prood {

namespace {

template <typename T>
std::vector<BasicTensor<T>> zeros_for(const BasicNetwork<T>& net) {
  return zero_grads(net);
}

std::vector<bool> checked_mask(std::vector<bool> mask, std::size_t n) {
  if (mask.empty()) mask.assign(n, false);
  if (mask.size() != n) throw ConfigError("weight-decay exclusion mask length mismatch");
  return mask;
}

}  // namespace

template <typename T>
OptimizerState<T> make_adam(const BasicNetwork<T>& net, double lr, double weight_decay,
                            std::vector<bool> decay_exclude) {
  AdamState<T> adam;
  adam.m = zeros_for(net);
  adam.v = zeros_for(net);
  adam.lr = lr;
  const std::size_t n = adam.m.size();
  return {std::move(adam), weight_decay, checked_mask(std::move(decay_exclude), n)};
}

template <typename T>
OptimizerState<T> make_sgd(const BasicNetwork<T>& net, double lr, double momentum,
                           double weight_decay, std::vector<bool> decay_exclude) {
  SgdMomentumState<T> sgd;
  sgd.buffer = zeros_for(net);
  sgd.lr = lr;
  sgd.momentum = momentum;
  const std::size_t n = sgd.buffer.size();
  return {std::move(sgd), weight_decay, checked_mask(std::move(decay_exclude), n)};
}

template <typename T>
void set_learning_rate(OptimizerState<T>& state, double lr) {
  std::visit([lr](auto& s) { s.lr = lr; }, state.method);
}

template <typename T>
double learning_rate(const OptimizerState<T>& state) {
  return std::visit([](const auto& s) { return s.lr; }, state.method);
}

template <typename T>
void optimizer_step(OptimizerState<T>& state, BasicNetwork<T>& net, const ParamGrads<T>& grads) {
  auto params = net.parameters();
  if (params.size() != grads.size() || params.size() != state.decay_exclude.size()) {
    throw ShapeError("optimizer: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError("optimizer: gradient shape mismatch for parameter " + std::to_string(i));
    }
  }
  const double lr = learning_rate(state);
  if (state.weight_decay != 0.0) {
    const T scale = static_cast<T>(1.0 - lr * state.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (state.decay_exclude[i]) continue;
      for (auto& v : *params[i]) v *= scale;
    }
  }

  if (auto* adam = std::get_if<AdamState<T>>(&state.method)) {
    adam->t += 1;
    const double bc1 = 1.0 - std::pow(adam->beta1, static_cast<double>(adam->t));
    const double bc2 = 1.0 - std::pow(adam->beta2, static_cast<double>(adam->t));
    const T b1 = static_cast<T>(adam->beta1), b2 = static_cast<T>(adam->beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(adam->eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& m = adam->m[i];
      auto& v = adam->v[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T{1} - b1) * g[j];
        v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
        p[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
      }
    }
  } else {
    auto& sgd = std::get<SgdMomentumState<T>>(state.method);
    const T mu = static_cast<T>(sgd.momentum);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& buf = sgd.buffer[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        buf[j] = sgd.t == 0 ? g[j] : mu * buf[j] + g[j];
        p[j] -= eta * buf[j];
      }
    }
    sgd.t += 1;
  }
}

double step_schedule(double base, double factor, const std::vector<int>& drop_epochs, int epoch) {
  double lr = base;
  for (int d : drop_epochs) {
    if (epoch >= d) lr *= factor;
  }
  return lr;
}

std::vector<int> drop_epochs_at(int epochs, const std::vector<double>& fractions) {
  std::vector<int> out;
  for (double f : fractions) out.push_back(static_cast<int>(std::lround(f * epochs)));
  return out;
}

#define PROOD_INSTANTIATE(T)                                                                  \
  template OptimizerState<T> make_adam(const BasicNetwork<T>&, double, double,               \
                                       std::vector<bool>);                                   \
  template OptimizerState<T> make_sgd(const BasicNetwork<T>&, double, double, double,        \
                                      std::vector<bool>);                                    \
  template void set_learning_rate(OptimizerState<T>&, double);                               \
  template double learning_rate(const OptimizerState<T>&);                                   \
  template void optimizer_step(OptimizerState<T>&, BasicNetwork<T>&, const ParamGrads<T>&);

PROOD_INSTANTIATE(float)
PROOD_INSTANTIATE(double)

}  // namespace prood
