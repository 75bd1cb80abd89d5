#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "prood/ibp.hpp"
#include "prood/layers.hpp"
#include "prood/nn.hpp"
#include "prood/rng.hpp"
#include "prood/tensor.hpp"

namespace testing {

using namespace prood;

inline Tensor64 random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(shape);
  for (auto& v : t) v = uniform(rng, lo, hi);
  return t;
}

inline void randomize(Tensor64& t, Rng& rng, double scale) {
  for (auto& v : t) v = scale * standard_normal(rng);
}

/// Random fully connected net: in_dim -> hidden... -> out, ReLU between layers.
/// With negexp the last layer is a scalar NegExpHead.
inline Network64 random_mlp(Rng& rng, std::size_t in_dim, const std::vector<std::size_t>& hidden,
                            std::size_t out_dim, bool negexp = false, bool leaky = false) {
  std::vector<Layer<double>> layers;
  std::size_t prev = in_dim;
  for (std::size_t h : hidden) {
    auto fc = make_fc<double>(prev, h);
    randomize(fc.weight, rng, 1.0 / std::sqrt(static_cast<double>(prev)));
    randomize(fc.bias, rng, 0.3);
    layers.push_back(fc);
    if (leaky) {
      layers.push_back(LeakyReLU{0.1});
    } else {
      layers.push_back(ReLU{});
    }
    prev = h;
  }
  if (negexp) {
    auto head = make_negexp_head<double>(prev);
    randomize(head.h, rng, 0.5);
    randomize(head.bias, rng, 0.5);
    layers.push_back(head);
  } else {
    auto fc = make_fc<double>(prev, out_dim);
    randomize(fc.weight, rng, 1.0 / std::sqrt(static_cast<double>(prev)));
    randomize(fc.bias, rng, 0.3);
    layers.push_back(fc);
  }
  return Network64({in_dim}, std::move(layers));
}

/// Small convolutional net on a C x H x W input exercising every layer kind.
inline Network64 random_convnet(Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                                std::size_t out_dim, bool negexp) {
  auto conv1 = make_conv<double>(c, 3, 3, 1, 1);
  randomize(conv1.kernel, rng, 0.4);
  randomize(conv1.bias, rng, 0.2);
  auto conv2 = make_conv<double>(3, 2, 3, 2, 1);
  randomize(conv2.kernel, rng, 0.4);
  randomize(conv2.bias, rng, 0.2);
  std::vector<Layer<double>> layers = {conv1, LeakyReLU{0.1}, AvgPool{2}, conv2, ReLU{}, Flatten{}};
  const std::size_t flat = 2 * ((h / 2 - 1) / 2 + 1) * ((w / 2 - 1) / 2 + 1);
  if (negexp) {
    auto head = make_negexp_head<double>(flat);
    randomize(head.h, rng, 0.5);
    randomize(head.bias, rng, 0.5);
    layers.push_back(head);
  } else {
    auto fc = make_fc<double>(flat, out_dim);
    randomize(fc.weight, rng, 0.4);
    randomize(fc.bias, rng, 0.2);
    layers.push_back(fc);
  }
  return Network64({c, h, w}, std::move(layers));
}

/// Largest entrywise relative error |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const Tensor64& analytic, const Tensor64& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

/// Central differences of f with respect to every entry of t.
inline Tensor64 numeric_gradient(Tensor64& t, const std::function<double()>& f, double h = 1e-5) {
  Tensor64 g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double old = t[i];
    t[i] = old + h;
    const double up = f();
    t[i] = old - h;
    const double down = f();
    t[i] = old;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Sign pattern of every rectifier input, for points and for interval bounds.
/// Central differences are only meaningful where this pattern is constant.
inline std::vector<char> kink_signature(const Network64& net, const std::vector<Tensor64>& points,
                                        const std::vector<IntervalTensor64>& boxes = {}) {
  std::vector<char> sig;
  auto is_rect = [&](std::size_t l) {
    return std::holds_alternative<ReLU>(net.layer(l)) || std::holds_alternative<LeakyReLU>(net.layer(l));
  };
  for (const auto& x : points) {
    const auto acts = forward(net, x);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      if (!is_rect(l)) continue;
      for (double v : acts[l]) sig.push_back(v > 0);
    }
  }
  for (const auto& box : boxes) {
    const auto trace = propagate(net, box);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      if (!is_rect(l)) continue;
      for (double v : trace[l].lower) sig.push_back(v > 0);
      for (double v : trace[l].upper) sig.push_back(v > 0);
    }
  }
  return sig;
}

struct SmoothGradient {
  Tensor64 grad;
  std::vector<bool> valid;  // false where the stencil crosses a kink
  std::size_t skipped = 0;
};

/// Central differences that skip coordinates whose stencil changes the kink signature.
inline SmoothGradient numeric_gradient_smooth(Tensor64& t, const std::function<double()>& f,
                                              const std::function<std::vector<char>()>& signature,
                                              double h = 1e-5) {
  SmoothGradient out{Tensor64(t.shape()), std::vector<bool>(t.size(), true), 0};
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double old = t[i];
    const auto base = signature();
    t[i] = old + h;
    const double up = f();
    const bool same_up = signature() == base;
    t[i] = old - h;
    const double down = f();
    const bool same_down = signature() == base;
    t[i] = old;
    out.grad[i] = (up - down) / (2.0 * h);
    if (!same_up || !same_down) {
      out.valid[i] = false;
      ++out.skipped;
    }
  }
  return out;
}

inline double max_relative_error(const Tensor64& analytic, const SmoothGradient& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!numeric.valid[i]) continue;
    const double a = analytic[i], n = numeric.grad[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("prood_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
