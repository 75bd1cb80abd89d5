#include "prood/asymptotic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "format.hpp"
#include "prood/checkpoint.hpp"
#include "prood/error.hpp"
#include "prood/nn.hpp"
#include "prood/parallel.hpp"
#include "prood/rng.hpp"

namespace prood {

namespace {

bool is_activation(const Layer<double>& l) {
  return std::holds_alternative<ReLU>(l) || std::holds_alternative<LeakyReLU>(l);
}

Tensor64 scaled(const Tensor64& x, double beta) {
  Tensor64 y = x;
  for (auto& v : y) v *= beta;
  return y;
}

double l2_norm(const Tensor64& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

Tensor64 linf_normalized(Tensor64 x) {
  const double m = max_abs(x);
  if (!(m > 0.0)) throw ConfigError("direction must be nonzero");
  for (auto& v : x) v /= m;
  return x;
}

}  // namespace

ActivationPattern activation_pattern(const Network64& net, const Tensor64& x) {
  const auto acts = forward(net, x);
  ActivationPattern p;
  for (std::size_t li = 0; li < net.num_layers(); ++li) {
    if (!is_activation(net.layer(li))) continue;
    std::vector<bool> on(acts[li].size());
    for (std::size_t i = 0; i < on.size(); ++i) on[i] = acts[li][i] > 0.0;
    p.push_back(std::move(on));
  }
  return p;
}

Tensor64 forward_frozen(const Network64& net, const ActivationPattern& pattern, const Tensor64& x,
                        bool with_bias) {
  if (x.shape() != net.input_shape()) throw ShapeError("forward_frozen: input shape mismatch");
  Tensor64 cur = x;
  std::size_t act = 0;
  for (std::size_t li = 0; li + 1 < net.num_layers(); ++li) {
    const auto& layer = net.layer(li);
    if (is_activation(layer)) {
      if (act >= pattern.size() || pattern[act].size() != cur.size()) {
        throw ShapeError("activation pattern does not match the network");
      }
      const double slope =
          std::holds_alternative<LeakyReLU>(layer) ? std::get<LeakyReLU>(layer).slope : 0.0;
      for (std::size_t i = 0; i < cur.size(); ++i) {
        if (!pattern[act][i]) cur[i] *= slope;
      }
      ++act;
    } else if (!with_bias && is_affine(layer)) {
      Layer<double> stripped = layer;
      std::visit(
          [](auto& l) {
            if constexpr (requires { l.bias; }) l.bias.fill(0.0);
          },
          stripped);
      cur = forward_layer(stripped, cur);
    } else {
      cur = forward_layer(layer, cur);
    }
  }
  return cur;
}

LinearRegion extract_region(const Network64& g, const Tensor64& x, double beta) {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(max_abs(x) > 0.0)) throw ConfigError("direction must be nonzero");
  auto pattern = activation_pattern(g, scaled(x, beta));
  if (activation_pattern(g, scaled(x, 2.0 * beta)) != pattern ||
      activation_pattern(g, scaled(x, 10.0 * beta)) != pattern) {
    throw RegionNotReached("activation pattern differs across scales " + detail::num(beta) +
                           ", " + detail::num(2.0 * beta) + ", " + detail::num(10.0 * beta));
  }
  const std::size_t d = x.size();
  LinearRegion r;
  r.d = forward_frozen(g, pattern, Tensor64(x.shape()), true);
  const std::size_t m = r.d.size();
  r.d.reshape({m});
  r.U = Tensor64({m, d});
  Tensor64 e(x.shape());
  for (std::size_t i = 0; i < d; ++i) {
    e[i] = 1.0;
    const auto col = forward_frozen(g, pattern, e, false);
    e[i] = 0.0;
    for (std::size_t j = 0; j < m; ++j) r.U[j * d + i] = col[j];
  }
  r.beta_star = beta;
  r.pattern = std::move(pattern);
  return r;
}

LinearRegion find_region(const Network64& g, const Tensor64& x, double beta_start,
                         double beta_max) {
  for (double beta = beta_start; beta <= beta_max; beta *= 2.0) {
    try {
      return extract_region(g, x, beta);
    } catch (const RegionNotReached&) {
    }
  }
  throw RegionNotReached("activation pattern did not stabilize for beta in [" +
                         detail::num(beta_start) + ", " + detail::num(beta_max) + "]");
}

AsymptoticReport check_asymptotic_confidence(const JointModel64& jm, const Tensor64& x) {
  jm.validate();
  const auto region = find_region(jm.discriminator, x);
  const auto& head = std::get<NegExpHead<double>>(jm.discriminator.layers().back());
  const Tensor64 w = head.weight();
  const std::size_t m = region.d.size(), d = x.size();

  AsymptoticReport rep;
  rep.beta_star = region.beta_star;
  for (std::size_t j = 0; j < m; ++j) {
    double ux = 0.0;
    for (std::size_t i = 0; i < d; ++i) ux += region.U[j * d + i] * x[i];
    if (ux > 1e-8) rep.ux_nonzero = true;
    rep.inner_product += w[j] * ux;
  }
  const Tensor64 far = scaled(x, kLimitScale);
  rep.logit_at_limit = logits(jm.discriminator, far)[0] + jm.delta;
  rep.p_in_at_limit = sigmoid(rep.logit_at_limit);
  const auto pred = predict(jm, far);
  rep.conf_gap_at_limit = pred.conf - 1.0 / static_cast<double>(jm.num_classes());
  rep.limit_ok = rep.ux_nonzero && rep.inner_product < 0.0 && rep.p_in_at_limit < 1e-6 &&
                 rep.conf_gap_at_limit < 1e-3;
  return rep;
}

std::vector<Tensor64> random_directions(std::size_t n, const Shape& shape, std::uint64_t seed) {
  std::vector<Tensor64> out;
  for (std::size_t k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    Tensor64 x(shape);
    do {
      for (auto& v : x) v = uniform(rng, -0.5, 0.5);
    } while (!(max_abs(x) > 0.0));
    out.push_back(linf_normalized(std::move(x)));
  }
  return out;
}

DirectionSearchResult adversarial_direction_search(const JointModel64& jm,
                                                   const DirectionSearchConfig& cfg) {
  jm.validate();
  if (cfg.n_directions == 0) throw ConfigError("direction search needs at least one direction");
  for (const auto& s : cfg.stages) {
    if (!(s.radius > 0.0) || s.steps < 0 || !(s.step_size > 0.0)) {
      throw ConfigError("invalid sphere stage");
    }
  }
  const auto& g = jm.discriminator;
  const Shape shape = g.input_shape();
  DirectionSearchResult res;
  res.directions.resize(cfg.n_directions);
  res.final_logit.resize(cfg.n_directions);
  std::vector<double> radius_error(cfg.n_directions, 0.0);

  parallel_for(cfg.n_directions, [&](std::size_t k) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    Tensor64 x(shape);
    do {
      for (auto& v : x) v = standard_normal(rng);
    } while (!(l2_norm(x) > 0.0));
    auto to_sphere = [](Tensor64& y, double r) {
      const double n = l2_norm(y);
      for (auto& v : y) v *= r / n;
    };
    for (const auto& stage : cfg.stages) {
      to_sphere(x, stage.radius);
      for (int t = 0; t < stage.steps; ++t) {
        const auto acts = forward(g, x);
        const auto grad = backward_into(g, acts, Tensor64({1}, 1.0), nullptr);
        axpy(stage.step_size, grad, x);
        if (!(l2_norm(x) > 0.0)) break;
        to_sphere(x, stage.radius);
        radius_error[k] =
            std::max(radius_error[k], std::abs(l2_norm(x) - stage.radius) / stage.radius);
      }
    }
    res.final_logit[k] = logits(g, x)[0] + jm.delta;
    res.directions[k] = linf_normalized(std::move(x));
  });
  res.max_radius_error = *std::max_element(radius_error.begin(), radius_error.end());

  for (double alpha : cfg.alphas) {
    ScaleCurvePoint p{alpha, 0.0, 0.0};
    for (const auto& dir : res.directions) {
      const auto pred = predict(jm, scaled(dir, alpha));
      p.max_p_in = std::max(p.max_p_in, pred.p_in);
      p.max_conf = std::max(p.max_conf, pred.conf);
    }
    res.curve.push_back(p);
  }
  return res;
}

namespace {

template <typename Eval>
std::vector<RayRow> rays(const Shape& shape, const std::vector<Tensor64>& directions,
                         const std::vector<double>& alphas, Eval&& eval) {
  std::vector<RayRow> rows;
  for (std::size_t k = 0; k < directions.size(); ++k) {
    if (directions[k].shape() != shape) throw ShapeError("ray direction shape mismatch");
    if (!(max_abs(directions[k]) > 0.0)) throw ConfigError("ray direction must be nonzero");
    for (double alpha : alphas) {
      Tensor64 u(shape, 0.5);
      axpy(alpha, directions[k], u);
      const auto [p_in, conf] = eval(u);
      rows.push_back({k, alpha, p_in, conf});
    }
  }
  return rows;
}

}  // namespace

std::vector<RayRow> ray_confidence(const JointModel64& jm, const std::vector<Tensor64>& directions,
                                   const std::vector<double>& alphas) {
  jm.validate();
  return rays(jm.classifier.input_shape(), directions, alphas, [&](const Tensor64& u) {
    const auto p = predict(jm, u);
    return std::pair{p.p_in, p.conf};
  });
}

std::vector<RayRow> ray_confidence(const Network64& f, const std::vector<Tensor64>& directions,
                                   const std::vector<double>& alphas) {
  return rays(f.input_shape(), directions, alphas, [&](const Tensor64& u) {
    return std::pair{1.0, softmax_conf(logits(f, u)).conf};
  });
}

std::vector<RaySummary> summarize_rays(const std::vector<RayRow>& rows) {
  std::map<double, std::vector<const RayRow*>> by_alpha;
  for (const auto& r : rows) by_alpha[r.alpha].push_back(&r);
  std::vector<RaySummary> out;
  for (const auto& [alpha, group] : by_alpha) {
    RaySummary s{alpha, 0.0, 0.0, 0.0, 0.0};
    for (const auto* r : group) {
      s.mean_conf += r->conf / static_cast<double>(group.size());
      s.mean_p_in += r->p_in / static_cast<double>(group.size());
      s.max_conf = std::max(s.max_conf, r->conf);
      s.max_p_in = std::max(s.max_p_in, r->p_in);
    }
    out.push_back(s);
  }
  return out;
}

void write_ray_csv(const std::filesystem::path& path, const std::vector<RayRow>& rows) {
  std::ostringstream out;
  out << "direction_id,alpha,p_in,conf\n";
  for (const auto& r : rows) {
    out << r.direction_id << ',' << detail::num(r.alpha) << ',' << detail::num(r.p_in) << ','
        << detail::num(r.conf) << '\n';
  }
  write_file_bytes(path, out.str());
}

std::vector<RayRow> read_ray_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::string line;
  if (!std::getline(in, line) || line != "direction_id,alpha,p_in,conf") {
    throw FormatError(path.string() + ": unexpected header");
  }
  std::vector<RayRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') ||
        !std::getline(ls, d)) {
      throw FormatError(path.string() + ": malformed line " + std::to_string(lineno));
    }
    auto number = [&](const std::string& text) {
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (text.empty() || *end != '\0') {
        throw FormatError(path.string() + ": malformed number on line " + std::to_string(lineno));
      }
      return v;
    };
    rows.push_back({static_cast<std::size_t>(number(a)), number(b), number(c), number(d)});
  }
  return rows;
}

}  // namespace prood
