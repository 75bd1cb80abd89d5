#include "prood/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "format.hpp"
#include "prood/error.hpp"
#include "prood/nn.hpp"
#include "prood/rng.hpp"

namespace prood {

void AttackConfig::validate() const {
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("attack momentum must be in [0,1)");
  if (!(step_init > 0.0 && backtrack_factor > 0.0 && growth_factor > 0.0)) {
    throw ConfigError("attack step size and factors must be positive");
  }
  if (n_uniform_starts < 0 || n_gauss_starts < 0 || extra_restarts < 0) {
    throw ConfigError("attack start counts must be nonnegative");
  }
  if (!(gauss_sigma >= 0.0)) throw ConfigError("gauss_sigma must be nonnegative");
  if (!(min_step > 0.0)) throw ConfigError("min_step must be positive");
}

double JointConfidence::value(const Tensor64& u) const {
  return predict(jm_, u).conf;
}

double JointConfidence::value_and_grad(const Tensor64& u, Tensor64& grad) const {
  const auto acts_f = forward(jm_.classifier, u);
  const auto acts_g = forward(jm_.discriminator, u);
  const auto sm = softmax_conf(acts_f.back());
  const double k = static_cast<double>(sm.probs.size());
  const double q = sigmoid(acts_g.back()[0] + jm_.delta);
  const double pm = sm.conf;

  Tensor64 gf(acts_f.back().shape());
  for (std::size_t j = 0; j < gf.size(); ++j) {
    gf[j] = q * pm * ((j == sm.argmax ? 1.0 : 0.0) - sm.probs[j]);
  }
  grad = backward_into(jm_.classifier, acts_f, gf, nullptr);
  const Tensor64 gg({1}, (pm - 1.0 / k) * q * (1.0 - q));
  axpy(1.0, backward_into(jm_.discriminator, acts_g, gg, nullptr), grad);
  return pm * q + (1.0 - q) / k;
}

double ClassifierConfidence::value(const Tensor64& u) const {
  return softmax_conf(logits(f_, u)).conf;
}

double ClassifierConfidence::value_and_grad(const Tensor64& u, Tensor64& grad) const {
  const auto acts = forward(f_, u);
  const auto sm = softmax_conf(acts.back());
  Tensor64 gy(acts.back().shape());
  for (std::size_t j = 0; j < gy.size(); ++j) {
    gy[j] = sm.conf * ((j == sm.argmax ? 1.0 : 0.0) - sm.probs[j]);
  }
  grad = backward_into(f_, acts, gy, nullptr);
  return sm.conf;
}

double DiscriminatorConfidence::value(const Tensor64& u) const {
  return sigmoid(logits(g_, u)[0] + delta_);
}

double DiscriminatorConfidence::value_and_grad(const Tensor64& u, Tensor64& grad) const {
  const auto acts = forward(g_, u);
  const double p = sigmoid(acts.back()[0] + delta_);
  grad = backward_into(g_, acts, Tensor64({1}, p * (1.0 - p)), nullptr);
  return p;
}

Tensor64 project_to_ball(const Tensor64& u, const Tensor64& z, const ThreatModel& tm) {
  if (u.shape() != z.shape()) throw ShapeError("projection: shape mismatch");
  Tensor64 out(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double lo = std::max(z[i] - tm.epsilon, tm.domain_low);
    const double hi = std::min(z[i] + tm.epsilon, tm.domain_high);
    out[i] = std::clamp(u[i], lo, hi);
  }
  return out;
}

Tensor64 decontrast_start(const Tensor64& z, const ThreatModel& tm) {
  const double grey = 0.5 * (tm.domain_low + tm.domain_high);
  return project_to_ball(Tensor64(z.shape(), grey), z, tm);
}

namespace {

struct Start {
  std::string kind;
  Tensor64 u;
};

std::vector<Start> attack_starts(const Tensor64& z, const ThreatModel& tm, const AttackConfig& cfg) {
  std::vector<Start> starts;
  starts.push_back({"clean", z});
  starts.push_back({"decontrast", decontrast_start(z, tm)});
  std::uint64_t index = 0;
  auto uniform_start = [&](const char* kind) {
    Rng rng(derive_seed(cfg.seed, index++));
    Tensor64 u(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) u[i] = z[i] + uniform(rng, -tm.epsilon, tm.epsilon);
    starts.push_back({kind, project_to_ball(u, z, tm)});
  };
  for (int r = 0; r < cfg.n_uniform_starts; ++r) uniform_start("uniform");
  for (int r = 0; r < cfg.n_gauss_starts; ++r) {
    Rng rng(derive_seed(cfg.seed, index++));
    Tensor64 u(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) u[i] = z[i] + cfg.gauss_sigma * standard_normal(rng);
    starts.push_back({"gaussian", project_to_ball(u, z, tm)});
  }
  for (int r = 0; r < cfg.extra_restarts; ++r) uniform_start("restart");
  return starts;
}

}  // namespace

AttackResult pgd_max_conf(const ConfidenceFunction& conf, const Tensor64& z, const ThreatModel& tm,
                          const AttackConfig& cfg) {
  cfg.validate();
  if (!(tm.epsilon >= 0.0)) throw ConfigError("threat model epsilon must be nonnegative");
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(z[i] >= tm.domain_low && z[i] <= tm.domain_high)) {
      throw ConfigError("attack input component " + std::to_string(i) + " outside the domain");
    }
  }

  AttackResult result;
  result.clean_conf = conf.value(z);
  result.u = z;
  result.conf = result.clean_conf;

  const auto starts = attack_starts(z, tm, cfg);
  for (std::size_t r = 0; r < starts.size(); ++r) {
    Tensor64 best = starts[r].u;
    double best_conf = conf.value(best);
    RestartRecord rec{static_cast<int>(r), starts[r].kind, best_conf, best_conf, {}};
    rec.best.reserve(static_cast<std::size_t>(cfg.steps));

    Tensor64 velocity(z.shape()), grad(z.shape());
    double step = cfg.step_init;
    bool grad_fresh = false;
    for (int t = 0; t < cfg.steps && tm.epsilon > 0.0; ++t) {
      if (!grad_fresh) {
        conf.value_and_grad(best, grad);
        grad_fresh = true;
      }
      double l1 = 0.0;
      for (double g : grad) l1 += std::abs(g);
      if (!(l1 > 0.0) || !std::isfinite(l1)) break;
      for (std::size_t i = 0; i < z.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i] / l1;
      }
      Tensor64 cand = best;
      const double len = step * tm.epsilon;
      for (std::size_t i = 0; i < z.size(); ++i) {
        if (velocity[i] > 0.0) {
          cand[i] += len;
        } else if (velocity[i] < 0.0) {
          cand[i] -= len;
        }
      }
      cand = project_to_ball(cand, z, tm);
      const double c = conf.value(cand);
      if (c > best_conf) {
        best = std::move(cand);
        best_conf = c;
        grad_fresh = false;
        step = std::min(step * cfg.growth_factor, 1.0);
      } else {
        step *= cfg.backtrack_factor;
      }
      rec.best.push_back(best_conf);
      if (step < cfg.min_step) break;
    }
    rec.final_conf = best_conf;
    if (best_conf > result.conf) {
      result.conf = best_conf;
      result.u = best;
    }
    result.restarts.push_back(std::move(rec));
  }
  return result;
}

void write_attack_transcript(const std::filesystem::path& path,
                             const std::vector<TranscriptRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "sample_id,restart_id,final_conf\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.restart_id << ',' << detail::num(r.final_conf) << '\n';
  }
}

}  // namespace prood
