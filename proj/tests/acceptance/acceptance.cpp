// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Criteria 2, 3, 5 and 6 share one desk-scale training run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "../support.hpp"
#include "prood/asymptotic.hpp"
#include "prood/attacks.hpp"
#include "prood/checkpoint.hpp"
#include "prood/discriminator.hpp"
#include "prood/experiment.hpp"
#include "prood/ibp.hpp"
#include "prood/joint.hpp"
#include "prood/metrics.hpp"

using namespace prood;
using namespace testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor64 scaled(const Tensor64& x, double beta) {
  Tensor64 y = x;
  for (auto& v : y) v *= beta;
  return y;
}

// Points of the clipped box: every corner for small d, then uniform samples.
std::vector<Tensor64> box_points(const IntervalTensor64& box, std::size_t n_uniform, Rng& rng) {
  std::vector<Tensor64> pts;
  const std::size_t d = box.lower.size();
  if (d <= 10) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
      Tensor64 c = box.lower;
      for (std::size_t i = 0; i < d; ++i) {
        if (mask >> i & 1) c[i] = box.upper[i];
      }
      pts.push_back(c);
    }
  }
  for (std::size_t s = 0; s < n_uniform; ++s) {
    Tensor64 u = box.lower;
    for (std::size_t i = 0; i < d; ++i) u[i] = uniform(rng, box.lower[i], box.upper[i]);
    pts.push_back(u);
  }
  return pts;
}

// ---- 1 -------------------------------------------------------------------

Outcome interval_soundness() {
  Rng rng(1001);
  double worst = -1e300;
  std::size_t nets = 0, points = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t d = 2 + rng() % 9;
    std::vector<std::size_t> hidden(1 + rng() % 3);
    for (auto& h : hidden) h = 1 + rng() % 8;
    const bool negexp = trial % 3 == 0;
    const auto net = random_mlp(rng, d, hidden, negexp ? 1 : 1 + rng() % 8, negexp, trial % 2 == 1);
    ++nets;
    for (int b = 0; b < 2; ++b) {
      const auto z = random_tensor(rng, {d}, 0, 1);
      const auto box = input_interval(z, ThreatModel{uniform(rng, 0.001, 0.5)});
      const auto trace = propagate(net, box);
      for (const auto& x : box_points(box, 1000, rng)) {
        const auto acts = forward(net, x);
        ++points;
        for (std::size_t l = 0; l < acts.size(); ++l) {
          for (std::size_t i = 0; i < acts[l].size(); ++i) {
            worst = std::max({worst, trace[l].lower[i] - acts[l][i], acts[l][i] - trace[l].upper[i]});
          }
        }
      }
    }
  }
  return {worst <= 1e-6, fmt("%zu networks, %zu points, max excess over bounds %.3g", nets, points, worst)};
}

// ---- 4 -------------------------------------------------------------------

struct GradientTally {
  double worst = 0.0;
  std::size_t instances = 0, skipped = 0, total = 0;

  void add(double err, const SmoothGradient& g) {
    worst = std::max(worst, err);
    skipped += g.skipped;
    total += g.grad.size();
  }
};

// Loss sum_k c_k * out_k against kink-aware central differences, parameters and input.
void check_network(Network64 net, Tensor64 x, Rng& rng, GradientTally& tally) {
  const auto c = random_tensor(rng, net.output_shape());
  auto loss = [&] {
    const auto y = logits(net, x);
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += c[k] * y[k];
    return s;
  };
  auto signature = [&] { return kink_signature(net, {x}); };
  const auto bp = backward(net, forward(net, x), c);
  auto params = net.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto numeric = numeric_gradient_smooth(*params[p], loss, signature);
    tally.add(max_relative_error(bp.params[p], numeric), numeric);
  }
  const auto numeric = numeric_gradient_smooth(x, loss, signature);
  tally.add(max_relative_error(bp.input, numeric), numeric);
  ++tally.instances;
}

Outcome gradient_checks() {
  Rng rng(1004);
  std::vector<std::pair<std::string, GradientTally>> kinds;
  auto run = [&](const std::string& name, const std::function<void(GradientTally&)>& one) {
    GradientTally t;
    for (int i = 0; i < 20; ++i) one(t);
    kinds.emplace_back(name, t);
  };
  auto rand_dim = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };

  run("fc", [&](GradientTally& t) {
    auto fc = make_fc<double>(rand_dim(1, 8), rand_dim(1, 8));
    randomize(fc.weight, rng, 0.7);
    randomize(fc.bias, rng, 0.3);
    const std::size_t in = fc.weight.shape()[1];
    check_network(Network64({in}, {fc}), random_tensor(rng, {in}), rng, t);
  });
  // Networks must end in a logit layer, so each kind sits between minimal affine layers.
  auto fc_to = [&](std::size_t in, std::size_t out) {
    auto fc = make_fc<double>(in, out);
    randomize(fc.weight, rng, 0.7);
    randomize(fc.bias, rng, 0.3);
    return fc;
  };
  auto numel = [](const Shape& s) {
    std::size_t n = 1;
    for (auto v : s) n *= v;
    return n;
  };
  run("conv", [&](GradientTally& t) {
    const std::size_t c = rand_dim(1, 3), k = rand_dim(1, 3), stride = rand_dim(1, 2), pad = rng() % 2;
    const std::size_t h = rand_dim(k, 7), w = rand_dim(k, 7);
    auto conv = make_conv<double>(c, rand_dim(1, 3), k, stride, pad);
    randomize(conv.kernel, rng, 0.5);
    randomize(conv.bias, rng, 0.3);
    const auto flat = numel(forward_layer<double>(conv, Tensor64({c, h, w})).shape());
    check_network(Network64({c, h, w}, {conv, Flatten{}, fc_to(flat, 2)}), random_tensor(rng, {c, h, w}), rng, t);
  });
  run("relu", [&](GradientTally& t) {
    const std::size_t d = rand_dim(1, 8), m = rand_dim(1, 8);
    check_network(Network64({d}, {fc_to(d, m), ReLU{}, fc_to(m, 2)}), random_tensor(rng, {d}), rng, t);
  });
  run("leaky_relu", [&](GradientTally& t) {
    const std::size_t d = rand_dim(1, 8), m = rand_dim(1, 8);
    check_network(Network64({d}, {fc_to(d, m), LeakyReLU{uniform(rng, 0.01, 0.3)}, fc_to(m, 2)}),
                  random_tensor(rng, {d}), rng, t);
  });
  run("avgpool", [&](GradientTally& t) {
    const std::size_t win = rand_dim(1, 3), c = rand_dim(1, 3), h = win * rand_dim(1, 3), w = win * rand_dim(1, 3);
    const std::size_t flat = c * (h / win) * (w / win);
    check_network(Network64({c, h, w}, {AvgPool{win}, Flatten{}, fc_to(flat, 2)}), random_tensor(rng, {c, h, w}),
                  rng, t);
  });
  run("flatten", [&](GradientTally& t) {
    const Shape s = {rand_dim(1, 3), rand_dim(1, 4), rand_dim(1, 4)};
    check_network(Network64(s, {Flatten{}, fc_to(numel(s), 2)}), random_tensor(rng, s), rng, t);
  });
  run("negexp_head", [&](GradientTally& t) {
    const std::size_t d = rand_dim(1, 8);
    auto head = make_negexp_head<double>(d, rand_dim(1, 2));
    randomize(head.h, rng, 0.5);
    randomize(head.bias, rng, 0.5);
    check_network(Network64({d}, {head}), random_tensor(rng, {d}), rng, t);
  });
  run("convnet", [&](GradientTally& t) {
    const bool head = rng() % 2;
    check_network(random_convnet(rng, 2, 6, 6, head ? 1 : 3, head), random_tensor(rng, {2, 6, 6}, 0, 1), rng, t);
  });
  run("leaky_mlp", [&](GradientTally& t) {
    check_network(random_mlp(rng, 5, {6, 4}, 3, false, true), random_tensor(rng, {5}), rng, t);
  });

  run("robust_binary_loss", [&](GradientTally& t) {
    Network64 g = t.instances % 2 ? random_mlp(rng, 5, {6, 4}, 1, true, t.instances % 4 == 1)
                                  : random_convnet(rng, 1, 6, 6, 1, true);
    std::vector<Tensor64> in, out;
    for (int i = 0; i < 3; ++i) in.push_back(random_tensor(rng, g.input_shape(), 0, 1));
    for (int i = 0; i < 3; ++i) out.push_back(random_tensor(rng, g.input_shape(), 0, 1));
    const double eps = uniform(rng, 0.0, 0.05), kappa = uniform(rng, 0.5, 1.0);
    const auto l = binary_robust_loss(g, in, out, eps, kappa);
    auto signature = [&] {
      std::vector<IntervalTensor64> boxes;
      for (const auto& z : out) boxes.push_back(input_interval(z, ThreatModel{eps}));
      return kink_signature(g, in, boxes);
    };
    auto params = g.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto numeric = numeric_gradient_smooth(
          *params[p], [&] { return binary_robust_loss(g, in, out, eps, kappa).loss; }, signature);
      t.add(max_relative_error(l.grads[p], numeric), numeric);
    }
    ++t.instances;
  });
  run("semi_joint_loss", [&](GradientTally& t) {
    Network64 f = t.instances % 2 ? random_mlp(rng, 5, {6}, 3, false, t.instances % 4 == 1)
                                  : random_convnet(rng, 1, 6, 6, 4, false);
    const std::size_t k = f.output_shape()[0];
    std::vector<Tensor64> in, out;
    std::vector<int> labels;
    std::vector<double> q_in, q_out;
    for (int i = 0; i < 3; ++i) {
      in.push_back(random_tensor(rng, f.input_shape(), 0, 1));
      out.push_back(random_tensor(rng, f.input_shape(), 0, 1));
      labels.push_back(static_cast<int>(rng() % k));
      q_in.push_back(uniform(rng, 0.05, 1.0));
      q_out.push_back(uniform(rng, 0.0, 0.95));
    }
    const auto l = semi_joint_loss(f, in, labels, q_in, out, q_out);
    std::vector<Tensor64> points = in;
    points.insert(points.end(), out.begin(), out.end());
    auto params = f.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto numeric = numeric_gradient_smooth(
          *params[p], [&] { return semi_joint_loss(f, in, labels, q_in, out, q_out).loss; },
          [&] { return kink_signature(f, points); });
      t.add(max_relative_error(l.grads[p], numeric), numeric);
    }
    ++t.instances;
  });

  bool pass = true;
  double worst = 0;
  std::size_t skipped = 0, total = 0;
  std::string per_kind;
  for (const auto& [name, t] : kinds) {
    pass = pass && t.instances >= 20 && t.worst < 1e-4;
    worst = std::max(worst, t.worst);
    skipped += t.skipped;
    total += t.total;
    per_kind += fmt(" %s=%.1e", name.c_str(), t.worst);
  }
  // Coordinates straddling a kink are excluded; too many would hollow out the check.
  pass = pass && skipped * 4 <= total;
  return {pass, fmt("max relative error %.2e over %zu kinds x 20 instances, %zu of %zu coordinates skipped at kinks;",
                    worst, kinds.size(), skipped, total) +
                    per_kind};
}

// ---- attack auditing (7, and the desk attacks of 2) ------------------------

// Wraps a confidence and checks that every point the attack queries is feasible.
class AuditedConfidence : public ConfidenceFunction {
 public:
  AuditedConfidence(const ConfidenceFunction& inner, const Tensor64& z, double eps)
      : inner_(inner), z_(z), eps_(eps) {}
  double value(const Tensor64& u) const override {
    audit(u);
    return inner_.value(u);
  }
  double value_and_grad(const Tensor64& u, Tensor64& grad) const override {
    audit(u);
    return inner_.value_and_grad(u, grad);
  }
  std::size_t queries() const { return queries_; }
  std::size_t infeasible() const { return infeasible_; }

 private:
  void audit(const Tensor64& u) const {
    ++queries_;
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (u[i] < 0.0 || u[i] > 1.0 || std::abs(u[i] - z_[i]) > eps_ + 1e-12) {
        ++infeasible_;
        return;
      }
    }
  }
  const ConfidenceFunction& inner_;
  const Tensor64& z_;
  double eps_;
  mutable std::size_t queries_ = 0, infeasible_ = 0;
};

struct AttackAudit {
  std::size_t attacks = 0, restarts = 0, queries = 0, infeasible = 0, non_monotone = 0;

  AttackResult run(const ConfidenceFunction& conf, const Tensor64& z, const ThreatModel& tm,
                   const AttackConfig& cfg) {
    AuditedConfidence audited(conf, z, tm.epsilon);
    auto res = pgd_max_conf(audited, z, tm, cfg);
    ++attacks;
    queries += audited.queries();
    infeasible += audited.infeasible();
    for (std::size_t i = 0; i < res.u.size(); ++i) {
      if (res.u[i] < 0.0 || res.u[i] > 1.0 || std::abs(res.u[i] - z[i]) > tm.epsilon + 1e-12) ++infeasible;
    }
    double overall = res.clean_conf;
    for (const auto& r : res.restarts) {
      ++restarts;
      bool ok = r.best.empty() || r.best.front() >= r.start_conf;
      for (std::size_t i = 1; i < r.best.size(); ++i) ok = ok && r.best[i] >= r.best[i - 1];
      if (!r.best.empty()) ok = ok && r.final_conf == r.best.back();
      overall = std::max(overall, r.final_conf);
      if (!ok) ++non_monotone;
    }
    if (res.conf != overall || res.conf < res.clean_conf) ++non_monotone;
    return res;
  }

  bool clean() const { return attacks > 0 && infeasible == 0 && non_monotone == 0; }
  std::string summary() const {
    return fmt("%zu attacks, %zu restarts, %zu queried points: %zu infeasible, %zu monotonicity failures",
               attacks, restarts, queries, infeasible, non_monotone);
  }
};

AttackAudit g_audit;

// ---- 7 -------------------------------------------------------------------

double grid_max(const ConfidenceFunction& f, const Tensor64& z, double eps) {
  const double x0 = std::max(0.0, z[0] - eps), x1 = std::min(1.0, z[0] + eps);
  const double y0 = std::max(0.0, z[1] - eps), y1 = std::min(1.0, z[1] + eps);
  double best = -1e300;
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      best = std::max(best, f.value(Tensor64({2}, {x0 + (x1 - x0) * i / 400.0, y0 + (y1 - y0) * j / 400.0})));
    }
  }
  return best;
}

Outcome attack_toys() {
  Rng rng(1007);
  double worst = 0;
  std::size_t toys = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto z = random_tensor(rng, {2}, 0, 1);
    const double eps = uniform(rng, 0.05, 0.3);
    AttackConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial);
    std::unique_ptr<ConfidenceFunction> conf;
    JointModel64 jm;
    Network64 f;
    // Two Gaussian bumps, a small joint model and a plain classifier in turn.
    double ax = uniform(rng, 0, 1), ay = uniform(rng, 0, 1), bx = uniform(rng, 0, 1), by = uniform(rng, 0, 1);
    double ah = uniform(rng, 0.3, 0.6), bh = uniform(rng, 0.6, 1.0), width = uniform(rng, 0.05, 0.2);
    auto bump = [=](const Tensor64& u, double cx, double cy) {
      const double dx = u[0] - cx, dy = u[1] - cy;
      return std::exp(-(dx * dx + dy * dy) / (width * width));
    };
    if (trial % 3 == 0) {
      conf = std::make_unique<LambdaConfidence>(
          [=](const Tensor64& u) { return ah * bump(u, ax, ay) + bh * bump(u, bx, by); },
          [=](const Tensor64& u, Tensor64& g) {
            g = Tensor64({2});
            for (const auto& [cx, cy, h] : {std::tuple{ax, ay, ah}, std::tuple{bx, by, bh}}) {
              const double s = -2.0 * h * bump(u, cx, cy) / (width * width);
              g[0] += s * (u[0] - cx);
              g[1] += s * (u[1] - cy);
            }
          });
    } else if (trial % 3 == 1) {
      jm = {random_mlp(rng, 2, {8}, 3), random_mlp(rng, 2, {8, 6}, 1, true), uniform(rng, -1.0, 3.0)};
      conf = std::make_unique<JointConfidence>(jm);
    } else {
      f = random_mlp(rng, 2, {8, 8}, 3, false, true);
      conf = std::make_unique<ClassifierConfidence>(f);
    }
    const auto res = g_audit.run(*conf, z, ThreatModel{eps}, cfg);
    worst = std::max(worst, std::abs(res.conf - grid_max(*conf, z, eps)));
    ++toys;
  }
  return {worst <= 1e-3,
          fmt("%zu toys, max |PGD - 401x401 grid max| %.2e", toys, worst)};
}

// ---- 8 -------------------------------------------------------------------

Outcome auc_oracle() {
  Rng rng(1008);
  double worst = 0;
  std::size_t tie_heavy = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 300, m = 1 + rng() % 300;
    const int levels = trial % 2 ? 0 : 1 + static_cast<int>(rng() % 10);
    auto draw = [&](std::size_t len) {
      std::vector<double> v(len);
      for (auto& x : v) x = levels > 0 ? std::floor(uniform(rng, 0, levels)) / levels : uniform(rng, 0, 1);
      return v;
    };
    const auto a = draw(n), b = draw(m);
    tie_heavy += levels > 0;
    for (Ties t : {Ties::strict, Ties::half}) worst = std::max(worst, std::abs(auc(a, b, t) - auc_pairwise(a, b, t)));
  }
  return {worst <= 1e-12, fmt("1000 pairs (%zu tie-heavy), both tie rules, max difference %.2e", tie_heavy, worst)};
}

// ---- desk run (2, 3, 5, 6) -------------------------------------------------

struct DeskRun {
  ExperimentConfig cfg;
  fs::path dir;
  TrainJointOutput joint;
  double disc_seconds = 0, joint_seconds = 0;
};

const DeskRun& desk() {
  static std::optional<DeskRun> run;
  if (run) return *run;
  DeskRun r;
  r.cfg = load_experiment_config(fs::path(PROOD_SOURCE_DIR) / "configs" / "desk.json");
  r.dir = fs::current_path() / "acceptance_runs" / "desk";
  fs::remove_all(r.dir);
  fs::create_directories(r.dir);
  auto t0 = Clock::now();
  const auto disc = cmd_train_disc(r.cfg, r.dir);
  r.disc_seconds = seconds_since(t0);
  t0 = Clock::now();
  r.joint = cmd_train_joint(r.cfg, disc.checkpoint, r.dir);
  r.joint_seconds = seconds_since(t0);
  std::printf("  desk run in %s: train-disc %.0f s, train-joint %.0f s\n", r.dir.c_str(), r.disc_seconds,
              r.joint_seconds);
  std::fflush(stdout);
  run = std::move(r);
  return *run;
}

JointModel64 desk_model() {
  return joint_from_checkpoint(read_checkpoint(desk().joint.selected_checkpoint)).cast<double>();
}

// ---- 2 -------------------------------------------------------------------

Outcome confidence_bound() {
  const auto& d = desk();
  const auto jm = desk_model();
  const auto data = load_task(d.cfg);
  const ThreatModel tm{d.cfg.epsilon};
  Rng rng(1002);
  const JointConfidence conf(jm);
  const auto t0 = Clock::now();
  double worst = -1e300;
  std::size_t checked = 0, violations = 0;
  const std::size_t n_dist = data.eval_out.size();
  for (std::size_t s = 0; s < 200; ++s) {
    const auto z = data.eval_out[s % n_dist].sample64(s / n_dist);
    const double ub = conf_upper_bound(jm, z, tm);
    const auto box = input_interval(z, tm);
    auto check = [&](const Tensor64& u) {
      const double excess = predict(jm, u).conf - ub;
      worst = std::max(worst, excess);
      violations += excess > 1e-6;
      ++checked;
    };
    // Half of the perturbations sit on random vertices of the box, where ReLU nets peak.
    for (int i = 0; i < 1000; ++i) {
      Tensor64 u = box.lower;
      for (std::size_t j = 0; j < u.size(); ++j) {
        u[j] = i % 2 ? uniform(rng, box.lower[j], box.upper[j]) : (rng() % 2 ? box.upper[j] : box.lower[j]);
      }
      check(u);
    }
    AttackConfig attack = d.cfg.attack;
    attack.seed = d.cfg.attack.seed + s;
    check(g_audit.run(conf, z, tm, attack).u);
  }
  return {violations == 0, fmt("%zu points over 200 OOD samples, %zu violations, max conf - bound %.3g (%.0f s)",
                               checked, violations, worst, seconds_since(t0))};
}

// ---- 3 -------------------------------------------------------------------

bool orderings_hold(const EvalReport& rep, std::string& text) {
  bool ok = true;
  for (const auto& r : rep.rows) {
    ok = ok && r.gauc <= r.aauc && r.aauc <= r.auc && r.fpr <= r.afpr && r.afpr <= r.gfpr;
    text += fmt(" %s: AUC %.3f AAUC %.3f GAUC %.3f, FPR %.3f AFPR %.3f GFPR %.3f;", r.out_distribution.c_str(),
                r.auc, r.aauc, r.gauc, r.fpr, r.afpr, r.gfpr);
  }
  return ok && !rep.rows.empty();
}

Outcome metric_orderings() {
  const auto& d = desk();
  const auto t0 = Clock::now();
  std::string text;
  const auto rep = cmd_eval(d.cfg, d.joint.selected_checkpoint, d.dir);
  const bool ok = orderings_hold(rep, text);
  std::size_t strict = 0;
  for (const auto& r : rep.rows) strict += r.auc > r.aauc;
  return {ok, fmt("eval %.0f s, %zu of %zu rows with AUC > AAUC;", seconds_since(t0), strict, rep.rows.size()) + text};
}

// ---- 5 -------------------------------------------------------------------

Outcome asymptotic_confidence() {
  const auto& d = desk();
  const auto t0 = Clock::now();
  const auto probe = cmd_probe(d.cfg, d.joint.selected_checkpoint, d.dir);
  std::size_t random = 0, searched = 0, active = 0, failed = 0;
  double worst_p = 0, worst_gap = 0, worst_ip = -1e300;
  for (const auto& c : probe.checks) {
    (c.kind == "random" ? random : searched)++;
    if (!c.report.ux_nonzero) continue;
    ++active;
    const auto& r = c.report;
    worst_p = std::max(worst_p, r.p_in_at_limit);
    worst_gap = std::max(worst_gap, r.conf_gap_at_limit);
    worst_ip = std::max(worst_ip, r.inner_product);
    failed += !(r.p_in_at_limit < 1e-6 && r.conf_gap_at_limit < 1e-3 && r.inner_product < 0.0);
  }
  // The searched directions are also scaled out directly, independently of the report.
  const auto jm = desk_model();
  const double inv_k = 1.0 / static_cast<double>(jm.num_classes());
  std::size_t direct_failed = 0;
  for (const auto& dir : probe.search.directions) {
    if (!check_asymptotic_confidence(jm, dir).ux_nonzero) continue;
    const auto p = predict(jm, scaled(dir, kLimitScale));
    direct_failed += !(in_probability(jm, scaled(dir, kLimitScale)) < 1e-6 && p.conf - inv_k < 1e-3);
  }
  const bool pass = random >= 100 && searched == 10 && failed == 0 && direct_failed == 0 && probe.all_passed;
  return {pass, fmt("%zu random + %zu searched directions, %zu with Ux != 0, %zu failures; max p_in %.2e, "
                    "max conf gap %.2e, max slope %.3g (%.0f s)",
                    random, searched, active, failed + direct_failed, worst_p, worst_gap, worst_ip,
                    seconds_since(t0))};
}

// ---- 6 -------------------------------------------------------------------

Outcome end_to_end() {
  const auto& d = desk();
  const auto& j = d.joint;
  const auto& syn = d.cfg.synthetic;
  bool pass = d.cfg.task_type == "synthetic" && syn.num_classes == 3 && syn.height == 16 && syn.width == 16 &&
              d.cfg.epsilon == 0.01;

  // Argmax invariance, counted in hits on the in-distribution test set.
  const auto jm = desk_model();
  const auto data = load_task(d.cfg);
  std::size_t joint_hits = 0, plain_hits = 0;
  for (std::size_t i = 0; i < data.in_test.size(); ++i) {
    const auto x = data.in_test.sample64(i);
    const auto y = static_cast<std::size_t>(data.in_test.labels[i]);
    joint_hits += predict(jm, x).argmax == y;
    plain_hits += softmax_conf(logits(jm.classifier, x)).argmax == y;
  }

  // The selection rule recomputed from the sweep rows.
  std::optional<std::size_t> expect;
  for (std::size_t i = 0; i < j.rows.size(); ++i) {
    if (j.rows[i].auc > j.baseline_auc && (!expect || j.rows[i].gauc > j.rows[*expect].gauc)) expect = i;
  }
  const bool beat = expect.has_value();
  if (!expect) {
    expect = 0;
    for (std::size_t i = 1; i < j.rows.size(); ++i) {
      if (j.rows[i].auc > j.rows[*expect].auc) expect = i;
    }
  }
  const bool rule_ok = j.selection.index == *expect && j.selection.beat_baseline == beat &&
                       j.selection.delta == j.rows[*expect].delta && jm.delta == j.selection.delta;

  pass = pass && j.disc_gauc > 0.2 && joint_hits == plain_hits && rule_ok &&
         d.disc_seconds + d.joint_seconds < 1800.0;
  return {pass, fmt("discriminator GAUC %.3f (AUC %.3f); hits joint %zu = classifier %zu of %zu; selected delta %g "
                    "(row %zu, beats baseline AUC %.3f: %s, rule %s); training %.0f s",
                    j.disc_gauc, j.disc_auc, joint_hits, plain_hits, data.in_test.size(), j.selection.delta,
                    j.selection.index, j.baseline_auc, beat ? "yes" : "no", rule_ok ? "agrees" : "DISAGREES",
                    d.disc_seconds + d.joint_seconds)};
}

// ---- 9 -------------------------------------------------------------------

Outcome determinism() {
  const auto cfg = load_experiment_config(fs::path(PROOD_SOURCE_DIR) / "configs" / "tiny.json");
  const auto root = fs::current_path() / "acceptance_runs";
  std::vector<fs::path> dirs = {root / "tiny_a", root / "tiny_b"};
  std::string orderings;
  bool ordered = true;
  for (const auto& dir : dirs) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto disc = cmd_train_disc(cfg, dir);
    const auto joint = cmd_train_joint(cfg, disc.checkpoint, dir);
    std::string text;
    ordered = ordered && orderings_hold(cmd_eval(cfg, joint.selected_checkpoint, dir), text);
  }
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto other = dirs[1] / entry.path().filename();
    if (!fs::exists(other) || read_file_bytes(entry.path()) != read_file_bytes(other)) {
      ++differ;
      std::printf("  differs: %s\n", entry.path().filename().c_str());
    }
  }
  std::size_t files_b = 0;
  for (const auto& entry : fs::directory_iterator(dirs[1])) files_b += entry.is_regular_file();
  const bool pass = files > 0 && differ == 0 && files == files_b && ordered;
  return {pass, fmt("%zu output files compared byte for byte across two runs, %zu differ; report orderings %s",
                    files, differ, ordered ? "hold" : "FAIL")};
}

}  // namespace

// With arguments, only the listed criterion numbers run.
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "interval bounds are sound", interval_soundness},
      {2, "joint confidence bound", confidence_bound},
      {3, "metric orderings", metric_orderings},
      {4, "gradient checks", gradient_checks},
      {5, "asymptotic confidence", asymptotic_confidence},
      {6, "end-to-end desk run", end_to_end},
      {7, "attack correctness",
       [] {
         auto toys = attack_toys();
         // Feasibility and monotonicity over every attack run so far, desk attacks included.
         return Outcome{toys.pass && g_audit.clean(), toys.detail + "; " + g_audit.summary()};
       }},
      {8, "auc oracle equivalence", auc_oracle},
      {9, "determinism", determinism},
  };

  int failures = 0, ran = 0;
  const auto start = Clock::now();
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed in %.0f s\n", ran - failures, ran, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
