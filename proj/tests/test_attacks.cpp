#include <cmath>
#include <memory>
#include <tuple>

#include "doctest.h"
#include "prood/attacks.hpp"
#include "prood/checkpoint.hpp"
#include "prood/error.hpp"
#include "support.hpp"

using namespace prood;
using namespace testing;

namespace {

double linf(const Tensor64& a, const Tensor64& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool feasible(const Tensor64& u, const Tensor64& z, double eps) {
  for (double v : u) {
    if (v < 0.0 || v > 1.0) return false;
  }
  return linf(u, z) <= eps + 1e-9;
}

// Two Gaussian bumps of different heights on the unit square.
struct TwoBumps {
  double ax, ay, ah, bx, by, bh, width;

  double operator()(const Tensor64& u) const {
    return ah * bump(u, ax, ay) + bh * bump(u, bx, by);
  }
  double bump(const Tensor64& u, double cx, double cy) const {
    const double dx = u[0] - cx, dy = u[1] - cy;
    return std::exp(-(dx * dx + dy * dy) / (width * width));
  }
  void grad(const Tensor64& u, Tensor64& g) const {
    g = Tensor64({2});
    for (const auto& [cx, cy, h] : {std::tuple{ax, ay, ah}, std::tuple{bx, by, bh}}) {
      const double s = -2.0 * h * bump(u, cx, cy) / (width * width);
      g[0] += s * (u[0] - cx);
      g[1] += s * (u[1] - cy);
    }
  }
};

double grid_max(const std::function<double(const Tensor64&)>& f, const Tensor64& z, double eps) {
  const double x0 = std::max(0.0, z[0] - eps), x1 = std::min(1.0, z[0] + eps);
  const double y0 = std::max(0.0, z[1] - eps), y1 = std::min(1.0, z[1] + eps);
  double best = -1e300;
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      best = std::max(best, f(Tensor64({2}, {x0 + (x1 - x0) * i / 400.0, y0 + (y1 - y0) * j / 400.0})));
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("decontrast start") {
  const Tensor64 grey({4}, 0.5);
  CHECK(decontrast_start(grey, ThreatModel{0.1}) == grey);
  const auto s = decontrast_start(Tensor64({3}, {0.0, 0.45, 1.0}), ThreatModel{0.01});
  CHECK(s[0] == doctest::Approx(0.01));
  CHECK(s[1] == doctest::Approx(0.46));
  CHECK(s[2] == doctest::Approx(0.99));
  CHECK(decontrast_start(Tensor64({1}, {0.47}), ThreatModel{0.1})[0] == 0.5);
}

TEST_CASE("decontrast start is the closest ball point to grey") {
  Rng rng(90);
  for (int trial = 0; trial < 200; ++trial) {
    const auto z = random_tensor(rng, {2}, 0, 1);
    const double eps = uniform(rng, 0.0, 0.3);
    const auto s = decontrast_start(z, ThreatModel{eps});
    CHECK(feasible(s, z, eps));
    const Tensor64 grey({2}, 0.5);
    double best = 1e300;
    const double x0 = std::max(0.0, z[0] - eps), x1 = std::min(1.0, z[0] + eps);
    const double y0 = std::max(0.0, z[1] - eps), y1 = std::min(1.0, z[1] + eps);
    for (int i = 0; i <= 100; ++i) {
      for (int j = 0; j <= 100; ++j) {
        best = std::min(best, linf(Tensor64({2}, {x0 + (x1 - x0) * i / 100.0, y0 + (y1 - y0) * j / 100.0}), grey));
      }
    }
    CHECK(linf(s, grey) <= best + 1e-12);
  }
}

TEST_CASE("flat landscape") {
  const LambdaConfidence flat([](const Tensor64&) { return 0.42; },
                              [](const Tensor64& u, Tensor64& g) { g = Tensor64(u.shape()); });
  const Tensor64 z({3}, {0.1, 0.5, 0.95});
  const auto res = pgd_max_conf(flat, z, ThreatModel{0.05}, AttackConfig{});
  CHECK(res.conf == 0.42);
  CHECK(feasible(res.u, z, 0.05));
}

TEST_CASE("zero radius returns the clean point") {
  Rng rng(91);
  const auto f = random_mlp(rng, 4, {6}, 3);
  const ClassifierConfidence conf(f);
  const auto z = random_tensor(rng, {4}, 0, 1);
  AttackConfig cfg;
  cfg.steps = 20;
  const auto res = pgd_max_conf(conf, z, ThreatModel{0.0}, cfg);
  CHECK(res.u == z);
  CHECK(res.conf == conf.value(z));
}

TEST_CASE("two-pixel attack reaches the grid maximum") {
  Rng rng(92);
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    const TwoBumps m{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0.3, 0.6),
                     uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0.6, 1.0), uniform(rng, 0.05, 0.2)};
    const LambdaConfidence conf([&](const Tensor64& u) { return m(u); },
                                [&](const Tensor64& u, Tensor64& g) { m.grad(u, g); });
    const auto z = random_tensor(rng, {2}, 0, 1);
    const double eps = uniform(rng, 0.05, 0.2);
    AttackConfig cfg;
    cfg.seed = trial;
    const auto res = pgd_max_conf(conf, z, ThreatModel{eps}, cfg);
    CHECK(feasible(res.u, z, eps));
    CHECK(std::abs(res.conf - grid_max(m, z, eps)) < 1e-3);
    CHECK(res.conf == m(res.u));
  }
}

TEST_CASE("confidence gradients match finite differences") {
  Rng rng(93);
  for (int trial = 0; trial < 10; ++trial) {
    JointModel64 jm{random_mlp(rng, 5, {7}, 3), random_mlp(rng, 5, {6}, 1, true), 1.0};
    auto u = random_tensor(rng, {5}, 0.1, 0.9);
    std::vector<std::unique_ptr<ConfidenceFunction>> fns;
    fns.push_back(std::make_unique<JointConfidence>(jm));
    fns.push_back(std::make_unique<ClassifierConfidence>(jm.classifier));
    fns.push_back(std::make_unique<DiscriminatorConfidence>(jm.discriminator, 0.5));
    for (const auto& fn : fns) {
      Tensor64 g;
      const double v = fn->value_and_grad(u, g);
      CHECK(v == doctest::Approx(fn->value(u)).epsilon(1e-12));
      const auto numeric = numeric_gradient_smooth(
          u, [&] { return fn->value(u); },
          [&] {
            auto sig = kink_signature(jm.classifier, {u});
            const auto sg = kink_signature(jm.discriminator, {u});
            sig.insert(sig.end(), sg.begin(), sg.end());
            // The winning class is also a kink of the confidence.
            sig.push_back(static_cast<char>(softmax_conf(logits(jm.classifier, u)).argmax));
            return sig;
          });
      CHECK(max_relative_error(g, numeric) < 1e-4);
    }
  }
}

TEST_CASE("attack invariants on random joint models") {
  Rng rng(94);
  AttackConfig cfg;
  cfg.steps = 60;
  for (int trial = 0; trial < 15; ++trial) {
    JointModel64 jm{random_mlp(rng, 6, {8}, 4), random_mlp(rng, 6, {8, 6}, 1, true), uniform(rng, 0, 3)};
    const auto z = random_tensor(rng, {6}, 0, 1);
    const ThreatModel tm{0.05};
    cfg.seed = trial;
    const JointConfidence conf(jm);
    const auto res = pgd_max_conf(conf, z, tm, cfg);
    CHECK(feasible(res.u, z, tm.epsilon));
    CHECK(res.clean_conf == conf.value(z));
    CHECK(res.conf >= res.clean_conf);
    CHECK(res.conf <= conf_upper_bound(jm, z, tm) + 1e-6);
    const std::size_t expected = 2 + cfg.n_uniform_starts + cfg.n_gauss_starts + cfg.extra_restarts;
    REQUIRE(res.restarts.size() == expected);
    CHECK(res.restarts[0].start == "clean");
    CHECK(res.restarts[1].start == "decontrast");
    double best = 0.0;
    for (const auto& r : res.restarts) {
      REQUIRE(!r.best.empty());
      CHECK(r.best.size() <= static_cast<std::size_t>(cfg.steps));
      CHECK(r.best.front() >= r.start_conf);
      for (std::size_t i = 1; i < r.best.size(); ++i) CHECK(r.best[i] >= r.best[i - 1]);
      CHECK(r.final_conf == r.best.back());
      best = std::max(best, r.final_conf);
    }
    CHECK(res.conf == best);
  }
}

TEST_CASE("attacks are deterministic given the seed") {
  Rng rng(95);
  const auto f = random_mlp(rng, 5, {8}, 3);
  const ClassifierConfidence conf(f);
  const auto z = random_tensor(rng, {5}, 0, 1);
  AttackConfig cfg;
  cfg.steps = 30;
  cfg.seed = 11;
  const auto a = pgd_max_conf(conf, z, ThreatModel{0.1}, cfg);
  const auto b = pgd_max_conf(conf, z, ThreatModel{0.1}, cfg);
  CHECK(a.u == b.u);
  CHECK(a.conf == b.conf);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{};
  cfg.backtrack_factor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(AttackConfig{}.validate());
}

TEST_CASE("transcript csv") {
  TempDir dir("transcript");
  write_attack_transcript(dir.path() / "t.csv", {{0, 0, 0.5}, {0, 1, 0.625}, {3, 0, 0.25}});
  CHECK(read_file_bytes(dir.path() / "t.csv") ==
        "sample_id,restart_id,final_conf\n0,0,0.5\n0,1,0.625\n3,0,0.25\n");
}

}  // TEST_SUITE
