#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "prood/ibp.hpp"
#include "prood/joint.hpp"
#include "prood/tensor.hpp"

namespace prood {

struct AttackConfig {
  int steps = 200;
  double momentum = 0.9;
  /// Initial step length as a fraction of epsilon.
  double step_init = 0.1;
  double backtrack_factor = 0.5;
  double growth_factor = 1.1;
  int n_uniform_starts = 3;
  int n_gauss_starts = 3;
  double gauss_sigma = 1e-4;
  int extra_restarts = 5;
  double min_step = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Scalar confidence to be maximized over the threat ball.
class ConfidenceFunction {
 public:
  virtual ~ConfidenceFunction() = default;
  virtual double value(const Tensor64& u) const = 0;
  /// Returns the value and writes its gradient with respect to u.
  virtual double value_and_grad(const Tensor64& u, Tensor64& grad) const = 0;
};

/// Maximum class probability of a joint model.
class JointConfidence : public ConfidenceFunction {
 public:
  explicit JointConfidence(const JointModel64& jm) : jm_(jm) {}
  double value(const Tensor64& u) const override;
  double value_and_grad(const Tensor64& u, Tensor64& grad) const override;

 private:
  const JointModel64& jm_;
};

/// Maximum softmax probability of a plain classifier.
class ClassifierConfidence : public ConfidenceFunction {
 public:
  explicit ClassifierConfidence(const Network64& f) : f_(f) {}
  double value(const Tensor64& u) const override;
  double value_and_grad(const Tensor64& u, Tensor64& grad) const override;

 private:
  const Network64& f_;
};

/// sigmoid(g(u) + delta) of a discriminator.
class DiscriminatorConfidence : public ConfidenceFunction {
 public:
  DiscriminatorConfidence(const Network64& g, double delta) : g_(g), delta_(delta) {}
  double value(const Tensor64& u) const override;
  double value_and_grad(const Tensor64& u, Tensor64& grad) const override;

 private:
  const Network64& g_;
  double delta_;
};

/// Confidence given by callables, for toy models.
class LambdaConfidence : public ConfidenceFunction {
 public:
  using ValueFn = std::function<double(const Tensor64&)>;
  using GradFn = std::function<void(const Tensor64&, Tensor64&)>;
  LambdaConfidence(ValueFn value, GradFn grad) : value_(std::move(value)), grad_(std::move(grad)) {}
  double value(const Tensor64& u) const override { return value_(u); }
  double value_and_grad(const Tensor64& u, Tensor64& grad) const override {
    grad_(u, grad);
    return value_(u);
  }

 private:
  ValueFn value_;
  GradFn grad_;
};

/// Projection of the grey image 0.5 onto the threat ball of z.
Tensor64 decontrast_start(const Tensor64& z, const ThreatModel& tm);

/// Projection of u onto the threat ball of z.
Tensor64 project_to_ball(const Tensor64& u, const Tensor64& z, const ThreatModel& tm);

struct RestartRecord {
  int restart_id;
  std::string start;        // "clean", "decontrast", "uniform", "gaussian", "restart"
  double start_conf;
  double final_conf;
  std::vector<double> best;  // best-so-far confidence after each iteration
};

struct AttackResult {
  Tensor64 u;
  double conf;
  double clean_conf;
  std::vector<RestartRecord> restarts;
};

/// Momentum PGD with backtracking from every configured start, the clean point
/// included. The step direction is sign(v) with v the momentum average of
/// l1-normalized gradients; a step is kept only if it beats the best-so-far
/// confidence, which then grows the step length, otherwise the length shrinks.
AttackResult pgd_max_conf(const ConfidenceFunction& conf, const Tensor64& z, const ThreatModel& tm,
                          const AttackConfig& cfg);

struct TranscriptRow {
  std::size_t sample_id;
  int restart_id;
  double final_conf;
};

/// CSV with header sample_id,restart_id,final_conf.
void write_attack_transcript(const std::filesystem::path& path,
                             const std::vector<TranscriptRow>& rows);

}  // namespace prood
