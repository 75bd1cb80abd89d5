#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prood/data.hpp"
#include "prood/ibp.hpp"
#include "prood/layers.hpp"
#include "prood/nn.hpp"

namespace prood {

/// Classifier f mixed with the uniform distribution by the in-distribution
/// probability sigmoid(g(x) + delta) of a frozen discriminator g.
template <typename T>
struct BasicJointModel {
  BasicNetwork<T> classifier;
  BasicNetwork<T> discriminator;
  double delta = 0.0;

  std::size_t num_classes() const { return classifier.output_shape().at(0); }
  /// K >= 2, scalar NegExpHead discriminator, matching input shapes.
  void validate() const;

  template <typename U>
  BasicJointModel<U> cast() const {
    return {classifier.template cast<U>(), discriminator.template cast<U>(), delta};
  }
};

using JointModel = BasicJointModel<float>;
using JointModel64 = BasicJointModel<double>;

template <typename T>
struct Prediction {
  BasicTensor<T> probs;
  T p_in;
  T conf;
  std::size_t argmax;
};

/// probs = softmax(f(x)) * p_in + (1 - p_in) / K with p_in = sigmoid(g(x) + delta).
template <typename T>
Prediction<T> predict(const BasicJointModel<T>& jm, const BasicTensor<T>& x);

/// sigmoid(g(x) + delta).
template <typename T>
T in_probability(const BasicJointModel<T>& jm, const BasicTensor<T>& x);

/// (K - 1) / K * sigmoid(g_upper(z) + delta) + 1 / K, an upper bound on the
/// confidence of predict over the threat ball of z.
template <typename T>
T conf_upper_bound(const BasicJointModel<T>& jm, const BasicTensor<T>& z, const ThreatModel& tm);

template <typename T>
struct SemiJointLoss {
  double loss = 0.0;
  double in_loss = 0.0;
  double out_loss = 0.0;
  ParamGrads<T> grads;  // classifier parameters only
};

inline constexpr double kLogFloor = 1e-12;

/// -mean_in log(p_f(y|x) q + (1 - q)/K) - mean_out (1/K) sum_l log(p_f(l|z) q + (1 - q)/K)
/// where q is the given in-distribution probability of each sample.
template <typename T>
SemiJointLoss<T> semi_joint_loss(const BasicNetwork<T>& f,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<int>& labels, const std::vector<double>& q_in,
                                 const std::vector<BasicTensor<T>>& batch_out,
                                 const std::vector<double>& q_out);

/// The same loss with q taken from the joint model's frozen discriminator.
template <typename T>
SemiJointLoss<T> semi_joint_loss(const BasicJointModel<T>& jm,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<int>& labels,
                                 const std::vector<BasicTensor<T>>& batch_out);

struct SemiJointConfig {
  int epochs = 100;
  double lr = 0.1;
  double momentum = 0.9;
  std::vector<double> lr_drop_fractions = {0.5, 0.75, 0.9};
  double lr_drop_factor = 0.1;
  std::size_t batch_in = 128;
  std::size_t batch_out = 128;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  /// Train against q = 1 everywhere (outlier exposure) instead of the discriminator.
  bool outlier_exposure = false;

  void validate() const;
};

struct SemiJointEpochLog {
  int epoch;
  double lr;
  double in_loss;
  double out_loss;
  double total;
};

using SemiJointProgress = std::function<void(const SemiJointEpochLog&)>;

/// SGD with momentum on the classifier only; the discriminator and delta stay untouched.
JointModel train_semi_joint(JointModel jm, const SemiJointConfig& cfg, const Dataset& data_in,
                            const Dataset& data_out, std::vector<SemiJointEpochLog>* log = nullptr,
                            const SemiJointProgress& progress = {});

/// Separately trained f and g composed into one model. Throws ConfigError on a mismatch.
JointModel combine_separate(Network f, Network g, double delta);

/// Adds `delta` to the model's bias shift. Negative shifts need allow_negative.
template <typename T>
BasicJointModel<T> shift_bias(BasicJointModel<T> jm, double delta, bool allow_negative = false);

/// Output bias of g plus the shift.
template <typename T>
double effective_head_bias(const BasicJointModel<T>& jm);

struct SweepCandidate {
  double delta;
  double auc;   // on the held-out split of the training out-distribution
  double gauc;
};

struct SweepSelection {
  std::size_t index;
  double delta;
  /// False when no candidate beat the baseline AUC and the max-AUC fallback was used.
  bool beat_baseline;
};

/// Among candidates whose AUC exceeds baseline_auc, the one with the largest GAUC;
/// otherwise the one with the largest AUC. Ties go to the earlier candidate.
SweepSelection delta_sweep_select(const std::vector<SweepCandidate>& candidates,
                                  double baseline_auc);

}  // namespace prood
