#include "prood/joint.hpp"

#include <algorithm>
#include <cmath>

#include "format.hpp"
#include "prood/error.hpp"
#include "prood/optim.hpp"
#include "prood/rng.hpp"
#include "reduce.hpp"

namespace prood {

template <typename T>
void BasicJointModel<T>::validate() const {
  if (classifier.num_layers() == 0 || discriminator.num_layers() == 0) {
    throw ConfigError("joint model needs both a classifier and a discriminator");
  }
  if (classifier.output_shape().size() != 1 || num_classes() < 2) {
    throw ConfigError("classifier must output at least 2 logits");
  }
  if (!discriminator.has_negexp_head() || discriminator.output_shape() != Shape{1}) {
    throw ConfigError("discriminator must end in a scalar NegExpHead");
  }
  if (classifier.input_shape() != discriminator.input_shape()) {
    throw ConfigError("classifier input " + shape_str(classifier.input_shape()) +
                      " differs from discriminator input " +
                      shape_str(discriminator.input_shape()));
  }
  if (!std::isfinite(delta)) throw ConfigError("bias shift must be finite");
}

template <typename T>
T in_probability(const BasicJointModel<T>& jm, const BasicTensor<T>& x) {
  return sigmoid(static_cast<T>(logits(jm.discriminator, x)[0] + static_cast<T>(jm.delta)));
}

template <typename T>
Prediction<T> predict(const BasicJointModel<T>& jm, const BasicTensor<T>& x) {
  auto sm = softmax_conf(logits(jm.classifier, x));
  const T q = in_probability(jm, x);
  const T k = static_cast<T>(sm.probs.size());
  const T rest = (T{1} - q) / k;
  for (auto& p : sm.probs) p = p * q + rest;
  return {std::move(sm.probs), q, sm.conf * q + rest, sm.argmax};
}

template <typename T>
T conf_upper_bound(const BasicJointModel<T>& jm, const BasicTensor<T>& z, const ThreatModel& tm) {
  const T k = static_cast<T>(jm.num_classes());
  const T q = sigmoid(static_cast<T>(upper_logit(jm.discriminator, z, tm) + static_cast<T>(jm.delta)));
  return (k - T{1}) / k * q + T{1} / k;
}

template <typename T>
SemiJointLoss<T> semi_joint_loss(const BasicNetwork<T>& f,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<int>& labels, const std::vector<double>& q_in,
                                 const std::vector<BasicTensor<T>>& batch_out,
                                 const std::vector<double>& q_out) {
  const std::size_t n_in = batch_in.size(), n_out = batch_out.size();
  if (labels.size() != n_in || q_in.size() != n_in || q_out.size() != n_out) {
    throw ShapeError("semi-joint loss: labels/probabilities do not match batch sizes");
  }
  if (n_in == 0 && n_out == 0) throw ConfigError("semi-joint loss needs a nonempty batch");
  const std::size_t k = f.output_shape().at(0);
  const double kd = static_cast<double>(k);

  SemiJointLoss<T> out;
  out.grads = zero_grads(f);
  std::vector<double> out_terms(n_out, 0.0);
  const double in_sum = detail::accumulate_chunked(
      f, n_in + n_out, out.grads, [&](std::size_t i, ParamGrads<T>& grads) -> double {
        const bool is_in = i < n_in;
        const std::size_t j = is_in ? i : i - n_in;
        const auto acts = forward(f, is_in ? batch_in[j] : batch_out[j]);
        const auto sm = softmax_conf(acts.back());
        const double q = is_in ? q_in[j] : q_out[j];
        const double rest = (1.0 - q) / kd;
        BasicTensor<T> gy(acts.back().shape());
        double term = 0.0;
        if (is_in) {
          const int y = labels[j];
          if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw ConfigError("label " + std::to_string(y) + " out of range");
          }
          const double py = static_cast<double>(sm.probs[y]);
          const double a = py * q + rest;
          term = -std::log(std::max(a, kLogFloor));
          if (a > kLogFloor) {
            const double scale = -(q / a) * py / static_cast<double>(n_in);
            for (std::size_t c = 0; c < k; ++c) {
              const double delta_cy = static_cast<std::size_t>(y) == c ? 1.0 : 0.0;
              gy[c] = static_cast<T>(scale * (delta_cy - static_cast<double>(sm.probs[c])));
            }
          }
        } else {
          std::vector<double> ratio(k, 0.0);
          double ratio_sum = 0.0;
          for (std::size_t c = 0; c < k; ++c) {
            const double p = static_cast<double>(sm.probs[c]);
            const double a = p * q + rest;
            term -= std::log(std::max(a, kLogFloor)) / kd;
            if (a > kLogFloor) ratio[c] = p / a;
            ratio_sum += ratio[c];
          }
          const double scale = -(q / kd) / static_cast<double>(n_out);
          for (std::size_t c = 0; c < k; ++c) {
            const double p = static_cast<double>(sm.probs[c]);
            gy[c] = static_cast<T>(scale * (ratio[c] - p * ratio_sum));
          }
          out_terms[j] = term;
          term = 0.0;
        }
        backward_into(f, acts, gy, &grads);
        return term;
      });
  double out_sum = 0.0;
  for (double v : out_terms) out_sum += v;
  out.in_loss = n_in ? in_sum / static_cast<double>(n_in) : 0.0;
  out.out_loss = n_out ? out_sum / static_cast<double>(n_out) : 0.0;
  out.loss = out.in_loss + out.out_loss;
  return out;
}

template <typename T>
SemiJointLoss<T> semi_joint_loss(const BasicJointModel<T>& jm,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<int>& labels,
                                 const std::vector<BasicTensor<T>>& batch_out) {
  jm.validate();
  std::vector<double> q_in, q_out;
  for (const auto& x : batch_in) q_in.push_back(static_cast<double>(in_probability(jm, x)));
  for (const auto& z : batch_out) q_out.push_back(static_cast<double>(in_probability(jm, z)));
  return semi_joint_loss(jm.classifier, batch_in, labels, q_in, batch_out, q_out);
}

void SemiJointConfig::validate() const {
  if (epochs < 1) throw ConfigError("semi-joint epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("semi-joint lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor must be positive");
  if (batch_in == 0 || batch_out == 0) throw ConfigError("batch sizes must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
}

namespace {

std::vector<double> frozen_in_probability(const JointModel& jm, const Dataset& ds, bool ones) {
  std::vector<double> q(ds.size(), 1.0);
  if (ones) return q;
  const auto g = jm.discriminator.cast<double>();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    q[i] = sigmoid(logits(g, ds.sample64(i))[0] + jm.delta);
  }
  return q;
}

}  // namespace

JointModel train_semi_joint(JointModel jm, const SemiJointConfig& cfg, const Dataset& data_in,
                            const Dataset& data_out, std::vector<SemiJointEpochLog>* log,
                            const SemiJointProgress& progress) {
  cfg.validate();
  jm.validate();
  if (data_in.size() == 0 || data_out.size() == 0) {
    throw ConfigError("semi-joint training needs nonempty in and out datasets");
  }
  if (!data_in.labelled()) throw ConfigError("in-distribution training data must be labelled");
  if (data_in.sample_shape() != jm.classifier.input_shape() ||
      data_out.sample_shape() != jm.classifier.input_shape()) {
    throw ShapeError("dataset sample shape does not match classifier input");
  }

  // g and delta are frozen, so the in-probabilities are fixed for the whole run.
  const auto q_in_all = frozen_in_probability(jm, data_in, cfg.outlier_exposure);
  const auto q_out_all = frozen_in_probability(jm, data_out, cfg.outlier_exposure);

  auto opt = make_sgd(jm.classifier, cfg.lr, cfg.momentum, cfg.weight_decay);
  const auto drops = drop_epochs_at(cfg.epochs, cfg.lr_drop_fractions);
  const std::size_t steps = (data_in.size() + cfg.batch_in - 1) / cfg.batch_in;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_schedule(cfg.lr, cfg.lr_drop_factor, drops, epoch);
    set_learning_rate(opt, lr);
    const auto perm_in =
        permutation(data_in.size(), derive_seed(shuffle_seed, 2 * static_cast<std::uint64_t>(epoch)));
    const auto perm_out = permutation(
        data_out.size(), derive_seed(shuffle_seed, 2 * static_cast<std::uint64_t>(epoch) + 1));
    SemiJointEpochLog row{epoch, lr, 0.0, 0.0, 0.0};
    std::size_t out_cursor = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Tensor> bin, bout;
      std::vector<int> labels;
      std::vector<double> qin, qout;
      const std::size_t end = std::min(data_in.size(), (s + 1) * cfg.batch_in);
      for (std::size_t i = s * cfg.batch_in; i < end; ++i) {
        bin.push_back(data_in.sample(perm_in[i]));
        labels.push_back(data_in.labels[perm_in[i]]);
        qin.push_back(q_in_all[perm_in[i]]);
      }
      for (std::size_t i = 0; i < cfg.batch_out; ++i) {
        bout.push_back(data_out.sample(perm_out[out_cursor]));
        qout.push_back(q_out_all[perm_out[out_cursor]]);
        out_cursor = (out_cursor + 1) % data_out.size();
      }
      auto loss = semi_joint_loss(jm.classifier, bin, labels, qin, bout, qout);
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("semi-joint loss became non-finite at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(s));
      }
      optimizer_step(opt, jm.classifier, loss.grads);
      row.in_loss += loss.in_loss;
      row.out_loss += loss.out_loss;
      row.total += loss.loss;
    }
    row.in_loss /= static_cast<double>(steps);
    row.out_loss /= static_cast<double>(steps);
    row.total /= static_cast<double>(steps);
    if (log) log->push_back(row);
    if (progress) progress(row);
  }
  return jm;
}

JointModel combine_separate(Network f, Network g, double delta) {
  JointModel jm{std::move(f), std::move(g), delta};
  jm.validate();
  return jm;
}

template <typename T>
BasicJointModel<T> shift_bias(BasicJointModel<T> jm, double delta, bool allow_negative) {
  if (!std::isfinite(delta)) throw ConfigError("bias shift must be finite");
  if (delta < 0.0 && !allow_negative) {
    throw ConfigError("negative bias shift " + detail::num(delta) + " requires allow_negative");
  }
  jm.delta += delta;
  return jm;
}

template <typename T>
double effective_head_bias(const BasicJointModel<T>& jm) {
  const auto& head = std::get<NegExpHead<T>>(jm.discriminator.layers().back());
  return static_cast<double>(head.bias[0]) + jm.delta;
}

SweepSelection delta_sweep_select(const std::vector<SweepCandidate>& candidates,
                                  double baseline_auc) {
  if (candidates.empty()) throw ConfigError("delta sweep has no candidates");
  std::size_t best = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!(candidates[i].auc > baseline_auc)) continue;
    if (best == candidates.size() || candidates[i].gauc > candidates[best].gauc) best = i;
  }
  if (best != candidates.size()) return {best, candidates[best].delta, true};
  best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].auc > candidates[best].auc) best = i;
  }
  return {best, candidates[best].delta, false};
}

#define PROOD_INSTANTIATE(T)                                                                   \
  template struct BasicJointModel<T>;                                                         \
  template T in_probability(const BasicJointModel<T>&, const BasicTensor<T>&);                \
  template Prediction<T> predict(const BasicJointModel<T>&, const BasicTensor<T>&);           \
  template T conf_upper_bound(const BasicJointModel<T>&, const BasicTensor<T>&,               \
                              const ThreatModel&);                                            \
  template SemiJointLoss<T> semi_joint_loss(                                                  \
      const BasicNetwork<T>&, const std::vector<BasicTensor<T>>&, const std::vector<int>&,    \
      const std::vector<double>&, const std::vector<BasicTensor<T>>&,                         \
      const std::vector<double>&);                                                            \
  template SemiJointLoss<T> semi_joint_loss(const BasicJointModel<T>&,                        \
                                            const std::vector<BasicTensor<T>>&,               \
                                            const std::vector<int>&,                          \
                                            const std::vector<BasicTensor<T>>&);              \
  template BasicJointModel<T> shift_bias(BasicJointModel<T>, double, bool);                   \
  template double effective_head_bias(const BasicJointModel<T>&);

PROOD_INSTANTIATE(float)
PROOD_INSTANTIATE(double)

}  // namespace prood
