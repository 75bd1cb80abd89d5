#include "prood/discriminator.hpp"

#include <cmath>
#include <fstream>

#include "format.hpp"
#include "prood/error.hpp"
#include "prood/ibp.hpp"
#include "prood/optim.hpp"
#include "prood/rng.hpp"
#include "reduce.hpp"

namespace prood {

void DiscTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("discriminator epochs must be >= 1");
  if (ramp_epochs < 0 || ramp_epochs > epochs) {
    throw ConfigError("ramp_epochs must lie in [0, epochs]");
  }
  if (!(epsilon_final >= 0.0)) throw ConfigError("epsilon_final must be nonnegative");
  if (!(kappa_final >= 0.0 && kappa_final <= 1.0)) throw ConfigError("kappa_final must be in [0,1]");
  if (!(lr > 0.0)) throw ConfigError("discriminator lr must be positive");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor must be positive");
  if (batch_in == 0 || batch_out == 0) throw ConfigError("batch sizes must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
}

RampValues ramp(int epoch, const DiscTrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be nonnegative");
  if (cfg.ramp_epochs <= 0 || epoch >= cfg.ramp_epochs) {
    return {cfg.epsilon_final, cfg.kappa_final};
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.ramp_epochs);
  return {t * cfg.epsilon_final, t * cfg.kappa_final};
}

template <typename T>
BinaryLoss<T> binary_robust_loss(const BasicNetwork<T>& g,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<BasicTensor<T>>& batch_out, double epsilon,
                                 double kappa) {
  if (!g.has_negexp_head() || g.output_shape() != Shape{1}) {
    throw ShapeError("binary loss needs a scalar network ending in a NegExpHead");
  }
  if (batch_in.empty() || batch_out.empty()) throw ConfigError("binary loss needs nonempty batches");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in [0,1]");

  const std::size_t n_in = batch_in.size(), n_out = batch_out.size();
  const ThreatModel tm{epsilon};
  BinaryLoss<T> out;
  out.grads = zero_grads(g);
  std::vector<double> out_terms(n_out, 0.0);
  const double in_sum = detail::accumulate_chunked(
      g, n_in + n_out, out.grads, [&](std::size_t i, ParamGrads<T>& grads) -> double {
        if (i < n_in) {
          const auto acts = forward(g, batch_in[i]);
          const T v = acts.back()[0];
          // d softplus(-v)/dv = -sigmoid(-v)
          BasicTensor<T> gy({1}, static_cast<T>(-sigmoid(-v) / static_cast<double>(n_in)));
          backward_into(g, acts, gy, &grads);
          return static_cast<double>(softplus(-v));
        }
        const std::size_t j = i - n_in;
        const auto trace = propagate(g, input_interval(batch_out[j], tm));
        const T ub = trace.back().upper[0];
        out_terms[j] = static_cast<double>(softplus(ub));
        if (kappa > 0.0) {
          BasicTensor<T> gu({1}, static_cast<T>(kappa * sigmoid(ub) / static_cast<double>(n_out)));
          interval_backward(g, trace, BasicTensor<T>({1}), gu, &grads);
        }
        return 0.0;
      });
  double out_sum = 0.0;
  for (double v : out_terms) out_sum += v;
  out.in_loss = in_sum / static_cast<double>(n_in);
  out.out_loss = out_sum / static_cast<double>(n_out);
  out.loss = out.in_loss + kappa * out.out_loss;
  return out;
}

template BinaryLoss<float> binary_robust_loss(const Network&, const std::vector<Tensor>&,
                                              const std::vector<Tensor>&, double, double);
template BinaryLoss<double> binary_robust_loss(const Network64&, const std::vector<Tensor64>&,
                                               const std::vector<Tensor64>&, double, double);

DiscTrainResult train_discriminator(Network g, const DiscTrainConfig& cfg, const Dataset& data_in,
                                    const Dataset& data_out, const DiscProgress& progress) {
  cfg.validate();
  if (data_in.size() == 0 || data_out.size() == 0) {
    throw ConfigError("discriminator training needs nonempty in and out datasets");
  }
  if (data_in.sample_shape() != g.input_shape() || data_out.sample_shape() != g.input_shape()) {
    throw ShapeError("dataset sample shape does not match discriminator input " +
                     shape_str(g.input_shape()));
  }
  auto opt = make_adam(g, cfg.lr, cfg.weight_decay, g.head_mask());
  const auto drops = drop_epochs_at(cfg.epochs, cfg.lr_drop_fractions);
  const std::size_t steps =
      (data_in.size() + cfg.batch_in - 1) / cfg.batch_in;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");

  DiscTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto rv = ramp(epoch, cfg);
    const double lr = step_schedule(cfg.lr, cfg.lr_drop_factor, drops, epoch);
    set_learning_rate(opt, lr);
    const auto perm_in =
        permutation(data_in.size(), derive_seed(shuffle_seed, 2 * static_cast<std::uint64_t>(epoch)));
    const auto perm_out = permutation(
        data_out.size(), derive_seed(shuffle_seed, 2 * static_cast<std::uint64_t>(epoch) + 1));

    DiscEpochLog row{epoch, rv.epsilon, rv.kappa, lr, 0.0, 0.0, 0.0};
    std::size_t out_cursor = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Tensor> bin, bout;
      const std::size_t end = std::min(data_in.size(), (s + 1) * cfg.batch_in);
      for (std::size_t i = s * cfg.batch_in; i < end; ++i) bin.push_back(data_in.sample(perm_in[i]));
      for (std::size_t i = 0; i < cfg.batch_out; ++i) {
        bout.push_back(data_out.sample(perm_out[out_cursor]));
        out_cursor = (out_cursor + 1) % data_out.size();
      }
      auto loss = binary_robust_loss(g, bin, bout, rv.epsilon, rv.kappa);
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("discriminator loss became non-finite at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(s) +
                              " (in " + detail::num(loss.in_loss) + ", out " +
                              detail::num(loss.out_loss) + ")");
      }
      optimizer_step(opt, g, loss.grads);
      row.in_loss += loss.in_loss;
      row.out_loss += loss.out_loss;
      row.total += loss.loss;
    }
    row.in_loss /= static_cast<double>(steps);
    row.out_loss /= static_cast<double>(steps);
    row.total /= static_cast<double>(steps);
    result.log.push_back(row);
    if (progress) progress(row);
  }
  result.g = std::move(g);
  return result;
}

DiscTrainResult train_discriminator(const DiscTrainConfig& cfg, const Dataset& data_in,
                                    const Dataset& data_out, const DiscProgress& progress) {
  cfg.validate();
  Network g = make_discriminator(cfg.arch, data_in.sample_shape());
  Rng rng(derive_seed(cfg.seed, "init"));
  init_parameters(g, rng, static_cast<float>(cfg.bias_init));
  return train_discriminator(std::move(g), cfg, data_in, data_out, progress);
}

void write_disc_log(const std::filesystem::path& path, const std::vector<DiscEpochLog>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,eps_t,kappa_t,in_loss,out_loss,total\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << detail::num(r.epsilon) << ',' << detail::num(r.kappa) << ','
        << detail::num(r.in_loss) << ',' << detail::num(r.out_loss) << ','
        << detail::num(r.total) << '\n';
  }
}

}  // namespace prood
