#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "prood/data.hpp"
#include "prood/layers.hpp"
#include "prood/nn.hpp"

namespace prood {

struct DiscTrainConfig {
  std::string arch = "desk";
  int epochs = 100;
  double lr = 1e-4;
  std::vector<double> lr_drop_fractions = {0.5, 0.75, 0.85};
  double lr_drop_factor = 0.2;
  std::size_t batch_in = 128;
  std::size_t batch_out = 128;
  double epsilon_final = 0.01;
  double kappa_final = 1.0;
  int ramp_epochs = 30;
  double weight_decay = 5e-4;
  double bias_init = 3.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

struct RampValues {
  double epsilon;
  double kappa;
};

/// Both values rise linearly from 0 at epoch 0 to their final values at
/// ramp_epochs and stay there.
RampValues ramp(int epoch, const DiscTrainConfig& cfg);

template <typename T>
struct BinaryLoss {
  double loss = 0.0;
  double in_loss = 0.0;   // mean softplus(-g(x)) over the in-batch
  double out_loss = 0.0;  // mean softplus(upper bound of g over the ball) over the out-batch
  ParamGrads<T> grads;
};

/// mean_in softplus(-g(x)) + kappa * mean_out softplus(g_upper(z)), with the upper
/// bound taken over the clipped l-infinity ball of radius epsilon. Gradients flow
/// through the interval bounds.
template <typename T>
BinaryLoss<T> binary_robust_loss(const BasicNetwork<T>& g,
                                 const std::vector<BasicTensor<T>>& batch_in,
                                 const std::vector<BasicTensor<T>>& batch_out, double epsilon,
                                 double kappa);

struct DiscEpochLog {
  int epoch;
  double epsilon;
  double kappa;
  double lr;
  double in_loss;
  double out_loss;
  double total;
};

struct DiscTrainResult {
  Network g;
  std::vector<DiscEpochLog> log;
};

using DiscProgress = std::function<void(const DiscEpochLog&)>;

/// Adam on the robust binary loss; weight decay skips the output head. Starts from
/// `g` as given (its initialization is the caller's choice).
DiscTrainResult train_discriminator(Network g, const DiscTrainConfig& cfg, const Dataset& data_in,
                                    const Dataset& data_out, const DiscProgress& progress = {});

/// Builds cfg.arch for the data's image shape, initializes it from the "init"
/// stream of cfg.seed with the head bias at cfg.bias_init, and trains it.
DiscTrainResult train_discriminator(const DiscTrainConfig& cfg, const Dataset& data_in,
                                    const Dataset& data_out, const DiscProgress& progress = {});

/// CSV with header epoch,eps_t,kappa_t,in_loss,out_loss,total.
void write_disc_log(const std::filesystem::path& path, const std::vector<DiscEpochLog>& log);

}  // namespace prood
