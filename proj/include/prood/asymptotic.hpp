#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prood/joint.hpp"
#include "prood/layers.hpp"
#include "prood/tensor.hpp"

namespace prood {

/// Activation record of one forward pass: for every ReLU / LeakyReLU layer,
/// whether each unit's pre-activation is strictly positive.
using ActivationPattern = std::vector<std::vector<bool>>;

ActivationPattern activation_pattern(const Network64& net, const Tensor64& x);

/// Affine map of the pre-logit layer (the input of the last layer) on one linear
/// region: pre_logit(y) = U y + d for every y in the region.
struct LinearRegion {
  Tensor64 U;  // pre-logit size x input size
  Tensor64 d;  // pre-logit size
  double beta_star = 0.0;
  ActivationPattern pattern;
};

/// The network up to its last layer with every activation frozen to `pattern`.
Tensor64 forward_frozen(const Network64& net, const ActivationPattern& pattern, const Tensor64& x,
                        bool with_bias);

/// Region of beta * x, provided the activation pattern agrees at beta, 2 beta and
/// 10 beta; throws RegionNotReached otherwise.
LinearRegion extract_region(const Network64& g, const Tensor64& x, double beta);

/// extract_region starting at beta_start and doubling until stable or beyond beta_max.
LinearRegion find_region(const Network64& g, const Tensor64& x, double beta_start = 1e4,
                         double beta_max = 1e12);

struct AsymptoticReport {
  bool ux_nonzero = false;
  double inner_product = 0.0;  // <head weights, U x>
  bool limit_ok = false;       // only meaningful when ux_nonzero
  double beta_star = 0.0;
  double logit_at_limit = 0.0;  // g(beta x) + delta at beta = kLimitScale
  double p_in_at_limit = 0.0;
  double conf_gap_at_limit = 0.0;  // max_y p(y | beta x) - 1/K
};

inline constexpr double kLimitScale = 1e6;

/// Checks the premise U x != 0 (some component > 1e-8) on the asymptotic region of
/// the ray beta * x, and if it holds requires <W, U x> < 0, p_in(1e6 x) < 1e-6 and
/// confidence within 1e-3 of 1/K at 1e6 x.
AsymptoticReport check_asymptotic_confidence(const JointModel64& jm, const Tensor64& x);

/// Directions drawn uniformly from [-0.5, 0.5]^d and rescaled to l-infinity norm 1.
std::vector<Tensor64> random_directions(std::size_t n, const Shape& shape, std::uint64_t seed);

struct SphereStage {
  double radius;
  int steps;
  double step_size;
};

struct DirectionSearchConfig {
  std::size_t n_directions = 10;
  std::vector<SphereStage> stages = {{100.0, 10000, 0.1}, {100.0, 10000, 0.01}, {1000.0, 20000, 0.1}};
  std::vector<double> alphas = {1, 10, 100, 1e3, 1e4, 1e5, 1e6};
  std::uint64_t seed = 0;
};

struct ScaleCurvePoint {
  double alpha;
  double max_p_in;  // over the searched directions
  double max_conf;
};

struct DirectionSearchResult {
  std::vector<Tensor64> directions;  // rescaled to l-infinity norm 1
  std::vector<double> final_logit;   // g(x) + delta at the end of the last stage
  double max_radius_error = 0.0;     // largest relative deviation of an iterate from its sphere
  std::vector<ScaleCurvePoint> curve;
};

/// Projected gradient ascent of g(x) + delta on l2 spheres of the configured radii.
DirectionSearchResult adversarial_direction_search(const JointModel64& jm,
                                                   const DirectionSearchConfig& cfg);

struct RayRow {
  std::size_t direction_id;
  double alpha;
  double p_in;
  double conf;
};

/// Confidence along c + alpha * n from the box centre c = 0.5.
std::vector<RayRow> ray_confidence(const JointModel64& jm, const std::vector<Tensor64>& directions,
                                   const std::vector<double>& alphas);
/// The same for a plain classifier; p_in is reported as 1.
std::vector<RayRow> ray_confidence(const Network64& f, const std::vector<Tensor64>& directions,
                                   const std::vector<double>& alphas);

struct RaySummary {
  double alpha;
  double mean_conf, max_conf;
  double mean_p_in, max_p_in;
};

std::vector<RaySummary> summarize_rays(const std::vector<RayRow>& rows);

/// CSV with header direction_id,alpha,p_in,conf.
void write_ray_csv(const std::filesystem::path& path, const std::vector<RayRow>& rows);
std::vector<RayRow> read_ray_csv(const std::filesystem::path& path);

}  // namespace prood
