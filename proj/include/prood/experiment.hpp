#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prood/asymptotic.hpp"
#include "prood/attacks.hpp"
#include "prood/checkpoint.hpp"
#include "prood/data.hpp"
#include "prood/discriminator.hpp"
#include "prood/joint.hpp"
#include "prood/metrics.hpp"

namespace prood {

struct IdxTaskPaths {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::optional<std::filesystem::path> out_train_images, out_test_images;
};

struct EvalSettings {
  std::size_t n_out = 200;  // fixed subset size per out-distribution
  std::vector<std::string> out_distributions = {"synthetic_out", "uniform_noise", "smooth_noise"};
  double tpr = 0.95;
};

struct ProbeSettings {
  std::size_t n_random_directions = 100;
  DirectionSearchConfig search;
  std::vector<double> ray_alphas = {0, 1, 10, 100, 1e3, 1e4, 1e5, 1e6};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string task_type = "synthetic";  // "synthetic" or "idx"
  SyntheticSpec synthetic;
  IdxTaskPaths idx;
  std::string classifier_arch = "mlp";
  DiscTrainConfig discriminator;
  // The plain MLP classifier loses its ReLUs at the ResNet rate of 0.1.
  SemiJointConfig semi_joint = [] {
    SemiJointConfig c;
    c.lr = 0.01;
    return c;
  }();
  double epsilon = 0.01;
  std::vector<double> deltas = {0, 1, 2, 3, 4, 5, 6};
  AttackConfig attack;
  EvalSettings eval;
  ProbeSettings probe;
  std::filesystem::path output_dir = "runs/default";

  /// Fills sub-configs from the shared seed and epsilon and checks every value.
  void finalize();
};

/// Parses JSON text; unknown keys and ill-typed values raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct TaskData {
  Dataset in_train, in_test, out_train, out_holdout;
  std::vector<Dataset> eval_out;  // one fixed subset per configured out-distribution
};

/// Training data plus evaluation subsets; eval_round redraws the subsets.
TaskData load_task(const ExperimentConfig& cfg, std::uint64_t eval_round = 0);

using Logger = std::function<void(const std::string&)>;

struct TrainDiscOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path log_csv;
  Network g;
};

/// Writes discriminator.prood and disc_log.csv under out_dir.
TrainDiscOutput cmd_train_disc(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                               const Logger& log = {});

struct SweepRow {
  double delta;
  double acc;
  double auc;
  double gauc;
};

struct TrainJointOutput {
  double baseline_auc;
  double baseline_acc;
  double disc_auc;   // discriminator alone, held-out out split vs in test set
  double disc_gauc;
  std::vector<SweepRow> rows;
  SweepSelection selection;
  std::filesystem::path selected_checkpoint;
};

/// Trains the outlier-exposure baseline and one semi-joint model per delta, then
/// selects delta. Writes baseline.prood, joint_delta_<d>.prood, joint.prood,
/// sweep.csv and sweep.json under out_dir.
TrainJointOutput cmd_train_joint(const ExperimentConfig& cfg, const std::filesystem::path& disc_ckpt,
                                 const std::filesystem::path& out_dir, const Logger& log = {});

/// Evaluates the joint model on each configured out-distribution and writes
/// report.csv and report.json. With seeds > 1 the subsets and attacks are redrawn
/// per seed and the report carries mean and standard deviation.
EvalReport cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& joint_ckpt,
                    const std::filesystem::path& out_dir, int seeds = 1, const Logger& log = {});

/// Evaluation of one model on prepared data, shared by cmd_eval and the sweep.
struct ConfidenceEval {
  double accuracy;
  std::vector<double> conf_in;
  std::vector<ConfidenceSets> per_out;
  std::vector<TranscriptRow> transcript;
};
ConfidenceEval evaluate_confidences(const JointModel64& jm, const Dataset& in_test,
                                    const std::vector<Dataset>& outs, const ThreatModel& tm,
                                    const AttackConfig& attack, bool run_attack);

struct DirectionCheck {
  std::size_t id;
  std::string kind;  // "random" or "searched"
  AsymptoticReport report;
};

struct ProbeOutput {
  std::vector<DirectionCheck> checks;
  double fraction_ux_nonzero;
  bool all_passed;  // every direction with U x != 0 met the limit conditions
  DirectionSearchResult search;
  std::vector<RaySummary> joint_rays;
  std::vector<RaySummary> classifier_rays;
};

/// Writes rays_joint.csv, rays_classifier.csv, asymptotic.csv, search_curve.csv and
/// probe.json under out_dir.
ProbeOutput cmd_probe(const ExperimentConfig& cfg, const std::filesystem::path& joint_ckpt,
                      const std::filesystem::path& out_dir, const Logger& log = {});

Checkpoint joint_checkpoint(const JointModel& jm);
JointModel joint_from_checkpoint(const Checkpoint& ckpt);

}  // namespace prood
