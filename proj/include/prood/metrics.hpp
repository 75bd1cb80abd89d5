#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace prood {

enum class Ties { strict, half };

/// Fraction of (in, out) pairs with conf_in > conf_out; with Ties::half a tie counts 0.5.
/// Rank-based, O(n log n). Throws ConfigError on empty input.
double auc(const std::vector<double>& conf_in, const std::vector<double>& conf_out,
           Ties ties = Ties::strict);

/// Pairwise reference implementation, O(n m).
double auc_pairwise(const std::vector<double>& conf_in, const std::vector<double>& conf_out,
                    Ties ties = Ties::strict);

/// AUC against certified upper bounds on the out-confidences.
double gauc(const std::vector<double>& conf_in, const std::vector<double>& conf_out_ub);

/// AUC against attacked out-confidences.
double aauc(const std::vector<double>& conf_in, const std::vector<double>& conf_out_adv);

struct FprResult {
  double fpr;
  double threshold;
};

/// The threshold is the ceil(tpr * N)-th largest in-confidence; fpr is the fraction of
/// out-confidences >= threshold.
FprResult fpr_at_tpr(const std::vector<double>& conf_in, const std::vector<double>& conf_out,
                     double tpr = 0.95);

struct ConfidenceSets {
  std::vector<double> conf_in;
  std::vector<double> conf_out_clean;
  std::vector<double> conf_out_adv;
  std::vector<double> conf_out_ub;
};

struct MetricRow {
  std::string out_distribution;
  double acc = 0, auc = 0, gauc = 0, aauc = 0, fpr = 0, gfpr = 0, afpr = 0;
};

/// Computes the row and checks GAUC <= AAUC <= AUC and FPR <= AFPR <= GFPR;
/// throws Error if an ordering fails.
MetricRow metric_row(const std::string& name, double accuracy, const ConfidenceSets& sets,
                     double tpr = 0.95);

struct EvalReport {
  std::vector<MetricRow> rows;
  /// Standard deviations over seeds, parallel to rows; empty for a single run.
  std::vector<MetricRow> stddev;
};

inline constexpr const char* kReportHeader = "out_distribution,Acc,AUC,GAUC,AAUC,FPR,GFPR,AFPR";

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);
void write_report(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const EvalReport& report);

/// Mean and standard deviation, row by row, of reports with identical row names.
EvalReport aggregate_reports(const std::vector<EvalReport>& reports);

}  // namespace prood
