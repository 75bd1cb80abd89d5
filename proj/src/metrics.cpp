#include "prood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "format.hpp"
#include "json.hpp"
#include "prood/checkpoint.hpp"
#include "prood/error.hpp"

namespace prood {

namespace {

void require_nonempty(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw ConfigError("metric needs nonempty confidence arrays");
}

constexpr const char* kColumns[] = {"Acc", "AUC", "GAUC", "AAUC", "FPR", "GFPR", "AFPR"};

std::vector<double> row_values(const MetricRow& r) {
  return {r.acc, r.auc, r.gauc, r.aauc, r.fpr, r.gfpr, r.afpr};
}

void set_row_values(MetricRow& r, const std::vector<double>& v) {
  r.acc = v[0];
  r.auc = v[1];
  r.gauc = v[2];
  r.aauc = v[3];
  r.fpr = v[4];
  r.gfpr = v[5];
  r.afpr = v[6];
}

}  // namespace

double auc(const std::vector<double>& conf_in, const std::vector<double>& conf_out, Ties ties) {
  require_nonempty(conf_in, conf_out);
  std::vector<double> sorted = conf_out;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t twice = 0;  // 2 * (#strict wins) + #ties
  for (double x : conf_in) {
    const auto range = std::equal_range(sorted.begin(), sorted.end(), x);
    const auto below = static_cast<std::uint64_t>(range.first - sorted.begin());
    const auto equal = static_cast<std::uint64_t>(range.second - range.first);
    twice += 2 * below + (ties == Ties::half ? equal : 0);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(conf_in.size()) * static_cast<double>(conf_out.size()));
}

double auc_pairwise(const std::vector<double>& conf_in, const std::vector<double>& conf_out,
                    Ties ties) {
  require_nonempty(conf_in, conf_out);
  std::uint64_t twice = 0;
  for (double x : conf_in) {
    for (double z : conf_out) {
      if (x > z) {
        twice += 2;
      } else if (x == z && ties == Ties::half) {
        twice += 1;
      }
    }
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(conf_in.size()) * static_cast<double>(conf_out.size()));
}

double gauc(const std::vector<double>& conf_in, const std::vector<double>& conf_out_ub) {
  return auc(conf_in, conf_out_ub);
}

double aauc(const std::vector<double>& conf_in, const std::vector<double>& conf_out_adv) {
  return auc(conf_in, conf_out_adv);
}

FprResult fpr_at_tpr(const std::vector<double>& conf_in, const std::vector<double>& conf_out,
                     double tpr) {
  require_nonempty(conf_in, conf_out);
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ConfigError("tpr must lie in (0, 1]");
  std::vector<double> sorted = conf_in;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  // The small offset keeps e.g. 0.95 * 20 = 19.000000000000004 at rank 19.
  auto rank = static_cast<std::size_t>(std::ceil(tpr * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  const double tau = sorted[rank - 1];
  const auto hits = std::count_if(conf_out.begin(), conf_out.end(), [tau](double c) { return c >= tau; });
  return {static_cast<double>(hits) / static_cast<double>(conf_out.size()), tau};
}

MetricRow metric_row(const std::string& name, double accuracy, const ConfidenceSets& s,
                     double tpr) {
  const std::size_t m = s.conf_out_clean.size();
  if (s.conf_out_adv.size() != m || s.conf_out_ub.size() != m) {
    throw ShapeError("confidence sets for " + name + " differ in length");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (!(s.conf_out_clean[i] <= s.conf_out_adv[i])) {
      throw Error(name + ": attacked confidence below clean confidence at sample " +
                  std::to_string(i));
    }
    if (!(s.conf_out_adv[i] <= s.conf_out_ub[i] + 1e-6)) {
      throw Error(name + ": attacked confidence " + detail::num(s.conf_out_adv[i]) +
                  " exceeds certified bound " + detail::num(s.conf_out_ub[i]) + " at sample " +
                  std::to_string(i));
    }
  }
  MetricRow r;
  r.out_distribution = name;
  r.acc = accuracy;
  r.auc = auc(s.conf_in, s.conf_out_clean);
  r.gauc = gauc(s.conf_in, s.conf_out_ub);
  r.aauc = aauc(s.conf_in, s.conf_out_adv);
  r.fpr = fpr_at_tpr(s.conf_in, s.conf_out_clean, tpr).fpr;
  r.gfpr = fpr_at_tpr(s.conf_in, s.conf_out_ub, tpr).fpr;
  r.afpr = fpr_at_tpr(s.conf_in, s.conf_out_adv, tpr).fpr;
  if (!(r.gauc <= r.aauc && r.aauc <= r.auc)) {
    throw Error(name + ": AUC ordering violated (GAUC " + detail::num(r.gauc) + ", AAUC " +
                detail::num(r.aauc) + ", AUC " + detail::num(r.auc) + ")");
  }
  if (!(r.fpr <= r.afpr && r.afpr <= r.gfpr)) {
    throw Error(name + ": FPR ordering violated (FPR " + detail::num(r.fpr) + ", AFPR " +
                detail::num(r.afpr) + ", GFPR " + detail::num(r.gfpr) + ")");
  }
  return r;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kReportHeader;
  const bool with_std = !report.stddev.empty();
  if (with_std) {
    for (const char* c : kColumns) out << ',' << c << "_std";
  }
  out << '\n';
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    out << report.rows[i].out_distribution;
    for (double v : row_values(report.rows[i])) out << ',' << detail::num(v);
    if (with_std) {
      for (double v : row_values(report.stddev.at(i))) out << ',' << detail::num(v);
    }
    out << '\n';
  }
  return out.str();
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    nlohmann::json row = {{"out_distribution", report.rows[i].out_distribution}};
    const auto v = row_values(report.rows[i]);
    for (std::size_t c = 0; c < v.size(); ++c) row[kColumns[c]] = v[c];
    if (!report.stddev.empty()) {
      const auto s = row_values(report.stddev.at(i));
      for (std::size_t c = 0; c < s.size(); ++c) row[std::string(kColumns[c]) + "_std"] = s[c];
    }
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                  const EvalReport& report) {
  write_file_bytes(csv_path, report_csv(report));
  write_file_bytes(json_path, report_json(report));
}

EvalReport aggregate_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ConfigError("no reports to aggregate");
  if (reports.size() == 1) return reports.front();
  EvalReport out;
  const std::size_t rows = reports.front().rows.size();
  const double n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> mean(7, 0.0), sq(7, 0.0);
    for (const auto& rep : reports) {
      if (rep.rows.size() != rows || rep.rows[i].out_distribution != reports[0].rows[i].out_distribution) {
        throw ConfigError("reports to aggregate have different rows");
      }
      const auto v = row_values(rep.rows[i]);
      for (std::size_t c = 0; c < 7; ++c) mean[c] += v[c] / n;
    }
    for (const auto& rep : reports) {
      const auto v = row_values(rep.rows[i]);
      for (std::size_t c = 0; c < 7; ++c) sq[c] += (v[c] - mean[c]) * (v[c] - mean[c]);
    }
    MetricRow m, s;
    m.out_distribution = s.out_distribution = reports[0].rows[i].out_distribution;
    for (auto& v : sq) v = std::sqrt(v / (n - 1.0));
    set_row_values(m, mean);
    set_row_values(s, sq);
    out.rows.push_back(m);
    out.stddev.push_back(s);
  }
  return out;
}

}  // namespace prood
