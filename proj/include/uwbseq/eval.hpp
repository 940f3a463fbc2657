#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uwbseq/geometry.hpp"

namespace uwbseq::eval {

// positions[k][tag]
using Track = std::vector<std::vector<Vec3>>;

struct TrajectoryEstimate {
  std::string method;
  int trial_id = 0;
  std::uint64_t config_hash = 0;
  std::vector<double> stamps;
  Track positions;
};

// Per-sample error: 3-D Euclidean error of each tag, averaged over tags.
// Throws on length or tag-count mismatch and on empty input.
std::vector<double> sample_errors(const Track& predictions, const Track& references);

// sqrt(mean of squared per-sample errors).
double rmse(const Track& predictions, const Track& references);
double rmse(const std::vector<double>& errors);

inline constexpr std::array<double, 5> kQuantileLevels = {0.05, 0.25, 0.50, 0.75, 0.95};
inline constexpr std::array<double, 5> kThresholds = {1.0, 2.0, 3.0, 5.0, 10.0};

// Linear interpolation between order statistics at q * (n - 1).
double quantile(std::vector<double> values, double q);

struct MetricReport {
  std::string method;
  std::map<int, double> trial_rmse;
  double rmse = 0.0;  // pooled over every sample of every trial
  std::array<double, 3> axis_rmse{};
  double mean_error = 0.0;
  std::array<double, 5> quantiles{};
  std::array<double, 5> fraction_below{};
  std::size_t samples = 0;
  int repeats = 1;

  bool operator==(const MetricReport&) const = default;
};

// Distribution statistics of a set of per-sample errors. Throws when empty.
MetricReport error_distribution(const std::vector<double>& errors);
MetricReport error_distribution(const Track& predictions, const Track& references);

// Accumulates trials into one report per method. Adding the same trial again
// (another repeat) pools its samples into that trial's RMSE.
class ReportBuilder {
public:
  explicit ReportBuilder(std::string method, int repeats = 1) : method_(std::move(method)), repeats_(repeats) {}
  void add_trial(int trial_id, const Track& predictions, const Track& references);
  MetricReport build() const;
  const std::vector<double>& errors() const { return errors_; }

private:
  std::string method_;
  int repeats_;
  std::map<int, std::pair<double, std::size_t>> trial_sq_;
  std::vector<double> errors_;
  std::array<double, 3> axis_sq_{};
  std::size_t axis_count_ = 0;
};

std::string report_json(const MetricReport& report);
MetricReport parse_report_json(const std::string& text);

struct ComparisonTable {
  std::vector<std::string> methods;
  std::vector<int> trials;
  std::vector<std::vector<double>> rmse;  // [trial][method]
  std::vector<double> mean;               // per method
  // Column index of the best / second-best method per trial, -1 without flag.
  std::vector<int> best, second;

  std::string csv() const;
  std::string text() const;
};

// Throws when the reports do not cover the same trials.
ComparisonTable compare_methods(const std::vector<MetricReport>& reports);

struct AblationRun {
  std::string labels;  // gt | osl
  int tags = 2;
  std::string model;
  double rmse = 0.0;
};

struct AblationCell {
  std::string labels;
  int tags = 0;
  std::string model;
  std::size_t runs = 0;
  double mean_rmse = 0.0;
};

struct AblationSummary {
  std::vector<AblationCell> cells;    // labels x tags x model, present cells only
  std::vector<std::string> missing;   // "labels=<l> tags=<t> model=<m>"

  std::string csv() const;
  std::string text() const;
};

// Grid over {gt, osl} x {1, 2} x the models named in the runs (or `models` when non-empty).
AblationSummary ablation_report(const std::vector<AblationRun>& runs, const std::vector<std::string>& models = {});

struct ErrorSeries {
  int trial_id = 0;
  std::string method;
  std::vector<double> errors;
};

// trial,method,sample,error
void write_long_errors(const std::vector<ErrorSeries>& series, const std::filesystem::path& path,
                       const std::string& provenance = {});

}  // namespace uwbseq::eval
