#include "uwbseq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "uwbseq/csv.hpp"

namespace uwbseq::eval {

namespace {

void check_tracks(const Track& p, const Track& r) {
  if (p.empty()) throw std::invalid_argument("eval: no samples");
  if (p.size() != r.size())
    throw std::invalid_argument("eval: " + std::to_string(p.size()) + " predictions vs " + std::to_string(r.size()) +
                                " references");
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k].size() != r[k].size() || p[k].empty())
      throw std::invalid_argument("eval: tag count mismatch at sample " + std::to_string(k));
}

std::string fixed(double v, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<double> sample_errors(const Track& predictions, const Track& references) {
  check_tracks(predictions, references);
  std::vector<double> out(predictions.size());
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < predictions[k].size(); ++i) s += (predictions[k][i] - references[k][i]).norm();
    out[k] = s / static_cast<double>(predictions[k].size());
  }
  return out;
}

double rmse(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("rmse: no samples");
  double s = 0.0;
  for (double e : errors) s += e * e;
  return std::sqrt(s / static_cast<double>(errors.size()));
}

double rmse(const Track& predictions, const Track& references) { return rmse(sample_errors(predictions, references)); }

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MetricReport error_distribution(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("error_distribution: no samples");
  MetricReport r;
  r.samples = errors.size();
  r.rmse = rmse(errors);
  r.mean_error = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < kQuantileLevels.size(); ++i) r.quantiles[i] = quantile(sorted, kQuantileLevels[i]);
  for (std::size_t i = 0; i < kThresholds.size(); ++i) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), kThresholds[i]) - sorted.begin();
    r.fraction_below[i] = static_cast<double>(below) / static_cast<double>(sorted.size());
  }
  return r;
}

MetricReport error_distribution(const Track& predictions, const Track& references) {
  ReportBuilder b("");
  b.add_trial(0, predictions, references);
  return b.build();
}

void ReportBuilder::add_trial(int trial_id, const Track& predictions, const Track& references) {
  const auto e = sample_errors(predictions, references);
  auto& [sq, n] = trial_sq_[trial_id];
  for (double v : e) sq += v * v;
  n += e.size();
  errors_.insert(errors_.end(), e.begin(), e.end());
  for (std::size_t k = 0; k < predictions.size(); ++k)
    for (std::size_t i = 0; i < predictions[k].size(); ++i) {
      const Vec3 d = predictions[k][i] - references[k][i];
      for (int a = 0; a < 3; ++a) axis_sq_[static_cast<std::size_t>(a)] += d[a] * d[a];
      ++axis_count_;
    }
}

MetricReport ReportBuilder::build() const {
  MetricReport r = error_distribution(errors_);
  r.method = method_;
  r.repeats = repeats_;
  for (const auto& [id, acc] : trial_sq_) r.trial_rmse[id] = std::sqrt(acc.first / static_cast<double>(acc.second));
  for (std::size_t a = 0; a < 3; ++a) r.axis_rmse[a] = std::sqrt(axis_sq_[a] / static_cast<double>(axis_count_));
  return r;
}

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["rmse"] = r.rmse;
  j["axis_rmse"] = r.axis_rmse;
  j["mean_error"] = r.mean_error;
  j["quantile_levels"] = kQuantileLevels;
  j["quantiles"] = r.quantiles;
  j["thresholds"] = kThresholds;
  j["fraction_below"] = r.fraction_below;
  j["samples"] = r.samples;
  j["repeats"] = r.repeats;
  auto& trials = j["trial_rmse"] = nlohmann::ordered_json::array();
  for (const auto& [id, v] : r.trial_rmse) trials.push_back({{"trial", id}, {"rmse", v}});
  return j.dump(2) + "\n";
}

MetricReport parse_report_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricReport r;
  r.method = j.at("method").get<std::string>();
  r.rmse = j.at("rmse").get<double>();
  r.axis_rmse = j.at("axis_rmse").get<std::array<double, 3>>();
  r.mean_error = j.at("mean_error").get<double>();
  r.quantiles = j.at("quantiles").get<std::array<double, 5>>();
  r.fraction_below = j.at("fraction_below").get<std::array<double, 5>>();
  r.samples = j.at("samples").get<std::size_t>();
  r.repeats = j.at("repeats").get<int>();
  for (const auto& t : j.at("trial_rmse")) r.trial_rmse[t.at("trial").get<int>()] = t.at("rmse").get<double>();
  return r;
}

ComparisonTable compare_methods(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare_methods: no reports");
  ComparisonTable t;
  for (const auto& [id, v] : reports.front().trial_rmse) t.trials.push_back(id);
  for (const auto& r : reports) {
    std::vector<int> ids;
    for (const auto& [id, v] : r.trial_rmse) ids.push_back(id);
    if (ids != t.trials)
      throw std::invalid_argument("compare_methods: '" + r.method + "' covers different trials than '" +
                                  reports.front().method + "'");
    t.methods.push_back(r.method);
  }
  const std::size_t m = reports.size();
  t.mean.assign(m, 0.0);
  for (int id : t.trials) {
    std::vector<double> row;
    for (std::size_t c = 0; c < m; ++c) {
      row.push_back(reports[c].trial_rmse.at(id));
      t.mean[c] += row.back() / static_cast<double>(t.trials.size());
    }
    t.rmse.push_back(row);
  }
  auto flag = [&](const std::vector<double>& row) {
    if (m < 2) return std::pair{-1, -1};
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    return std::pair{static_cast<int>(order[0]), static_cast<int>(order[1])};
  };
  for (const auto& row : t.rmse) {
    const auto [b, s] = flag(row);
    t.best.push_back(b);
    t.second.push_back(s);
  }
  const auto [b, s] = flag(t.mean);
  t.best.push_back(b);
  t.second.push_back(s);
  return t;
}

std::string ComparisonTable::csv() const {
  std::ostringstream out;
  out << "trial";
  for (const auto& m : methods) out << ',' << m;
  out << ",best,second\n";
  auto name = [&](int c) { return c < 0 ? std::string() : methods[static_cast<std::size_t>(c)]; };
  for (std::size_t r = 0; r <= trials.size(); ++r) {
    const bool mean_row = r == trials.size();
    out << (mean_row ? std::string("mean") : std::to_string(trials[r]));
    for (std::size_t c = 0; c < methods.size(); ++c) out << ',' << fmt_sig(mean_row ? mean[c] : rmse[r][c]);
    out << ',' << name(best[r]) << ',' << name(second[r]) << '\n';
  }
  return out.str();
}

std::string ComparisonTable::text() const {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head = {"trial"};
  head.insert(head.end(), methods.begin(), methods.end());
  cells.push_back(head);
  for (std::size_t r = 0; r <= trials.size(); ++r) {
    const bool mean_row = r == trials.size();
    std::vector<std::string> row = {mean_row ? std::string("mean") : std::to_string(trials[r])};
    for (std::size_t c = 0; c < methods.size(); ++c) {
      std::string v = fixed(mean_row ? mean[c] : rmse[r][c]);
      if (static_cast<int>(c) == best[r]) v += " *";
      else if (static_cast<int>(c) == second[r]) v += " +";
      else v += "  ";
      row.push_back(v);
    }
    cells.push_back(row);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    out << '\n';
  }
  out << "RMSE in meters; * best, + second best\n";
  return out.str();
}

AblationSummary ablation_report(const std::vector<AblationRun>& runs, const std::vector<std::string>& models) {
  std::vector<std::string> names = models;
  if (names.empty()) {
    std::set<std::string> seen;
    for (const auto& r : runs)
      if (seen.insert(r.model).second) names.push_back(r.model);
  }
  AblationSummary s;
  for (const std::string labels : {"gt", "osl"})
    for (int tags : {1, 2})
      for (const auto& model : names) {
        AblationCell cell{labels, tags, model, 0, 0.0};
        for (const auto& r : runs)
          if (r.labels == labels && r.tags == tags && r.model == model) {
            ++cell.runs;
            cell.mean_rmse += r.rmse;
          }
        if (cell.runs == 0) {
          s.missing.push_back("labels=" + labels + " tags=" + std::to_string(tags) + " model=" + model);
          continue;
        }
        cell.mean_rmse /= static_cast<double>(cell.runs);
        s.cells.push_back(cell);
      }
  return s;
}

std::string AblationSummary::csv() const {
  std::ostringstream out;
  out << "labels,tags,model,runs,rmse\n";
  for (const auto& c : cells)
    out << c.labels << ',' << c.tags << ',' << c.model << ',' << c.runs << ',' << fmt_sig(c.mean_rmse) << '\n';
  return out.str();
}

std::string AblationSummary::text() const {
  std::ostringstream out;
  std::vector<std::string> models;
  for (const auto& c : cells)
    if (std::find(models.begin(), models.end(), c.model) == models.end()) models.push_back(c.model);
  auto find = [&](const std::string& labels, int tags, const std::string& model) -> const AblationCell* {
    for (const auto& c : cells)
      if (c.labels == labels && c.tags == tags && c.model == model) return &c;
    return nullptr;
  };
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-6s %12s %12s %12s\n", "model", "tags", "osl labels", "gt labels", "change");
  out << line;
  for (const auto& m : models)
    for (int tags : {2, 1}) {
      const auto* osl = find("osl", tags, m);
      const auto* gt = find("gt", tags, m);
      const std::string a = osl ? fixed(osl->mean_rmse) : "missing";
      const std::string b = gt ? fixed(gt->mean_rmse) : "missing";
      const std::string d = osl && gt ? fixed(gt->mean_rmse - osl->mean_rmse) : "-";
      std::snprintf(line, sizeof line, "%-10s %-6d %12s %12s %12s\n", m.c_str(), tags, a.c_str(), b.c_str(), d.c_str());
      out << line;
    }
  for (const auto& miss : missing) out << "missing cell: " << miss << '\n';
  out << "RMSE in meters against true ground truth\n";
  return out.str();
}

void write_long_errors(const std::vector<ErrorSeries>& series, const std::filesystem::path& path,
                       const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!provenance.empty()) out << provenance << '\n';
  out << "trial,method,sample,error\n";
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.errors.size(); ++k)
      out << s.trial_id << ',' << s.method << ',' << k << ',' << fmt_sig(s.errors[k]) << '\n';
}

}  // namespace uwbseq::eval
