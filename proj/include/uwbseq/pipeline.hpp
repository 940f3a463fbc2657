#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "uwbseq/config.hpp"
#include "uwbseq/dataset.hpp"
#include "uwbseq/eval.hpp"

namespace uwbseq::pipeline {

namespace fs = std::filesystem;

struct Options {
  bool force = false;
  int jobs = 1;
  std::ostream* log = nullptr;  // progress and warnings; nullptr silences them
};

struct Manifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<int> trials, train, test;
};
void write_manifest(const Manifest& m, const fs::path& path);
Manifest read_manifest(const fs::path& path);

// Label source and tag count of one dataset build, e.g. "osl_2tag".
struct Variant {
  std::string labels = "osl";
  int tags = 2;
  std::string name() const { return labels + "_" + std::to_string(tags) + "tag"; }
};
Variant default_variant(const RunConfig& config);

// Directory layout under the work directory.
struct Layout {
  fs::path root;
  fs::path trials() const { return root / "trials"; }
  fs::path trial(int id) const;
  fs::path manifest() const { return trials() / "manifest.json"; }
  fs::path dataset(const Variant& v) const { return root / "dataset" / v.name(); }
  fs::path models(const Variant& v, const std::string& kind) const { return root / "models" / v.name() / kind; }
  fs::path predictions(const Variant& v, const std::string& method) const {
    return root / "predictions" / v.name() / method;
  }
  fs::path reports(const Variant& v) const { return root / "reports" / v.name(); }
  fs::path ablation() const { return root / "reports" / "ablation"; }
};

// The campus and the prior-map bias field are shared by every trial of a run.
Environment site_environment(const RunConfig& config);
OslBiasField site_bias_field(const RunConfig& config);
std::vector<TagMount> site_mounts(const RunConfig& config);
Trial simulate_trial(const RunConfig& config, const Environment& env, const OslBiasField& field, int trial_id);

// Writes trials/trial_XX and trials/manifest.json (first n_train ids train,
// the rest test). Refuses an existing trials directory unless forced.
Manifest simulate(const RunConfig& config, const fs::path& workdir, const Options& opts = {});

ChannelLayout variant_layout(const RunConfig& config, const Variant& v);

struct PreparedTrial {
  int trial_id = 0;
  std::size_t frames = 0;
  std::size_t windows = 0;
  bool skipped = false;
};

// Bins, labels and windows every trial, fits the normalizer on the training
// split and writes dataset/<variant>/{train,test}.ds plus per-trial frame CSVs.
std::vector<PreparedTrial> prepare(const RunConfig& config, const fs::path& workdir, const Variant& v,
                                   const Options& opts = {});

// Trains `repeats` models of each kind and writes checkpoints, training logs
// and per-repeat test predictions (predictions/<variant>/<kind>/r<R>/trial_XX.csv).
void train_models(const RunConfig& config, const fs::path& workdir, const Variant& v,
                  const std::vector<std::string>& kinds, const Options& opts = {});

// Classical solver over the test trials with the variant's tag layout.
void baseline(const RunConfig& config, const fs::path& workdir, const Variant& v, const Options& opts = {});

// Scores every method with predictions against the true ground truth and
// writes reports/<variant>/: metrics_<method>.json, comparison.{csv,txt}, errors_long.csv.
std::vector<eval::MetricReport> evaluate(const RunConfig& config, const fs::path& workdir, const Variant& v,
                                         const std::vector<std::string>& methods, const Options& opts = {});

// The labels x tags grid for eval.ablation_models; writes reports/ablation/summary.{csv,txt}.
eval::AblationSummary ablate(const RunConfig& config, const fs::path& workdir, const Options& opts = {});

// Prediction file: provenance line, then stamp,x0,y0,z0[,x1,y1,z1].
void write_track_csv(const std::vector<double>& stamps, const eval::Track& track, const fs::path& path,
                     const std::string& provenance);
eval::TrajectoryEstimate read_track_csv(const fs::path& path);

}  // namespace uwbseq::pipeline
