#include "uwbseq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "uwbseq/ad/optim.hpp"
#include "uwbseq/csv.hpp"
#include "uwbseq/go.hpp"
#include "uwbseq/models/train.hpp"
#include "uwbseq/rng.hpp"

namespace uwbseq::pipeline {

using nlohmann::json;

namespace {

std::string trial_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%02d", id);
  return buf;
}

void say(const Options& opts, const std::string& line) {
  if (opts.log) *opts.log << line << '\n' << std::flush;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception wins.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

RunConfig variant_config(const RunConfig& config, const Variant& v) {
  RunConfig c = config;
  c.dataset.labels = v.labels;
  c.dataset.tags = v.tags;
  return c;
}

std::string provenance(const RunConfig& c) { return provenance_line(c.hash(), c.seed); }

json provenance_json(const RunConfig& c) { return {{"config_hash", hash_hex(c.hash())}, {"seed", c.seed}}; }

int method_rank(const std::string& m) {
  static const std::vector<std::string> order = {"go", "gru", "lstm", "bilstm", "mamba"};
  const auto it = std::find(order.begin(), order.end(), m);
  return static_cast<int>(it - order.begin());
}

eval::Track unflatten(const std::vector<double>& flat, std::size_t frames, std::size_t tags) {
  eval::Track t(frames, std::vector<Vec3>(tags));
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t i = 0; i < tags; ++i)
      t[k][i] = Vec3(flat[(k * tags + i) * 3], flat[(k * tags + i) * 3 + 1], flat[(k * tags + i) * 3 + 2]);
  return t;
}

std::vector<FrameVector> trial_frames(const Trial& trial, const ChannelLayout& layout, double bin_width) {
  return bin_measurements(filter_tags(trial.log, layout), layout, bin_width);
}

}  // namespace

fs::path Layout::trial(int id) const { return trials() / trial_name(id); }

void write_manifest(const Manifest& m, const fs::path& path) {
  json j;
  j["config_hash"] = hash_hex(m.config_hash);
  j["seed"] = m.seed;
  j["trials"] = m.trials;
  j["train"] = m.train;
  j["test"] = m.test;
  write_text(path, j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
  const json j = json::parse(read_text(path));
  Manifest m;
  m.config_hash = parse_hash_hex(j.at("config_hash").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.trials = j.at("trials").get<std::vector<int>>();
  m.train = j.at("train").get<std::vector<int>>();
  m.test = j.at("test").get<std::vector<int>>();
  return m;
}

Variant default_variant(const RunConfig& config) { return Variant{config.dataset.labels, config.dataset.tags}; }

Environment site_environment(const RunConfig& config) {
  return make_campus_environment(config.environment.campus, config.seed);
}

OslBiasField site_bias_field(const RunConfig& config) {
  const auto& e = config.environment;
  return OslBiasField::generate(e.campus.bounds, e.osl_bumps, e.osl_z_amplitude, e.osl_xy_bound,
                                e.osl_min_length_scale, e.osl_max_length_scale, config.seed);
}

std::vector<TagMount> site_mounts(const RunConfig& config) {
  std::vector<TagMount> mounts;
  for (std::size_t i = 0; i < config.dataset.mounts.size(); ++i)
    mounts.push_back(TagMount{static_cast<int>(i), config.dataset.mounts[i]});
  return mounts;
}

Trial simulate_trial(const RunConfig& config, const Environment& env, const OslBiasField& field, int trial_id) {
  Trial t;
  t.trial_id = trial_id;
  t.seed = named_stream(config.seed, "trial", static_cast<std::uint64_t>(trial_id))();
  t.config_hash = config.hash();
  t.env = env;
  t.mounts = site_mounts(config);
  TrajectoryConfig tc = config.trajectory;
  tc.road_nx = config.environment.campus.road_nx;
  tc.road_ny = config.environment.campus.road_ny;
  const Trajectory traj = generate_trajectory(vehicle_region(config.environment.campus), tc, t.seed);
  t.log = sample_measurements(env, traj, config.noise.model, config.noise.rate_hz, t.mounts, t.seed);
  t.ground_truth = ground_truth_labels(traj, t.mounts);
  t.osl = osl_labels(traj, field, t.mounts);
  return t;
}

Manifest simulate(const RunConfig& config, const fs::path& workdir, const Options& opts) {
  const Layout dirs{workdir};
  if (fs::exists(dirs.trials())) {
    if (!opts.force) throw std::runtime_error(dirs.trials().string() + " already exists (use --force to overwrite)");
    fs::remove_all(dirs.trials());
  }
  fs::create_directories(dirs.trials());
  const Environment env = site_environment(config);
  const OslBiasField field = site_bias_field(config);

  Manifest m;
  m.config_hash = config.hash();
  m.seed = config.seed;
  for (int i = 0; i < config.dataset.n_trials; ++i) {
    m.trials.push_back(i);
    (i < config.dataset.n_train ? m.train : m.test).push_back(i);
  }
  parallel_for(m.trials.size(), opts.jobs, [&](std::size_t i) {
    write_trial(simulate_trial(config, env, field, m.trials[i]), dirs.trial(m.trials[i]));
  });
  write_manifest(m, dirs.manifest());
  say(opts, "simulated " + std::to_string(m.trials.size()) + " trials: " + std::to_string(m.train.size()) + " train / " +
                std::to_string(m.test.size()) + " test");
  if (m.test.empty()) say(opts, "warning: the test split is empty");
  return m;
}

ChannelLayout variant_layout(const RunConfig& config, const Variant& v) {
  return ChannelLayout::make(v.tags, config.environment.campus.n_anchors);
}

std::vector<PreparedTrial> prepare(const RunConfig& base, const fs::path& workdir, const Variant& v,
                                   const Options& opts) {
  const RunConfig config = variant_config(base, v);
  config.validate();
  const Layout dirs{workdir};
  const Manifest m = read_manifest(dirs.manifest());
  const ChannelLayout layout = variant_layout(config, v);
  std::vector<std::size_t> columns;
  for (int i = 0; i < v.tags; ++i) columns.push_back(static_cast<std::size_t>(i));

  fs::create_directories(dirs.dataset(v) / "frames");
  std::vector<PreparedTrial> summary;
  std::vector<TrialFrames> train, test;
  for (int id : m.trials) {
    const Trial trial = read_trial(dirs.trial(id));
    const auto frames = trial_frames(trial, layout, config.dataset.bin_width);
    const TagTrack& source = v.labels == "gt" ? trial.ground_truth : trial.osl;
    TrialFrames tf = to_trial_frames(attach_labels(frames, source, columns),
                                     attach_labels(frames, trial.ground_truth, columns), id);
    PreparedTrial p{id, tf.frames(), 0, false};
    if (tf.frames() < config.dataset.window) {
      p.skipped = true;
      say(opts, "warning: " + trial_name(id) + " has K=" + std::to_string(p.frames) + " < S=" +
                    std::to_string(config.dataset.window) + ", skipped");
    } else {
      p.windows = tf.frames() - config.dataset.window + 1;
      say(opts, trial_name(id) + ": K=" + std::to_string(p.frames) + " M=" + std::to_string(p.windows));
      export_frames_csv(tf, layout, dirs.dataset(v) / "frames" / (trial_name(id) + ".csv"), provenance(config));
      const bool is_train = std::find(m.train.begin(), m.train.end(), id) != m.train.end();
      (is_train ? train : test).push_back(std::move(tf));
    }
    summary.push_back(p);
  }
  if (train.empty()) throw std::runtime_error("prepare: no usable training trial");

  const Normalizer scaler = fit_normalizer(train, layout.input_dim(), layout.label_dim());
  const DatasetHeader header{config.hash(), config.seed};
  auto build = [&](std::vector<TrialFrames>& trials, const std::string& file) {
    WindowedDataset ds(layout, config.dataset.window);
    for (auto& t : trials) ds.add_trial(std::move(t));
    ds.set_scaler(scaler);
    write_dataset(ds, header, dirs.dataset(v) / file);
  };
  fs::create_directories(dirs.dataset(v));
  build(train, "train.ds");
  build(test, "test.ds");
  return summary;
}

void write_track_csv(const std::vector<double>& stamps, const eval::Track& track, const fs::path& path,
                     const std::string& prov) {
  std::ostringstream out;
  if (!prov.empty()) out << prov << '\n';
  const std::size_t tags = track.empty() ? 0 : track.front().size();
  out << "stamp";
  for (std::size_t i = 0; i < tags; ++i) out << ",x" << i << ",y" << i << ",z" << i;
  out << '\n';
  for (std::size_t k = 0; k < stamps.size(); ++k) {
    out << fmt_sig(stamps[k]);
    for (const auto& p : track[k]) out << ',' << fmt_sig(p.x()) << ',' << fmt_sig(p.y()) << ',' << fmt_sig(p.z());
    out << '\n';
  }
  write_text(path, out.str());
}

eval::TrajectoryEstimate read_track_csv(const fs::path& path) {
  const CsvTable table = read_csv(path);
  // Tag 0 may be written as x,y,z (classical solver output) or x0,y0,z0.
  std::vector<std::array<int, 3>> cols;
  for (int i = 0;; ++i) {
    const std::string s = std::to_string(i);
    std::array<int, 3> c{table.column("x" + s), table.column("y" + s), table.column("z" + s)};
    if (i == 0 && c[0] < 0) c = {table.column("x"), table.column("y"), table.column("z")};
    if (c[0] < 0 || c[1] < 0 || c[2] < 0) break;
    cols.push_back(c);
  }
  const int stamp = table.column("stamp");
  if (stamp < 0 || cols.empty()) throw std::runtime_error(path.string() + ": not a trajectory file");
  eval::TrajectoryEstimate est;
  for (const auto& row : table.rows) {
    est.stamps.push_back(row[static_cast<std::size_t>(stamp)]);
    std::vector<Vec3> tags;
    for (const auto& c : cols)
      tags.emplace_back(row[static_cast<std::size_t>(c[0])], row[static_cast<std::size_t>(c[1])],
                        row[static_cast<std::size_t>(c[2])]);
    est.positions.push_back(std::move(tags));
  }
  return est;
}

void train_models(const RunConfig& base, const fs::path& workdir, const Variant& v,
                  const std::vector<std::string>& kinds, const Options& opts) {
  const RunConfig config = variant_config(base, v);
  const Layout dirs{workdir};
  const fs::path data_dir = dirs.dataset(v);
  DatasetHeader train_header, test_header;
  const WindowedDataset train = read_dataset(data_dir / "train.ds", &train_header);
  const WindowedDataset test = read_dataset(data_dir / "test.ds", &test_header);
  if (train_header.config_hash != config.hash() || test_header.config_hash != config.hash())
    throw std::runtime_error(data_dir.string() + " was prepared with a different config; re-run prepare");
  const auto mode = config.eval.aggregation == "last" ? models::Aggregation::Last : models::Aggregation::Average;
  const json stamp = provenance_json(config);

  for (const auto& kind : kinds) {
    const fs::path done = dirs.predictions(v, kind) / "done.json";
    if (!opts.force && fs::exists(done) && json::parse(read_text(done)) == stamp) {
      say(opts, v.name() + "/" + kind + ": up to date");
      continue;
    }
    fs::remove_all(dirs.predictions(v, kind));
    fs::create_directories(dirs.models(v, kind));
    models::ModelSpec spec;
    spec.kind = kind;
    spec.mamba = config.model.mamba;
    spec.rnn = config.model.rnn;
    for (int r = 0; r < config.train.repeats; ++r) {
      const std::uint64_t seed = named_stream(config.seed, "model/" + kind, static_cast<std::uint64_t>(r))();
      auto model = models::make_model(spec, train.input_dim(), train.label_dim(), train.window_length(), seed);
      models::TrainConfig tc = config.train;
      tc.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      // Test RMSE against ground truth after every epoch, for the log only.
      const auto tags = static_cast<std::size_t>(v.tags);
      const models::EpochHook hook = [&](int) {
        eval::ReportBuilder rb(kind);
        for (std::size_t t = 0; t < test.trials().size(); ++t) {
          const auto& trial = test.trials()[t];
          rb.add_trial(trial.trial_id, unflatten(models::predict_trial(*model, test, t, mode), trial.frames(), tags),
                       unflatten(trial.truth, trial.frames(), tags));
        }
        return rb.build().rmse;
      };
      const auto result = models::train(*model, train, tc, test.trials().empty() ? models::EpochHook{} : hook);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char msg[200];
      std::snprintf(msg, sizeof msg, "%s/%s repeat %d: %zu params, %zu steps, final loss %.6g (%.1f s)",
                    v.name().c_str(), kind.c_str(), r, model->parameter_count(), result.steps,
                    result.curve.back().train_loss, secs);
      say(opts, msg);

      ad::save_checkpoint(model->parameters(), config.hash(), dirs.models(v, kind) / ("repeat_" + std::to_string(r) + ".ckpt"));
      std::ostringstream log;
      log << provenance(config) << "\nepoch,lr,train_loss,test_rmse\n";
      for (const auto& e : result.curve)
        log << e.epoch << ',' << fmt_sig(e.lr) << ',' << fmt_sig(e.train_loss) << ',' << fmt_sig(e.test_rmse) << '\n';
      write_text(dirs.models(v, kind) / ("train_log_" + std::to_string(r) + ".csv"), log.str());

      for (std::size_t t = 0; t < test.trials().size(); ++t) {
        const auto& trial = test.trials()[t];
        const auto flat = models::predict_trial(*model, test, t, mode);
        write_track_csv(trial.stamps, unflatten(flat, trial.frames(), static_cast<std::size_t>(v.tags)),
                        dirs.predictions(v, kind) / ("r" + std::to_string(r)) / (trial_name(trial.trial_id) + ".csv"),
                        provenance(config));
      }
    }
    write_text(done, stamp.dump(2) + "\n");
  }
}

void baseline(const RunConfig& base, const fs::path& workdir, const Variant& v, const Options& opts) {
  const RunConfig config = variant_config(base, v);
  const Layout dirs{workdir};
  const Manifest m = read_manifest(dirs.manifest());
  const ChannelLayout layout = variant_layout(config, v);
  const fs::path out = dirs.predictions(v, "go") / "r0";
  fs::remove_all(dirs.predictions(v, "go"));
  fs::create_directories(out);
  parallel_for(m.test.size(), opts.jobs, [&](std::size_t i) {
    const Trial trial = read_trial(dirs.trial(m.test[i]));
    const auto frames = trial_frames(trial, layout, config.dataset.bin_width);
    const auto traj = go::run_go_pipeline(frames, layout, trial.env, trial.mounts, config.go);
    go::write_go_csv(traj, out / (trial_name(trial.trial_id) + ".csv"), provenance(config));
  });
  write_text(dirs.predictions(v, "go") / "done.json", provenance_json(config).dump(2) + "\n");
  say(opts, v.name() + "/go: solved " + std::to_string(m.test.size()) + " test trials");
}

namespace {

std::vector<eval::MetricReport> evaluate_into(const RunConfig& config, const fs::path& workdir, const Variant& v,
                                              std::vector<std::string> methods, const fs::path& out_dir,
                                              const Options& opts) {
  const Layout dirs{workdir};
  const Manifest m = read_manifest(dirs.manifest());
  if (m.test.empty()) throw std::runtime_error("evaluate: the test split is empty");
  const fs::path pred_root = workdir / "predictions" / v.name();
  if (methods.empty() && fs::exists(pred_root))
    for (const auto& e : fs::directory_iterator(pred_root))
      if (e.is_directory()) methods.push_back(e.path().filename().string());
  if (methods.empty()) throw std::runtime_error("evaluate: no predictions under " + pred_root.string());
  std::stable_sort(methods.begin(), methods.end(), [](const std::string& a, const std::string& b) {
    const int ra = method_rank(a), rb = method_rank(b);
    return ra != rb ? ra < rb : a < b;
  });

  std::map<int, TagTrack> truth;
  for (int id : m.test) truth[id] = read_trial(dirs.trial(id)).ground_truth;

  std::vector<eval::MetricReport> reports;
  std::vector<eval::ErrorSeries> series;
  for (const auto& method : methods) {
    const fs::path dir = dirs.predictions(v, method);
    if (!fs::exists(dir / "r0")) throw std::runtime_error("missing predictions for '" + method + "' in " + dir.string());
    int repeats = 0;
    while (fs::exists(dir / ("r" + std::to_string(repeats)))) ++repeats;
    eval::ReportBuilder builder(method, repeats);
    for (int r = 0; r < repeats; ++r)
      for (int id : m.test) {
        const fs::path file = dir / ("r" + std::to_string(r)) / (trial_name(id) + ".csv");
        if (!fs::exists(file)) throw std::runtime_error("missing prediction file " + file.string());
        const auto est = read_track_csv(file);
        eval::Track ref;
        for (double s : est.stamps) {
          auto sample = truth.at(id).sample(s).positions;
          if (sample.size() < est.positions.front().size())
            throw std::runtime_error(file.string() + ": more tags than the ground truth");
          sample.resize(est.positions.front().size());
          ref.push_back(std::move(sample));
        }
        builder.add_trial(id, est.positions, ref);
        series.push_back({id, method + (repeats > 1 ? "/r" + std::to_string(r) : ""),
                          eval::sample_errors(est.positions, ref)});
      }
    reports.push_back(builder.build());
    json j = json::parse(eval::report_json(reports.back()));
    j.update(provenance_json(config));
    write_text(out_dir / ("metrics_" + method + ".json"), j.dump(2) + "\n");
  }
  const auto table = eval::compare_methods(reports);
  write_text(out_dir / "comparison.csv", provenance(config) + "\n" + table.csv());
  write_text(out_dir / "comparison.txt", provenance(config) + "\n" + table.text());
  eval::write_long_errors(series, out_dir / "errors_long.csv", provenance(config));
  say(opts, v.name() + " test RMSE (m):\n" + table.text());
  return reports;
}

}  // namespace

std::vector<eval::MetricReport> evaluate(const RunConfig& base, const fs::path& workdir, const Variant& v,
                                         const std::vector<std::string>& methods, const Options& opts) {
  return evaluate_into(variant_config(base, v), workdir, v, methods, Layout{workdir}.reports(v), opts);
}

eval::AblationSummary ablate(const RunConfig& config, const fs::path& workdir, const Options& opts) {
  const Layout dirs{workdir};
  std::vector<eval::AblationRun> runs;
  for (const std::string labels : {"gt", "osl"})
    for (int tags : {1, 2}) {
      const Variant v{labels, tags};
      prepare(config, workdir, v, opts);
      train_models(config, workdir, v, config.eval.ablation_models, opts);
      const auto reports = evaluate_into(variant_config(config, v), workdir, v, config.eval.ablation_models,
                                         dirs.ablation() / v.name(), opts);
      for (const auto& r : reports) runs.push_back({labels, tags, r.method, r.rmse});
    }
  const auto summary = eval::ablation_report(runs, config.eval.ablation_models);
  write_text(dirs.ablation() / "summary.csv", provenance(config) + "\n" + summary.csv());
  write_text(dirs.ablation() / "summary.txt", provenance(config) + "\n" + summary.text());
  say(opts, "ablation:\n" + summary.text());
  return summary;
}

}  // namespace uwbseq::pipeline
