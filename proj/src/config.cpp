#include "uwbseq/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "uwbseq/rng.hpp"

namespace uwbseq {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 to_vec(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument(path + ": expected [x, y, z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

// Overlay `patch` onto `base` (both objects), rejecting keys base lacks.
void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw std::invalid_argument((path.empty() ? "config" : path) + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else {
      const bool numeric = slot.is_number() && it.value().is_number();
      if (!numeric && slot.type() != it.value().type())
        throw std::invalid_argument("config key '" + key + "' has the wrong type");
      slot = it.value();
    }
  }
}

template <class T>
T field(const json& j, const char* key) {
  return j.at(key).get<T>();
}

}  // namespace

json config_to_json(const RunConfig& c) {
  const auto& cc = c.environment.campus;
  json j;
  j["environment"] = {
      {"bounds", {{"lo", vec(cc.bounds.lo)}, {"hi", vec(cc.bounds.hi)}}},
      {"road_nx", cc.road_nx},
      {"road_ny", cc.road_ny},
      {"n_anchors", cc.n_anchors},
      {"anchor_height_min", cc.anchor_height_min},
      {"anchor_height_max", cc.anchor_height_max},
      {"building_margin", cc.building_margin},
      {"building_height", cc.building_height},
      {"buildings_per_block", cc.buildings_per_block},
      {"alley_width", cc.alley_width},
      {"scale_spread", cc.scale_spread},
      {"bias_min", cc.bias_min},
      {"bias_max", cc.bias_max},
      {"vehicle_z_min", cc.vehicle_z_min},
      {"vehicle_z_max", cc.vehicle_z_max},
      {"osl_bumps", c.environment.osl_bumps},
      {"osl_z_amplitude", c.environment.osl_z_amplitude},
      {"osl_xy_bound", c.environment.osl_xy_bound},
      {"osl_min_length_scale", c.environment.osl_min_length_scale},
      {"osl_max_length_scale", c.environment.osl_max_length_scale},
  };
  const auto& n = c.noise.model;
  j["noise"] = {
      {"sigma_range", n.sigma_range},       {"p_outlier", n.p_outlier},
      {"outlier_spread", n.outlier_spread}, {"nlos_bias", n.nlos_bias},
      {"p_detect_los", n.p_detect_los},     {"p_detect_nlos", n.p_detect_nlos},
      // JSON has no infinity; 0 means unlimited.
      {"max_range", std::isfinite(n.max_range) ? n.max_range : 0.0},
      {"rate_hz", c.noise.rate_hz},
  };
  j["trajectory"] = {
      {"waypoint_count", c.trajectory.waypoint_count},
      {"speed", c.trajectory.speed},
      {"dt", c.trajectory.dt},
      {"corner_radius", c.trajectory.corner_radius},
  };
  json mounts = json::array();
  for (const auto& m : c.dataset.mounts) mounts.push_back(vec(m));
  j["dataset"] = {
      {"n_trials", c.dataset.n_trials}, {"n_train", c.dataset.n_train}, {"window", c.dataset.window},
      {"bin_width", c.dataset.bin_width}, {"labels", c.dataset.labels}, {"tags", c.dataset.tags},
      {"mounts", mounts},
  };
  const auto& mc = c.model.mamba;
  const auto& rc = c.model.rnn;
  j["model"] = {
      {"kinds", c.model.kinds},
      {"mamba",
       {{"d_model", mc.d_model},
        {"n_blocks", mc.n_blocks},
        {"d_state", mc.d_state},
        {"expand", mc.expand},
        {"conv_width", mc.conv_width},
        {"dt_rank", mc.dt_rank},
        {"dt_min", mc.dt_min},
        {"dt_max", mc.dt_max}}},
      {"rnn", {{"hidden_size", rc.hidden_size}, {"n_layers", rc.n_layers}}},
  };
  const auto& t = c.train;
  j["train"] = {
      {"batch", t.batch},   {"epochs", t.epochs},   {"lr0", t.lr0},           {"lr_step", t.lr_step},
      {"lr_factor", t.lr_factor}, {"repeats", t.repeats}, {"max_steps", t.max_steps},
  };
  const auto& g = c.go;
  j["go"] = {
      {"window_frames", g.window_frames},
      {"huber_delta", g.huber_delta},
      {"max_iters", g.max_iters},
      {"rel_tol", g.rel_tol},
      {"lm_lambda0", g.lm_lambda0},
      {"motion_sigma", g.motion_sigma},
      {"link_sigma", g.link_sigma},
      {"init_mode", g.init_mode == go::InitMode::Centroid ? "centroid" : "previous-solution"},
  };
  j["eval"] = {{"aggregation", c.eval.aggregation}, {"ablation_models", c.eval.ablation_models}};
  j["seed"] = c.seed;
  return j;
}

RunConfig config_from_json(const json& doc, const RunConfig& base) {
  json j = config_to_json(base);
  overlay(j, doc, "");

  RunConfig c;
  const json& e = j.at("environment");
  auto& cc = c.environment.campus;
  cc.bounds = Box{to_vec(e.at("bounds").at("lo"), "environment.bounds.lo"), to_vec(e.at("bounds").at("hi"), "environment.bounds.hi")};
  cc.road_nx = field<int>(e, "road_nx");
  cc.road_ny = field<int>(e, "road_ny");
  cc.n_anchors = field<int>(e, "n_anchors");
  cc.anchor_height_min = field<double>(e, "anchor_height_min");
  cc.anchor_height_max = field<double>(e, "anchor_height_max");
  cc.building_margin = field<double>(e, "building_margin");
  cc.building_height = field<double>(e, "building_height");
  cc.buildings_per_block = field<int>(e, "buildings_per_block");
  cc.alley_width = field<double>(e, "alley_width");
  cc.scale_spread = field<double>(e, "scale_spread");
  cc.bias_min = field<double>(e, "bias_min");
  cc.bias_max = field<double>(e, "bias_max");
  cc.vehicle_z_min = field<double>(e, "vehicle_z_min");
  cc.vehicle_z_max = field<double>(e, "vehicle_z_max");
  c.environment.osl_bumps = field<int>(e, "osl_bumps");
  c.environment.osl_z_amplitude = field<double>(e, "osl_z_amplitude");
  c.environment.osl_xy_bound = field<double>(e, "osl_xy_bound");
  c.environment.osl_min_length_scale = field<double>(e, "osl_min_length_scale");
  c.environment.osl_max_length_scale = field<double>(e, "osl_max_length_scale");

  const json& n = j.at("noise");
  auto& nm = c.noise.model;
  nm.sigma_range = field<double>(n, "sigma_range");
  nm.p_outlier = field<double>(n, "p_outlier");
  nm.outlier_spread = field<double>(n, "outlier_spread");
  nm.nlos_bias = field<double>(n, "nlos_bias");
  nm.p_detect_los = field<double>(n, "p_detect_los");
  nm.p_detect_nlos = field<double>(n, "p_detect_nlos");
  const double max_range = field<double>(n, "max_range");
  nm.max_range = max_range > 0.0 ? max_range : std::numeric_limits<double>::infinity();
  c.noise.rate_hz = field<double>(n, "rate_hz");

  const json& tr = j.at("trajectory");
  c.trajectory.waypoint_count = field<int>(tr, "waypoint_count");
  c.trajectory.speed = field<double>(tr, "speed");
  c.trajectory.dt = field<double>(tr, "dt");
  c.trajectory.corner_radius = field<double>(tr, "corner_radius");
  c.trajectory.road_nx = cc.road_nx;
  c.trajectory.road_ny = cc.road_ny;

  const json& d = j.at("dataset");
  c.dataset.n_trials = field<int>(d, "n_trials");
  c.dataset.n_train = field<int>(d, "n_train");
  c.dataset.window = field<std::size_t>(d, "window");
  c.dataset.bin_width = field<double>(d, "bin_width");
  c.dataset.labels = field<std::string>(d, "labels");
  c.dataset.tags = field<int>(d, "tags");
  c.dataset.mounts.clear();
  for (std::size_t i = 0; i < d.at("mounts").size(); ++i)
    c.dataset.mounts.push_back(to_vec(d.at("mounts")[i], "dataset.mounts[" + std::to_string(i) + "]"));

  const json& m = j.at("model");
  c.model.kinds = field<std::vector<std::string>>(m, "kinds");
  const json& mm = m.at("mamba");
  auto& mc = c.model.mamba;
  mc.d_model = field<std::size_t>(mm, "d_model");
  mc.n_blocks = field<std::size_t>(mm, "n_blocks");
  mc.d_state = field<std::size_t>(mm, "d_state");
  mc.expand = field<std::size_t>(mm, "expand");
  mc.conv_width = field<std::size_t>(mm, "conv_width");
  mc.dt_rank = field<std::size_t>(mm, "dt_rank");
  mc.dt_min = field<double>(mm, "dt_min");
  mc.dt_max = field<double>(mm, "dt_max");
  mc.window = c.dataset.window;
  c.model.rnn.hidden_size = field<std::size_t>(m.at("rnn"), "hidden_size");
  c.model.rnn.n_layers = field<std::size_t>(m.at("rnn"), "n_layers");

  const json& t = j.at("train");
  c.train.batch = field<std::size_t>(t, "batch");
  c.train.epochs = field<int>(t, "epochs");
  c.train.lr0 = field<double>(t, "lr0");
  c.train.lr_step = field<int>(t, "lr_step");
  c.train.lr_factor = field<double>(t, "lr_factor");
  c.train.repeats = field<int>(t, "repeats");
  c.train.max_steps = field<std::size_t>(t, "max_steps");

  const json& g = j.at("go");
  c.go.window_frames = field<std::size_t>(g, "window_frames");
  c.go.huber_delta = field<double>(g, "huber_delta");
  c.go.max_iters = field<int>(g, "max_iters");
  c.go.rel_tol = field<double>(g, "rel_tol");
  c.go.lm_lambda0 = field<double>(g, "lm_lambda0");
  c.go.motion_sigma = field<double>(g, "motion_sigma");
  c.go.link_sigma = field<double>(g, "link_sigma");
  const auto init = field<std::string>(g, "init_mode");
  if (init == "centroid") c.go.init_mode = go::InitMode::Centroid;
  else if (init == "previous-solution") c.go.init_mode = go::InitMode::PreviousSolution;
  else throw std::invalid_argument("go.init_mode: expected centroid or previous-solution, got '" + init + "'");

  c.eval.aggregation = field<std::string>(j.at("eval"), "aggregation");
  c.eval.ablation_models = field<std::vector<std::string>>(j.at("eval"), "ablation_models");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train.seed = c.seed;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  noise.model.validate();
  if (!(noise.rate_hz > 0.0)) fail("noise.rate_hz must be positive");
  if (environment.campus.n_anchors < 1) fail("environment.n_anchors must be at least 1");
  if (environment.osl_bumps < 0) fail("environment.osl_bumps must be non-negative");
  if (!(environment.osl_xy_bound >= 0.0)) fail("environment.osl_xy_bound must be non-negative");
  if (!(trajectory.speed > 0.0) || !(trajectory.dt > 0.0)) fail("trajectory.speed and trajectory.dt must be positive");
  if (trajectory.waypoint_count < 2) fail("trajectory.waypoint_count must be at least 2");
  if (dataset.n_trials < 1) fail("dataset.n_trials must be at least 1");
  if (dataset.n_train < 0 || dataset.n_train > dataset.n_trials) fail("dataset.n_train must be within [0, n_trials]");
  if (dataset.window < 1) fail("dataset.window must be at least 1");
  if (!(dataset.bin_width > 0.0)) fail("dataset.bin_width must be positive");
  if (dataset.labels != "osl" && dataset.labels != "gt") fail("dataset.labels must be osl or gt");
  if (dataset.tags < 1 || static_cast<std::size_t>(dataset.tags) > dataset.mounts.size())
    fail("dataset.tags must be between 1 and the number of mounts");
  for (const auto& k : model.kinds)
    if (k != "mamba") models::parse_cell(k);
  for (const auto& k : eval.ablation_models)
    if (k != "mamba") models::parse_cell(k);
  if (eval.aggregation != "average" && eval.aggregation != "last") fail("eval.aggregation must be average or last");
  if (train.batch == 0 || train.epochs < 1 || train.repeats < 1) fail("train.batch, epochs and repeats must be positive");
  go.validate();
}

std::uint64_t RunConfig::hash() const {
  json j = config_to_json(*this);
  j.erase("seed");
  return fnv1a64(j.dump());
}

RunConfig profile(const std::string& name) {
  if (name == "paper") return config_from_json(json::object());
  if (name == "desk") {
    const json desk = {
        {"trajectory", {{"waypoint_count", 4}, {"speed", 8.0}}},
        {"dataset", {{"window", 20}}},
        {"model", {{"mamba", {{"d_model", 32}, {"n_blocks", 2}, {"d_state", 8}}}, {"rnn", {{"hidden_size", 32}}}}},
        {"train", {{"epochs", 4}, {"repeats", 1}, {"lr_step", 2}}},
    };
    return config_from_json(desk);
  }
  throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(doc, base);
}

}  // namespace uwbseq
