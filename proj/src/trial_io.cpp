#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "uwbseq/csv.hpp"
#include "uwbseq/sim.hpp"

namespace uwbseq {

namespace {

using nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

void write_track(const TagTrack& track, const std::filesystem::path& path, const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << provenance << "\nstamp";
  for (std::size_t i = 0; i < track.n_tags(); ++i) out << ",x" << i << ",y" << i << ",z" << i;
  out << '\n';
  for (std::size_t k = 0; k < track.stamps.size(); ++k) {
    out << fmt_sig(track.stamps[k]);
    for (const auto& p : track.positions[k]) out << ',' << fmt_sig(p.x()) << ',' << fmt_sig(p.y()) << ',' << fmt_sig(p.z());
    out << '\n';
  }
}

TagTrack read_track(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  if (table.header.empty() || (table.header.size() - 1) % 3 != 0)
    throw std::runtime_error(path.string() + ": malformed track header");
  const std::size_t n_tags = (table.header.size() - 1) / 3;
  TagTrack track;
  for (const auto& row : table.rows) {
    track.stamps.push_back(row[0]);
    std::vector<Vec3> tags;
    for (std::size_t i = 0; i < n_tags; ++i) tags.emplace_back(row[1 + 3 * i], row[2 + 3 * i], row[3 + 3 * i]);
    track.positions.push_back(std::move(tags));
  }
  return track;
}

json box_json(const Box& b) { return json{{"lo", vec_json(b.lo)}, {"hi", vec_json(b.hi)}}; }
Box json_box(const json& j) { return Box{json_vec(j.at("lo")), json_vec(j.at("hi"))}; }

}  // namespace

void write_trial(const Trial& trial, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "meas.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "meas.csv").string());
    out << provenance_line(trial.config_hash, trial.seed) << "\nstamp,tag_id,anchor_id,range\n";
    for (const auto& r : trial.log)
      out << fmt_sig(r.stamp) << ',' << r.tag_id << ',' << r.anchor_id << ',' << fmt_sig(r.range) << '\n';
  }
  const std::string provenance = provenance_line(trial.config_hash, trial.seed);
  write_track(trial.ground_truth, dir / "gt.csv", provenance);
  write_track(trial.osl, dir / "osl.csv", provenance);

  json env;
  env["trial_id"] = trial.trial_id;
  env["seed"] = trial.seed;
  env["config_hash"] = hash_hex(trial.config_hash);
  env["bounds"] = box_json(trial.env.bounds);
  for (const auto& a : trial.env.anchors)
    env["anchors"].push_back(
        {{"anchor_id", a.anchor_id}, {"position", vec_json(a.position)}, {"scale", a.scale}, {"bias", a.bias}});
  env["occluders"] = json::array();
  for (const auto& o : trial.env.occluders) env["occluders"].push_back(box_json(o));
  for (const auto& m : trial.mounts)
    env["mounts"].push_back({{"tag_id", m.tag_id}, {"body_offset", vec_json(m.body_offset)}});
  std::ofstream out(dir / "env.json");
  out << env.dump(2) << '\n';
}

Trial read_trial(const std::filesystem::path& dir) {
  Trial trial;
  std::ifstream in(dir / "env.json");
  if (!in) throw std::runtime_error("missing " + (dir / "env.json").string());
  const json env = json::parse(in);
  trial.trial_id = env.at("trial_id").get<int>();
  trial.seed = env.at("seed").get<std::uint64_t>();
  trial.config_hash = parse_hash_hex(env.at("config_hash").get<std::string>());
  trial.env.bounds = json_box(env.at("bounds"));
  for (const auto& a : env.at("anchors"))
    trial.env.anchors.push_back(
        {a.at("anchor_id").get<int>(), json_vec(a.at("position")), a.at("scale").get<double>(), a.at("bias").get<double>()});
  for (const auto& o : env.at("occluders")) trial.env.occluders.push_back(json_box(o));
  for (const auto& m : env.at("mounts")) trial.mounts.push_back({m.at("tag_id").get<int>(), json_vec(m.at("body_offset"))});

  const auto meas = read_csv(dir / "meas.csv");
  for (const auto& row : meas.rows) {
    if (row.size() != 4) throw std::runtime_error((dir / "meas.csv").string() + ": expected 4 columns");
    trial.log.push_back({row[0], static_cast<int>(row[1]), static_cast<int>(row[2]), row[3]});
  }
  trial.ground_truth = read_track(dir / "gt.csv");
  trial.osl = read_track(dir / "osl.csv");
  return trial;
}

}  // namespace uwbseq
