#include "navwam/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "navwam/errors.hpp"
#include "navwam/parallel.hpp"
#include "navwam/rng.hpp"

namespace navwam {

using json = nlohmann::json;

Demo SuiteSpec::episode(int index, const SimParams& sim) const {
  const TaskFamily family = families[static_cast<std::size_t>(index) % families.size()];
  return generate_episode(family, seed_start + static_cast<std::uint64_t>(index),
                          difficulty, sim);
}

SuiteSpec load_suite(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("cannot open suite spec: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("suite spec parse error: ") + e.what());
  }
  SuiteSpec s;
  s.suite_id = j.at("suite_id").get<std::string>();
  s.difficulty = difficulty_from_name(j.at("difficulty").get<std::string>());
  s.count = j.at("count").get<int>();
  s.seed_start = j.at("seed_start").get<std::uint64_t>();
  for (const auto& name : j.at("families")) {
    s.families.push_back(family_from_name(name.get<std::string>()));
  }
  if (s.families.empty() || s.count < 1) throw ConfigError("suite spec degenerate");
  return s;
}

const char* rng_policy_name(RngPolicy p) {
  return p == RngPolicy::MeanAction ? "mean_action" : "sampled";
}

RngPolicy rng_policy_from_name(const std::string& name) {
  if (name == "mean_action") return RngPolicy::MeanAction;
  if (name == "sampled") return RngPolicy::Sampled;
  throw std::invalid_argument("unknown rng policy: " + name);
}

namespace {

EvalReport assemble(const SuiteSpec& suite, std::vector<EpisodeRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const EpisodeRow& a, const EpisodeRow& b) { return a.seed < b.seed; });
  EvalReport r;
  r.suite_id = suite.suite_id;
  r.episode_count = static_cast<int>(rows.size());
  int wins = 0;
  double ndtw_sum = 0.0;
  for (const EpisodeRow& row : rows) {
    wins += row.success ? 1 : 0;
    ndtw_sum += row.ndtw;
    FamilyStats& fs = r.per_family[family_name(row.family)];
    fs.count += 1;
    fs.successes += row.success ? 1 : 0;
    fs.ndtw_sum += row.ndtw;
  }
  r.overall_sr = rows.empty() ? 0.0 : static_cast<double>(wins) / rows.size();
  r.mean_ndtw = rows.empty() ? 0.0 : ndtw_sum / rows.size();
  r.rows = std::move(rows);
  return r;
}

}  // namespace

EvalReport evaluate(const ParameterStore& store, const ModelConfig& cfg,
                    const SimParams& sim, const SuiteSpec& suite, RolloutMode mode,
                    RngPolicy rng_policy, std::uint64_t config_hash_value,
                    std::uint64_t eval_seed) {
  std::vector<EpisodeRow> rows(static_cast<std::size_t>(suite.count));
  parallel_for_indexed(rows.size(), [&](std::size_t i) {
    const Demo episode = suite.episode(static_cast<int>(i), sim);
    Rng rng(mix_seed(eval_seed, episode.spec.seed));
    const bool sample = rng_policy == RngPolicy::Sampled;
    const RolloutResult rr = roll_episode(store, cfg, sim, episode, mode, sample,
                                          sample ? &rng : nullptr);
    EpisodeRow row;
    row.seed = episode.spec.seed;
    row.family = episode.spec.family;
    row.success = rr.success;
    row.endpoint_dist = endpoint_distance(rr.terminal, episode.spec.target);
    row.ndtw = ndtw(rr.poses, episode.expert_poses, episode.spec.epsilon, sim.yaw_weight);
    rows[i] = row;
  });
  EvalReport r = assemble(suite, std::move(rows));
  r.checkpoint_id = checkpoint_id(config_hash_value, store.step);
  r.mode = rollout_mode_name(mode);
  r.rng_policy = rng_policy_name(rng_policy);
  r.config_hash = hash_hex(config_hash_value);
  return r;
}

EvalReport evaluate_oracle(const SimParams& sim, const SuiteSpec& suite) {
  std::vector<EpisodeRow> rows(static_cast<std::size_t>(suite.count));
  parallel_for_indexed(rows.size(), [&](std::size_t i) {
    const Demo episode = suite.episode(static_cast<int>(i), sim);
    Environment env(episode.spec, sim);
    Trajectory poses;
    poses.push_back(episode.spec.start);
    for (const Action& a : episode.expert_actions) {
      poses.push_back(env.step(a).pose);
    }
    EpisodeRow row;
    row.seed = episode.spec.seed;
    row.family = episode.spec.family;
    row.success = env.succeeded();
    row.endpoint_dist = endpoint_distance(env.pose(), episode.spec.target);
    row.ndtw = ndtw(poses, episode.expert_poses, episode.spec.epsilon, sim.yaw_weight);
    rows[i] = row;
  });
  EvalReport r = assemble(suite, std::move(rows));
  r.checkpoint_id = "oracle";
  r.mode = "expert_replay";
  r.rng_policy = "none";
  r.config_hash = hash_hex(0);
  return r;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["suite_id"] = report.suite_id;
  j["checkpoint_id"] = report.checkpoint_id;
  j["mode"] = report.mode;
  j["rng_policy"] = report.rng_policy;
  j["config_hash"] = report.config_hash;
  j["episode_count"] = report.episode_count;
  j["overall_sr"] = report.overall_sr;
  j["mean_ndtw"] = report.mean_ndtw;
  nlohmann::ordered_json fam = nlohmann::ordered_json::object();
  for (const auto& [name, fs] : report.per_family) {
    fam[name] = {{"count", fs.count},
                 {"successes", fs.successes},
                 {"sr", fs.sr()},
                 {"mean_ndtw", fs.mean_ndtw()}};
  }
  j["per_family"] = fam;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const EpisodeRow& row : report.rows) {
    rows.push_back({{"seed", row.seed},
                    {"family", family_name(row.family)},
                    {"success", row.success},
                    {"endpoint_dist", row.endpoint_dist},
                    {"ndtw", row.ndtw}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("report parse error: ") + e.what());
  }
  EvalReport r;
  r.suite_id = j.at("suite_id").get<std::string>();
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.rng_policy = j.at("rng_policy").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.episode_count = j.at("episode_count").get<int>();
  r.overall_sr = j.at("overall_sr").get<double>();
  r.mean_ndtw = j.at("mean_ndtw").get<double>();
  for (auto it = j.at("per_family").begin(); it != j.at("per_family").end(); ++it) {
    FamilyStats fs;
    fs.count = it.value().at("count").get<int>();
    fs.successes = it.value().at("successes").get<int>();
    fs.ndtw_sum = it.value().at("mean_ndtw").get<double>() * fs.count;
    r.per_family[it.key()] = fs;
  }
  for (const auto& row : j.at("rows")) {
    EpisodeRow er;
    er.seed = row.at("seed").get<std::uint64_t>();
    er.family = family_from_name(row.at("family").get<std::string>());
    er.success = row.at("success").get<bool>();
    er.endpoint_dist = row.at("endpoint_dist").get<double>();
    er.ndtw = row.at("ndtw").get<double>();
    r.rows.push_back(er);
  }
  return r;
}

CompareTable compare(const EvalReport& a, const EvalReport& b) {
  if (a.suite_id != b.suite_id) {
    throw std::invalid_argument("compare: reports come from different suites");
  }
  CompareTable t;
  t.suite_id = a.suite_id;
  t.report_a = a.checkpoint_id + "/" + a.mode;
  t.report_b = b.checkpoint_id + "/" + b.mode;
  t.overall_sr_delta = b.overall_sr - a.overall_sr;
  t.overall_ndtw_delta = b.mean_ndtw - a.mean_ndtw;
  for (const auto& [family, fa] : a.per_family) {
    const auto it = b.per_family.find(family);
    if (it == b.per_family.end()) continue;
    CompareRow row;
    row.family = family;
    row.sr_delta = it->second.sr() - fa.sr();
    row.ndtw_delta = it->second.mean_ndtw() - fa.mean_ndtw();
    t.rows.push_back(row);
  }
  return t;
}

std::string compare_to_json(const CompareTable& table) {
  nlohmann::ordered_json j;
  j["suite_id"] = table.suite_id;
  j["report_a"] = table.report_a;
  j["report_b"] = table.report_b;
  j["overall_sr_delta"] = table.overall_sr_delta;
  j["overall_ndtw_delta"] = table.overall_ndtw_delta;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const CompareRow& row : table.rows) {
    rows.push_back({{"family", row.family},
                    {"sr_delta", row.sr_delta},
                    {"ndtw_delta", row.ndtw_delta}});
  }
  j["per_family"] = rows;
  return j.dump(2) + "\n";
}

LatentProbeResult latent_probe(const ParameterStore& store, const ModelConfig& cfg,
                               const SimParams& sim, const Demo& episode,
                               RolloutMode mode) {
  const RolloutResult rr = roll_episode(store, cfg, sim, episode, mode, false, nullptr);
  LatentProbeResult out;
  for (const SegmentTrace& seg : rr.segments) {
    out.divergence.push_back(seg.divergence);
    out.decode_rmse.push_back(seg.decode_rmse);
  }
  return out;
}

std::vector<std::string> emit_curves(const std::string& log_path,
                                     const std::string& out_dir) {
  std::ifstream f(log_path);
  if (!f) throw MissingArtifact("cannot open training log: " + log_path);
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    line_no += 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError("training log line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
      throw ConfigError("training log line " + std::to_string(line_no) +
                        ": record is not an object");
    }
    double step = static_cast<double>(line_no);
    if (j.contains("iteration") && j["iteration"].is_number()) {
      step = j["iteration"].get<double>();
    } else if (j.contains("epoch") && j["epoch"].is_number()) {
      step = j["epoch"].get<double>();
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "iteration" || it.key() == "epoch") continue;
      if (!it.value().is_number()) continue;
      series[it.key()].push_back({step, it.value().get<double>()});
    }
  }
  std::vector<std::string> written;
  std::filesystem::create_directories(out_dir);
  for (const auto& [key, points] : series) {
    const std::string path = (std::filesystem::path(out_dir) / (key + ".dat")).string();
    std::ofstream out(path);
    char buf[64];
    for (const auto& [step, value] : points) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", step, value);
      out << buf;
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace navwam
