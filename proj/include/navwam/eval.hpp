#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "navwam/model.hpp"
#include "navwam/simworld.hpp"

namespace navwam {

struct SuiteSpec {
  std::string suite_id;
  Difficulty difficulty = Difficulty::Easy;
  int count = 200;
  std::uint64_t seed_start = 1000000;
  std::vector<TaskFamily> families;  // cycled over episodes

  Demo episode(int index, const SimParams& sim) const;
};

SuiteSpec load_suite(const std::string& path);

struct EpisodeRow {
  std::uint64_t seed = 0;
  TaskFamily family = TaskFamily::Approach;
  bool success = false;
  double endpoint_dist = 0.0;
  double ndtw = 0.0;
};

struct FamilyStats {
  int count = 0;
  int successes = 0;
  double ndtw_sum = 0.0;
  double sr() const { return count ? static_cast<double>(successes) / count : 0.0; }
  double mean_ndtw() const { return count ? ndtw_sum / count : 0.0; }
};

struct EvalReport {
  std::string suite_id;
  std::string checkpoint_id;
  std::string mode;
  std::string rng_policy;
  std::string config_hash;
  int episode_count = 0;
  double overall_sr = 0.0;
  double mean_ndtw = 0.0;
  std::map<std::string, FamilyStats> per_family;
  std::vector<EpisodeRow> rows;  // ordered by episode seed
};

enum class RngPolicy { MeanAction, Sampled };
const char* rng_policy_name(RngPolicy p);
RngPolicy rng_policy_from_name(const std::string& name);

// Rolls every suite episode to the horizon and aggregates SR / NDTW.
// Deterministic (and idempotent) under mean_action; episodes evaluate in
// parallel with slot-indexed assembly.
EvalReport evaluate(const ParameterStore& store, const ModelConfig& cfg,
                    const SimParams& sim, const SuiteSpec& suite, RolloutMode mode,
                    RngPolicy rng_policy, std::uint64_t config_hash_value,
                    std::uint64_t eval_seed);

// Expert replay baseline: every generated episode is solvable by construction.
EvalReport evaluate_oracle(const SimParams& sim, const SuiteSpec& suite);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

struct CompareRow {
  std::string family;
  double sr_delta = 0.0;
  double ndtw_delta = 0.0;
};

struct CompareTable {
  std::string suite_id;
  std::string report_a;
  std::string report_b;
  double overall_sr_delta = 0.0;
  double overall_ndtw_delta = 0.0;
  std::vector<CompareRow> rows;
};

// b minus a; suite ids must match.
CompareTable compare(const EvalReport& a, const EvalReport& b);
std::string compare_to_json(const CompareTable& table);

struct LatentProbeResult {
  std::vector<double> divergence;   // per segment, ||pred - real||_F
  std::vector<double> decode_rmse;  // per segment
};

// Per-segment prediction drift for one episode in one mode.
LatentProbeResult latent_probe(const ParameterStore& store, const ModelConfig& cfg,
                               const SimParams& sim, const Demo& episode,
                               RolloutMode mode);

// Emits one two-column file per numeric metric key found in a line-delimited
// training log. Returns the written file paths; malformed lines raise
// ConfigError with the 1-based line number.
std::vector<std::string> emit_curves(const std::string& log_path,
                                     const std::string& out_dir);

}  // namespace navwam
