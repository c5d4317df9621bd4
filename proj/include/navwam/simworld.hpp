#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "navwam/config.hpp"
#include "navwam/geometry.hpp"

namespace navwam {

struct Landmark {
  int id = 0;
  Vec3 pos{0, 0, 0};
  double radius = 0.5;
};

struct WorldBounds {
  double x_min, x_max, y_min, y_max, z_min, z_max;
};

struct Scene {
  std::vector<Landmark> landmarks;
  WorldBounds bounds;
};

enum class TaskFamily : int {
  Approach = 0,
  Retreat,
  Ascend,
  Descend,
  Turn,
  Shift,
  Orbit,
};
constexpr int kNumFamilies = 7;

const char* family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);

enum class Difficulty : int { Easy = 0, Medium, Hard };
const char* difficulty_name(Difficulty d);
Difficulty difficulty_from_name(const std::string& name);

// One low-level sub-task. magnitude is always the exact center of its
// quantization bucket, so the token sequence determines the task exactly.
struct Primitive {
  TaskFamily family;
  int landmark_id = -1;  // -1 for egocentric families
  int magnitude_bucket = 0;
  double magnitude = 0.0;
};

// Token layout: 3 slots x (family, landmark, magnitude), PAD-filled.
constexpr int kInstructionSlots = 3;
constexpr int kTokensPerSlot = 3;
constexpr int kInstructionTokens = kInstructionSlots * kTokensPerSlot;
constexpr int kVocabSize = 33;  // PAD, 7 families, 8 landmarks, LM_NONE, 16 buckets
constexpr int kMagnitudeBuckets = 16;

struct Instruction {
  TaskFamily task_family;  // leading primitive, used for per-family reporting
  std::vector<Primitive> primitives;
  std::vector<int> tokens;  // length kInstructionTokens
};

std::vector<int> tokens_from_primitives(const std::vector<Primitive>& prims);
// Inverse of tokens_from_primitives; magnitudes are reconstructed from bucket
// centers. VocabError on malformed sequences.
std::vector<Primitive> primitives_from_tokens(const std::vector<int>& tokens);
double magnitude_from_bucket(TaskFamily f, int bucket);

struct SimParams {
  int k = 4;
  int n_segments = 6;
  double epsilon = 0.5;
  ActionBounds bounds{1.0, 0.5};
  double fov_half_angle = 1.0471975511965976;
  double r_max = 20.0;
  WorldBounds world{-20, 20, -20, 20, 0, 8};
  int max_landmarks = 4;
  double margin_scale = 5.0;
  double yaw_weight = 1.0;

  int horizon_steps() const { return k * n_segments; }
  int d_obs() const { return 4 + 5 * max_landmarks; }

  static SimParams from_config(const RunConfig& c);
};

// Feature vector in raw physical units:
//   [z, sin psi, cos psi, boundary margin (clamped to margin_scale),
//    per slot: body dx, body dy, dz, 3-D range, visibility]
// Invisible or absent landmark slots are zeroed.
struct Observation {
  std::vector<double> f;
};

// Divides each feature by its physical scale so everything lands in ~[-1, 1].
std::vector<double> normalize_observation(const Observation& o, const SimParams& p);

struct EpisodeSpec {
  std::uint64_t seed = 0;
  TaskFamily family = TaskFamily::Approach;
  Difficulty difficulty = Difficulty::Easy;
  Scene scene;
  Instruction instruction;
  Pose start;
  Vec3 target{0, 0, 0};
  double epsilon = 0.5;
  int horizon_segments = 6;
};

struct Demo {
  EpisodeSpec spec;
  std::vector<Action> expert_actions;  // padded with hover to n*K
  Trajectory expert_poses;             // 1 + n*K poses
};

// Deterministic in seed; landmarks pairwise separated by >= 2(r_i + r_j).
// GenerationError after bounded retries.
Scene generate_scene(std::uint64_t seed, const SimParams& p);

// Deterministic in (family, seed, difficulty). The expert action sequence is
// produced by analytic per-family controllers, lands on the target exactly,
// and is padded with hover steps to the full horizon. GenerationError when no
// feasible draw fits the horizon after bounded retries.
Demo generate_episode(TaskFamily family, std::uint64_t seed, Difficulty difficulty,
                      const SimParams& p);

// clamped (optional) reports whether the pose had to be clamped into bounds.
Observation render_observation(const Scene& scene, const Pose& pose,
                               const SimParams& p, bool* clamped = nullptr);

bool check_success(const Pose& final_pose, const Vec3& target, double epsilon);

// Independent episode state machine. Instances may be stepped concurrently
// with each other but a single instance is single-worker.
class Environment {
 public:
  Environment(EpisodeSpec spec, const SimParams& p);

  struct StepResult {
    Pose pose;
    Observation obs;
    bool done = false;
  };

  // Clamps the action into bounds (clamping is part of this interface),
  // applies it, renders. ProtocolError when stepping a finished episode.
  StepResult step(const Action& a);

  const Pose& pose() const { return pose_; }
  int steps_taken() const { return steps_; }
  bool done() const { return steps_ >= params_.horizon_steps(); }
  bool succeeded() const;  // strict < epsilon at the current pose
  Observation observe() const;
  const EpisodeSpec& spec() const { return spec_; }
  int pose_clamp_count() const { return clamp_count_; }

 private:
  EpisodeSpec spec_;
  SimParams params_;
  Pose pose_;
  int steps_ = 0;
  int clamp_count_ = 0;
};

// --- demonstration files -------------------------------------------------
//
// Line-delimited; line 1 is a header {format, config_hash, count}, then one
// episode per line. All scalars are decimal text with 12 significant digits.
// The writer rounds actions/start through text first and stores the poses
// produced by replaying the rounded values, so re-executing the stored
// actions reproduces the stored trajectory exactly.

void write_demos(const std::string& path, const std::vector<Demo>& demos,
                 std::uint64_t cfg_hash);
// expected_hash 0 skips the compatibility check.
std::vector<Demo> read_demos(const std::string& path, std::uint64_t expected_hash);

std::string demo_to_line(const Demo& demo);
Demo demo_from_line(const std::string& line);

std::vector<Difficulty> parse_difficulty_mix(const std::string& mix);

}  // namespace navwam
