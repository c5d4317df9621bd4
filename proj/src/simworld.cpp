#include "navwam/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "navwam/errors.hpp"
#include "navwam/rng.hpp"

namespace navwam {

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr int kPadToken = 0;
constexpr int kFamilyBase = 1;    // 1..7
constexpr int kLandmarkBase = 8;  // 8..15
constexpr int kLandmarkNone = 16;
constexpr int kBucketBase = 17;  // 17..32

struct MagnitudeRange {
  double lo, hi;
};

MagnitudeRange magnitude_range(TaskFamily f) {
  switch (f) {
    case TaskFamily::Approach: return {1.0, 4.0};
    case TaskFamily::Retreat: return {1.0, 6.0};
    case TaskFamily::Ascend: return {0.5, 3.0};
    case TaskFamily::Descend: return {0.5, 3.0};
    case TaskFamily::Turn: return {-kPi, kPi};
    case TaskFamily::Shift: return {-4.0, 4.0};
    case TaskFamily::Orbit: return {-kPi, kPi};
  }
  return {0.0, 1.0};
}

bool family_uses_landmark(TaskFamily f) {
  return f == TaskFamily::Approach || f == TaskFamily::Retreat ||
         f == TaskFamily::Orbit;
}

std::vector<int> difficulty_buckets(TaskFamily f, Difficulty d) {
  auto range = [](int lo, int hi) {
    std::vector<int> v;
    for (int i = lo; i <= hi; ++i) v.push_back(i);
    return v;
  };
  auto join = [](std::vector<int> a, const std::vector<int>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  switch (f) {
    case TaskFamily::Approach:
      return d == Difficulty::Easy ? range(4, 11)
             : d == Difficulty::Medium ? range(2, 9)
                                       : range(0, 7);
    case TaskFamily::Retreat:
      return d == Difficulty::Easy ? range(8, 15)
             : d == Difficulty::Medium ? range(4, 9)
                                       : range(0, 5);
    case TaskFamily::Ascend:
    case TaskFamily::Descend:
      return d == Difficulty::Easy ? range(6, 15)
             : d == Difficulty::Medium ? range(3, 9)
                                       : range(0, 5);
    case TaskFamily::Turn:
    case TaskFamily::Orbit:
      return d == Difficulty::Easy ? join(range(0, 3), range(12, 15))
             : d == Difficulty::Medium ? join(range(2, 5), range(10, 13))
                                       : join(range(4, 6), range(9, 11));
    case TaskFamily::Shift:
      // |center| = 0.25 buckets (7, 8) stay excluded: the target would sit
      // inside the success radius of the start pose.
      return d == Difficulty::Easy ? join(range(0, 3), range(12, 15))
             : d == Difficulty::Medium ? join(range(2, 5), range(10, 13))
                                       : join(range(4, 6), range(9, 11));
  }
  return {0};
}

double horizontal_distance(const Pose& q, const Vec3& p) {
  const double dx = q.x - p[0];
  const double dy = q.y - p[1];
  return std::sqrt(dx * dx + dy * dy);
}

double bearing_to(const Pose& q, const Vec3& p) {
  return std::atan2(p[1] - q.y, p[0] - q.x);
}

// --- analytic expert controllers ---------------------------------------
// All legs land on their targets exactly: rotations consume the signed
// residual in bounded steps, translations scale the body-frame offset so the
// largest component moves at cruise speed until one exact closing step
// remains. Cruise speed keeps a margin inside the action bounds so the
// tanh-squashed action head can represent expert actions exactly.
constexpr double kCruise = 0.95;

void apply(Pose& q, const Action& a, const ActionBounds& b,
           std::vector<Action>& out) {
  out.push_back(a);
  q = compose_pose(q, a, b);
}

void rotate_by(Pose& q, double angle, const ActionBounds& b,
               std::vector<Action>& out) {
  double remaining = angle;
  const double step_cap = kCruise * b.yaw;
  while (std::abs(remaining) > 1e-12) {
    const double step = std::clamp(remaining, -step_cap, step_cap);
    apply(q, Action{0, 0, 0, step}, b, out);
    remaining -= step;
  }
}

void rotate_to(Pose& q, double target_psi, const ActionBounds& b,
               std::vector<Action>& out) {
  rotate_by(q, wrap_angle(target_psi - q.psi), b, out);
}

void translate_to(Pose& q, const Vec3& target, const ActionBounds& b,
                  std::vector<Action>& out) {
  for (int guard = 0; guard < 4096; ++guard) {
    const double wx = target[0] - q.x;
    const double wy = target[1] - q.y;
    const double wz = target[2] - q.z;
    const double c = std::cos(q.psi);
    const double s = std::sin(q.psi);
    const double bx = c * wx + s * wy;
    const double by = -s * wx + c * wy;
    const double bz = wz;
    const double m = std::max({std::abs(bx), std::abs(by), std::abs(bz)});
    if (m < 1e-12) return;
    const double scale = std::min(1.0, kCruise * b.xyz / m);
    apply(q, Action{bx * scale, by * scale, bz * scale, 0.0}, b, out);
    if (scale >= 1.0) return;
  }
  throw GenerationError("translate_to: failed to converge");
}

// Returns the analytic endpoint of a primitive from an entry pose; the
// controller must land there exactly.
Vec3 primitive_endpoint(const Pose& entry, const Primitive& p, const Scene& scene) {
  switch (p.family) {
    case TaskFamily::Approach: {
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(p.landmark_id)];
      const double hd = horizontal_distance(entry, lm.pos);
      double ux = 1.0, uy = 0.0;
      if (hd > 1e-9) {
        ux = (entry.x - lm.pos[0]) / hd;
        uy = (entry.y - lm.pos[1]) / hd;
      }
      const double standoff = lm.radius + p.magnitude;
      return {lm.pos[0] + ux * standoff, lm.pos[1] + uy * standoff, lm.pos[2]};
    }
    case TaskFamily::Retreat: {
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(p.landmark_id)];
      const double hd = horizontal_distance(entry, lm.pos);
      double ux = 1.0, uy = 0.0;
      if (hd > 1e-9) {
        ux = (entry.x - lm.pos[0]) / hd;
        uy = (entry.y - lm.pos[1]) / hd;
      }
      return {entry.x + ux * p.magnitude, entry.y + uy * p.magnitude, entry.z};
    }
    case TaskFamily::Ascend:
      return {entry.x, entry.y, entry.z + p.magnitude};
    case TaskFamily::Descend:
      return {entry.x, entry.y, entry.z - p.magnitude};
    case TaskFamily::Turn:
      return {entry.x, entry.y, entry.z};
    case TaskFamily::Shift:
      return {entry.x - std::sin(entry.psi) * p.magnitude,
              entry.y + std::cos(entry.psi) * p.magnitude, entry.z};
    case TaskFamily::Orbit: {
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(p.landmark_id)];
      const double rx = entry.x - lm.pos[0];
      const double ry = entry.y - lm.pos[1];
      const double c = std::cos(p.magnitude);
      const double s = std::sin(p.magnitude);
      return {lm.pos[0] + c * rx - s * ry, lm.pos[1] + s * rx + c * ry, entry.z};
    }
  }
  return {entry.x, entry.y, entry.z};
}

void run_primitive(Pose& q, const Primitive& p, const Scene& scene,
                   const ActionBounds& b, std::vector<Action>& out) {
  switch (p.family) {
    case TaskFamily::Approach: {
      const Vec3 target = primitive_endpoint(q, p, scene);
      if (horizontal_distance(q, target) > 1e-9) {
        rotate_to(q, bearing_to(q, target), b, out);
      }
      translate_to(q, target, b, out);
      break;
    }
    case TaskFamily::Retreat: {
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(p.landmark_id)];
      const Vec3 target = primitive_endpoint(q, p, scene);
      rotate_to(q, bearing_to(q, lm.pos), b, out);
      translate_to(q, target, b, out);
      break;
    }
    case TaskFamily::Ascend:
    case TaskFamily::Descend:
      translate_to(q, primitive_endpoint(q, p, scene), b, out);
      break;
    case TaskFamily::Turn:
      rotate_by(q, p.magnitude, b, out);
      break;
    case TaskFamily::Shift:
      translate_to(q, primitive_endpoint(q, p, scene), b, out);
      break;
    case TaskFamily::Orbit: {
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(p.landmark_id)];
      rotate_to(q, bearing_to(q, lm.pos), b, out);
      const double radius = horizontal_distance(q, lm.pos);
      if (radius < 1e-9) throw GenerationError("orbit: agent at landmark center");
      const double chord_cap = std::min(1.0, 0.9 * kCruise * b.xyz / radius);
      const double step_cap = std::min(kCruise * b.yaw, std::asin(chord_cap));
      const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(p.magnitude) / step_cap)));
      const double delta = p.magnitude / steps;
      const double bx = radius * (1.0 - std::cos(delta));
      const double by = -radius * std::sin(delta);
      for (int i = 0; i < steps; ++i) {
        apply(q, Action{bx, by, 0.0, delta}, b, out);
      }
      break;
    }
  }
}

std::string fmt12(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double reparse12(double v) { return std::strtod(fmt12(v).c_str(), nullptr); }

}  // namespace

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::Approach: return "Approach";
    case TaskFamily::Retreat: return "Retreat";
    case TaskFamily::Ascend: return "Ascend";
    case TaskFamily::Descend: return "Descend";
    case TaskFamily::Turn: return "Turn";
    case TaskFamily::Shift: return "Shift";
    case TaskFamily::Orbit: return "Orbit";
  }
  return "?";
}

TaskFamily family_from_name(const std::string& name) {
  for (int i = 0; i < kNumFamilies; ++i) {
    if (name == family_name(static_cast<TaskFamily>(i))) {
      return static_cast<TaskFamily>(i);
    }
  }
  throw std::invalid_argument("unknown task family: " + name);
}

const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}

Difficulty difficulty_from_name(const std::string& name) {
  if (name == "easy") return Difficulty::Easy;
  if (name == "medium") return Difficulty::Medium;
  if (name == "hard") return Difficulty::Hard;
  throw std::invalid_argument("unknown difficulty: " + name);
}

double magnitude_from_bucket(TaskFamily f, int bucket) {
  if (bucket < 0 || bucket >= kMagnitudeBuckets) {
    throw VocabError("magnitude bucket out of range");
  }
  const MagnitudeRange r = magnitude_range(f);
  return r.lo + (bucket + 0.5) * (r.hi - r.lo) / kMagnitudeBuckets;
}

std::vector<int> tokens_from_primitives(const std::vector<Primitive>& prims) {
  if (prims.empty() || prims.size() > kInstructionSlots) {
    throw VocabError("instruction must hold 1..3 primitives");
  }
  std::vector<int> tokens(kInstructionTokens, kPadToken);
  for (std::size_t s = 0; s < prims.size(); ++s) {
    const Primitive& p = prims[s];
    tokens[s * kTokensPerSlot + 0] = kFamilyBase + static_cast<int>(p.family);
    tokens[s * kTokensPerSlot + 1] =
        p.landmark_id >= 0 ? kLandmarkBase + p.landmark_id : kLandmarkNone;
    tokens[s * kTokensPerSlot + 2] = kBucketBase + p.magnitude_bucket;
  }
  return tokens;
}

std::vector<Primitive> primitives_from_tokens(const std::vector<int>& tokens) {
  if (tokens.size() != kInstructionTokens) {
    throw VocabError("instruction token sequence must have 9 tokens");
  }
  std::vector<Primitive> prims;
  for (int s = 0; s < kInstructionSlots; ++s) {
    const int ft = tokens[s * kTokensPerSlot + 0];
    const int lt = tokens[s * kTokensPerSlot + 1];
    const int mt = tokens[s * kTokensPerSlot + 2];
    if (ft == kPadToken) {
      if (lt != kPadToken || mt != kPadToken) {
        throw VocabError("padded slot has non-pad tokens");
      }
      continue;
    }
    if (ft < kFamilyBase || ft >= kFamilyBase + kNumFamilies) {
      throw VocabError("bad family token");
    }
    Primitive p;
    p.family = static_cast<TaskFamily>(ft - kFamilyBase);
    if (lt == kLandmarkNone) {
      p.landmark_id = -1;
    } else if (lt >= kLandmarkBase && lt < kLandmarkBase + 8) {
      p.landmark_id = lt - kLandmarkBase;
    } else {
      throw VocabError("bad landmark token");
    }
    if (mt < kBucketBase || mt >= kBucketBase + kMagnitudeBuckets) {
      throw VocabError("bad magnitude token");
    }
    p.magnitude_bucket = mt - kBucketBase;
    p.magnitude = magnitude_from_bucket(p.family, p.magnitude_bucket);
    prims.push_back(p);
  }
  if (prims.empty()) throw VocabError("instruction has no primitives");
  return prims;
}

SimParams SimParams::from_config(const RunConfig& c) {
  SimParams p;
  p.k = c.sim_k;
  p.n_segments = c.sim_n_segments;
  p.epsilon = c.sim_epsilon;
  p.bounds = ActionBounds{c.sim_a_max_xyz, c.sim_a_max_yaw};
  p.fov_half_angle = c.sim_fov_half_angle;
  p.r_max = c.sim_r_max;
  p.world = WorldBounds{c.sim_x_min, c.sim_x_max, c.sim_y_min,
                        c.sim_y_max, c.sim_z_min, c.sim_z_max};
  p.max_landmarks = c.sim_max_landmarks;
  p.margin_scale = c.sim_margin_scale;
  p.yaw_weight = c.sim_yaw_weight;
  return p;
}

Scene generate_scene(std::uint64_t seed, const SimParams& p) {
  Rng rng(mix_seed(seed, 0x5ce11eULL));
  Scene scene;
  scene.bounds = p.world;
  const int count = rng.uniform_int(2, p.max_landmarks);
  const double mx = 4.5;
  for (int id = 0; id < count; ++id) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Landmark lm;
      lm.id = id;
      lm.pos[0] = rng.uniform(p.world.x_min + mx, p.world.x_max - mx);
      lm.pos[1] = rng.uniform(p.world.y_min + mx, p.world.y_max - mx);
      lm.pos[2] = rng.uniform(std::max(p.world.z_min + 1.5, 1.5),
                              std::min(p.world.z_max - 1.5, 6.5));
      lm.radius = rng.uniform(0.4, 0.9);
      placed = true;
      for (const Landmark& other : scene.landmarks) {
        const double dx = lm.pos[0] - other.pos[0];
        const double dy = lm.pos[1] - other.pos[1];
        const double dz = lm.pos[2] - other.pos[2];
        const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (dist < 2.0 * (lm.radius + other.radius)) {
          placed = false;
          break;
        }
      }
      if (placed) scene.landmarks.push_back(lm);
    }
    if (!placed) throw GenerationError("generate_scene: landmark placement failed");
  }
  return scene;
}

namespace {

struct DrawContext {
  Rng* rng;
  const Scene* scene;
  const SimParams* params;
};

int draw_bucket(Rng& rng, const std::vector<int>& allowed) {
  return allowed[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(allowed.size()) - 1))];
}

// Feasible magnitude buckets given the entry pose (keeps z well inside the
// world box for vertical moves).
std::vector<int> feasible_buckets(TaskFamily f, Difficulty d, const Pose& entry,
                                  const SimParams& p) {
  std::vector<int> out;
  for (int b : difficulty_buckets(f, d)) {
    const double mag = magnitude_from_bucket(f, b);
    if (f == TaskFamily::Ascend && entry.z + mag > p.world.z_max - 0.5) continue;
    if (f == TaskFamily::Descend && entry.z - mag < p.world.z_min + 0.5) continue;
    out.push_back(b);
  }
  return out;
}

bool pose_inside_world(const Pose& q, const WorldBounds& w) {
  return q.x >= w.x_min && q.x <= w.x_max && q.y >= w.y_min && q.y <= w.y_max &&
         q.z >= w.z_min && q.z <= w.z_max;
}

}  // namespace

Demo generate_episode(TaskFamily family, std::uint64_t seed, Difficulty difficulty,
                      const SimParams& p) {
  const int want_primitives = 1 + static_cast<int>(difficulty);
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(mix_seed(seed, 0xe915, attempt));
    Scene scene = generate_scene(mix_seed(seed, 0x5c, attempt), p);

    // Leading primitive and a start pose it is observable from.
    Primitive lead;
    lead.family = family;
    Pose start;
    start.z = rng.uniform(1.5, std::min(5.5, p.world.z_max - 1.5));
    const double mx = 5.0;
    if (family_uses_landmark(family)) {
      lead.landmark_id = rng.uniform_int(0, static_cast<int>(scene.landmarks.size()) - 1);
      const Landmark& lm = scene.landmarks[static_cast<std::size_t>(lead.landmark_id)];
      const auto buckets = difficulty_buckets(family, difficulty);
      lead.magnitude_bucket = draw_bucket(rng, buckets);
      lead.magnitude = magnitude_from_bucket(family, lead.magnitude_bucket);
      double lo = 1.5, hi = 4.0;
      if (family == TaskFamily::Approach) {
        lo = difficulty == Difficulty::Easy ? 4.0 : difficulty == Difficulty::Medium ? 3.0 : 2.5;
        hi = difficulty == Difficulty::Easy ? 9.0 : difficulty == Difficulty::Medium ? 6.0 : 4.5;
        lo = std::max(lo, lm.radius + lead.magnitude + 1.0);
        hi = std::max(hi, lo + 0.5);
      } else if (family == TaskFamily::Orbit) {
        lo = std::max(1.5, lm.radius + 0.4);
        hi = 3.5;
      } else {  // Retreat
        lo = std::max(1.5, lm.radius + 0.3);
        hi = 4.0;
      }
      bool ok = false;
      for (int t = 0; t < 40 && !ok; ++t) {
        const double r = rng.uniform(lo, hi);
        const double th = rng.uniform(-kPi, kPi);
        start.x = lm.pos[0] + r * std::cos(th);
        start.y = lm.pos[1] + r * std::sin(th);
        ok = start.x >= p.world.x_min + mx && start.x <= p.world.x_max - mx &&
             start.y >= p.world.y_min + mx && start.y <= p.world.y_max - mx;
      }
      if (!ok) continue;
      start.psi = wrap_angle(bearing_to(start, lm.pos) +
                             rng.uniform(-p.fov_half_angle / 3.0, p.fov_half_angle / 3.0));
    } else {
      const auto buckets = feasible_buckets(family, difficulty, start, p);
      if (buckets.empty()) continue;
      lead.magnitude_bucket = draw_bucket(rng, buckets);
      lead.magnitude = magnitude_from_bucket(family, lead.magnitude_bucket);
      start.x = rng.uniform(p.world.x_min + mx, p.world.x_max - mx);
      start.y = rng.uniform(p.world.y_min + mx, p.world.y_max - mx);
      start.psi = wrap_angle(rng.uniform(-kPi, kPi));
    }

    // Follow-up primitives (medium/hard) reuse the leading landmark when
    // one exists; magnitudes come from the small (hard) bucket subsets so
    // the composition fits the horizon.
    std::vector<Primitive> prims{lead};
    std::vector<Action> actions;
    Pose q = start;
    Vec3 target{q.x, q.y, q.z};
    bool failed = false;
    for (int slot = 0; slot < want_primitives && !failed; ++slot) {
      Primitive prim;
      if (slot == 0) {
        prim = lead;
      } else {
        std::vector<TaskFamily> pool{TaskFamily::Ascend, TaskFamily::Descend,
                                     TaskFamily::Turn, TaskFamily::Shift};
        if (lead.landmark_id >= 0) {
          pool.push_back(TaskFamily::Orbit);
          pool.push_back(TaskFamily::Retreat);
        }
        prim.family = pool[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        prim.landmark_id = family_uses_landmark(prim.family) ? lead.landmark_id : -1;
        const auto buckets = feasible_buckets(prim.family, Difficulty::Hard, q, p);
        if (buckets.empty()) {
          failed = true;
          break;
        }
        prim.magnitude_bucket = draw_bucket(rng, buckets);
        prim.magnitude = magnitude_from_bucket(prim.family, prim.magnitude_bucket);
        prims.push_back(prim);
      }
      const Vec3 endpoint = primitive_endpoint(q, prim, scene);
      try {
        run_primitive(q, prim, scene, p.bounds, actions);
      } catch (const GenerationError&) {
        failed = true;
        break;
      }
      const double miss = std::sqrt((q.x - endpoint[0]) * (q.x - endpoint[0]) +
                                    (q.y - endpoint[1]) * (q.y - endpoint[1]) +
                                    (q.z - endpoint[2]) * (q.z - endpoint[2]));
      if (miss > 1e-9) failed = true;
      target = endpoint;
    }
    if (failed) continue;
    if (static_cast<int>(actions.size()) > p.horizon_steps()) continue;
    if (actions.empty()) continue;

    // Hover padding to the fixed horizon; verify the whole path stays inside
    // the world box so expert observations are never clamped.
    while (static_cast<int>(actions.size()) < p.horizon_steps()) {
      actions.push_back(Action{});
    }
    Trajectory poses = replay_actions(start, actions, p.bounds);
    bool inside = true;
    for (const Pose& pose : poses) {
      if (!pose_inside_world(pose, p.world)) {
        inside = false;
        break;
      }
    }
    if (!inside) continue;
    if (endpoint_distance(poses.back(), target) > p.epsilon / 2.0) continue;

    Demo demo;
    demo.spec.seed = seed;
    demo.spec.family = family;
    demo.spec.difficulty = difficulty;
    demo.spec.scene = std::move(scene);
    demo.spec.instruction.task_family = family;
    demo.spec.instruction.primitives = prims;
    demo.spec.instruction.tokens = tokens_from_primitives(prims);
    demo.spec.start = start;
    demo.spec.target = target;
    demo.spec.epsilon = p.epsilon;
    demo.spec.horizon_segments = p.n_segments;
    demo.expert_actions = std::move(actions);
    demo.expert_poses = std::move(poses);
    return demo;
  }
  throw GenerationError("generate_episode: no feasible draw for family " +
                        std::string(family_name(family)) + " seed " +
                        std::to_string(seed));
}

Observation render_observation(const Scene& scene, const Pose& pose,
                               const SimParams& p, bool* clamped) {
  Pose q = pose;
  bool did_clamp = false;
  auto clamp_coord = [&](double v, double lo, double hi) {
    const double c = std::clamp(v, lo, hi);
    if (c != v) did_clamp = true;
    return c;
  };
  q.x = clamp_coord(q.x, p.world.x_min, p.world.x_max);
  q.y = clamp_coord(q.y, p.world.y_min, p.world.y_max);
  q.z = clamp_coord(q.z, p.world.z_min, p.world.z_max);
  if (clamped != nullptr) *clamped = did_clamp;

  Observation o;
  o.f.assign(static_cast<std::size_t>(p.d_obs()), 0.0);
  o.f[0] = q.z;
  o.f[1] = std::sin(q.psi);
  o.f[2] = std::cos(q.psi);
  const double margin =
      std::min({q.x - p.world.x_min, p.world.x_max - q.x, q.y - p.world.y_min,
                p.world.y_max - q.y, q.z - p.world.z_min, p.world.z_max - q.z});
  o.f[3] = std::clamp(margin, 0.0, p.margin_scale);

  const double c = std::cos(q.psi);
  const double s = std::sin(q.psi);
  for (const Landmark& lm : scene.landmarks) {
    if (lm.id < 0 || lm.id >= p.max_landmarks) continue;
    const double wx = lm.pos[0] - q.x;
    const double wy = lm.pos[1] - q.y;
    const double wz = lm.pos[2] - q.z;
    const double bx = c * wx + s * wy;
    const double by = -s * wx + c * wy;
    const double range = std::sqrt(wx * wx + wy * wy + wz * wz);
    const double bearing = std::atan2(by, bx);
    const bool visible = range <= p.r_max && std::abs(bearing) <= p.fov_half_angle;
    if (!visible) continue;
    const std::size_t base = 4 + 5 * static_cast<std::size_t>(lm.id);
    o.f[base + 0] = bx;
    o.f[base + 1] = by;
    o.f[base + 2] = wz;
    o.f[base + 3] = range;
    o.f[base + 4] = 1.0;
  }
  return o;
}

std::vector<double> normalize_observation(const Observation& o, const SimParams& p) {
  std::vector<double> out(o.f.size());
  out[0] = o.f[0] / p.world.z_max;
  out[1] = o.f[1];
  out[2] = o.f[2];
  out[3] = o.f[3] / p.margin_scale;
  for (int slot = 0; slot < p.max_landmarks; ++slot) {
    const std::size_t base = 4 + 5 * static_cast<std::size_t>(slot);
    out[base + 0] = o.f[base + 0] / p.r_max;
    out[base + 1] = o.f[base + 1] / p.r_max;
    out[base + 2] = o.f[base + 2] / p.r_max;
    out[base + 3] = o.f[base + 3] / p.r_max;
    out[base + 4] = o.f[base + 4];
  }
  return out;
}

bool check_success(const Pose& final_pose, const Vec3& target, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("check_success: epsilon <= 0");
  return endpoint_distance(final_pose, target) < epsilon;
}

Environment::Environment(EpisodeSpec spec, const SimParams& p)
    : spec_(std::move(spec)), params_(p), pose_(spec_.start) {}

Environment::StepResult Environment::step(const Action& a) {
  if (done()) throw ProtocolError("Environment::step after episode end");
  const Action clamped = clamp_action(a, params_.bounds);
  pose_ = compose_pose(pose_, clamped, params_.bounds);
  steps_ += 1;
  StepResult r;
  r.pose = pose_;
  bool was_clamped = false;
  r.obs = render_observation(spec_.scene, pose_, params_, &was_clamped);
  if (was_clamped) clamp_count_ += 1;
  r.done = done();
  return r;
}

bool Environment::succeeded() const {
  return check_success(pose_, spec_.target, spec_.epsilon);
}

Observation Environment::observe() const {
  return render_observation(spec_.scene, pose_, params_);
}

// --- demo serialization --------------------------------------------------

namespace {

void append_scalar_array(std::string& out, const std::vector<double>& vals) {
  out += "[";
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i) out += ",";
    out += fmt12(vals[i]);
  }
  out += "]";
}

}  // namespace

std::string demo_to_line(const Demo& demo) {
  // Canonicalize: round actions/start through 12-digit text, replay, and
  // store the replayed poses so readers can reproduce them exactly.
  const ActionBounds bounds{1e9, 1e9};  // stored actions are already in bounds
  Pose start;
  start.x = reparse12(demo.spec.start.x);
  start.y = reparse12(demo.spec.start.y);
  start.z = reparse12(demo.spec.start.z);
  start.psi = reparse12(demo.spec.start.psi);
  std::vector<Action> acts;
  acts.reserve(demo.expert_actions.size());
  for (const Action& a : demo.expert_actions) {
    acts.push_back(Action{reparse12(a.dx), reparse12(a.dy), reparse12(a.dz),
                          reparse12(a.dpsi)});
  }
  const Trajectory poses = replay_actions(start, acts, bounds);

  std::string out = "{\"seed\":" + std::to_string(demo.spec.seed);
  out += ",\"family\":\"" + std::string(family_name(demo.spec.family)) + "\"";
  out += ",\"difficulty\":\"" + std::string(difficulty_name(demo.spec.difficulty)) + "\"";
  out += ",\"scene\":{\"bounds\":";
  append_scalar_array(out, {demo.spec.scene.bounds.x_min, demo.spec.scene.bounds.x_max,
                            demo.spec.scene.bounds.y_min, demo.spec.scene.bounds.y_max,
                            demo.spec.scene.bounds.z_min, demo.spec.scene.bounds.z_max});
  out += ",\"landmarks\":[";
  for (std::size_t i = 0; i < demo.spec.scene.landmarks.size(); ++i) {
    const Landmark& lm = demo.spec.scene.landmarks[i];
    if (i) out += ",";
    out += "{\"id\":" + std::to_string(lm.id) + ",\"pos\":";
    append_scalar_array(out, {lm.pos[0], lm.pos[1], lm.pos[2]});
    out += ",\"radius\":" + fmt12(lm.radius) + "}";
  }
  out += "]}";
  out += ",\"tokens\":[";
  for (std::size_t i = 0; i < demo.spec.instruction.tokens.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(demo.spec.instruction.tokens[i]);
  }
  out += "]";
  out += ",\"start\":";
  append_scalar_array(out, {start.x, start.y, start.z, start.psi});
  out += ",\"target\":";
  append_scalar_array(out, {demo.spec.target[0], demo.spec.target[1], demo.spec.target[2]});
  out += ",\"epsilon\":" + fmt12(demo.spec.epsilon);
  out += ",\"actions\":[";
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (i) out += ",";
    out += fmt12(acts[i].dx);
    out += ",";
    out += fmt12(acts[i].dy);
    out += ",";
    out += fmt12(acts[i].dz);
    out += ",";
    out += fmt12(acts[i].dpsi);
  }
  out += "],\"poses\":[";
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (i) out += ",";
    out += fmt12(poses[i].x);
    out += ",";
    out += fmt12(poses[i].y);
    out += ",";
    out += fmt12(poses[i].z);
    out += ",";
    out += fmt12(poses[i].psi);
  }
  out += "]}";
  return out;
}

Demo demo_from_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("demo parse error: ") + e.what());
  }
  Demo demo;
  demo.spec.seed = j.at("seed").get<std::uint64_t>();
  demo.spec.family = family_from_name(j.at("family").get<std::string>());
  demo.spec.difficulty = difficulty_from_name(j.at("difficulty").get<std::string>());
  const auto& sb = j.at("scene").at("bounds");
  demo.spec.scene.bounds = WorldBounds{sb[0], sb[1], sb[2], sb[3], sb[4], sb[5]};
  for (const auto& lj : j.at("scene").at("landmarks")) {
    Landmark lm;
    lm.id = lj.at("id").get<int>();
    lm.pos = {lj.at("pos")[0], lj.at("pos")[1], lj.at("pos")[2]};
    lm.radius = lj.at("radius").get<double>();
    demo.spec.scene.landmarks.push_back(lm);
  }
  demo.spec.instruction.tokens = j.at("tokens").get<std::vector<int>>();
  demo.spec.instruction.primitives =
      primitives_from_tokens(demo.spec.instruction.tokens);
  demo.spec.instruction.task_family = demo.spec.instruction.primitives[0].family;
  const auto& st = j.at("start");
  demo.spec.start = Pose{st[0], st[1], st[2], st[3]};
  demo.spec.target = {j.at("target")[0], j.at("target")[1], j.at("target")[2]};
  demo.spec.epsilon = j.at("epsilon").get<double>();
  const auto acts = j.at("actions").get<std::vector<double>>();
  if (acts.size() % 4 != 0) throw ConfigError("demo actions not a multiple of 4");
  for (std::size_t i = 0; i < acts.size(); i += 4) {
    demo.expert_actions.push_back(Action{acts[i], acts[i + 1], acts[i + 2], acts[i + 3]});
  }
  const auto ps = j.at("poses").get<std::vector<double>>();
  if (ps.size() % 4 != 0 || ps.size() != acts.size() + 4) {
    throw ConfigError("demo poses inconsistent with actions");
  }
  for (std::size_t i = 0; i < ps.size(); i += 4) {
    demo.expert_poses.push_back(Pose{ps[i], ps[i + 1], ps[i + 2], ps[i + 3]});
  }
  demo.spec.horizon_segments = 0;  // unknown at line level; set by the caller
  return demo;
}

void write_demos(const std::string& path, const std::vector<Demo>& demos,
                 std::uint64_t cfg_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open demo file for writing: " + path);
  f << "{\"format\":\"navwam-demos-v1\",\"config_hash\":\"" << hash_hex(cfg_hash)
    << "\",\"count\":" << demos.size() << "}\n";
  for (const Demo& demo : demos) {
    f << demo_to_line(demo) << "\n";
  }
}

std::vector<Demo> read_demos(const std::string& path, std::uint64_t expected_hash) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("cannot open demo file: " + path);
  std::string header;
  if (!std::getline(f, header)) throw ConfigError("demo file empty: " + path);
  nlohmann::json hj;
  try {
    hj = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("demo header parse error: ") + e.what());
  }
  if (hj.at("format").get<std::string>() != "navwam-demos-v1") {
    throw IncompatibleCheckpoint("demo file format mismatch");
  }
  if (expected_hash != 0 &&
      hj.at("config_hash").get<std::string>() != hash_hex(expected_hash)) {
    throw IncompatibleCheckpoint("demo file config hash mismatch");
  }
  std::vector<Demo> demos;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    demos.push_back(demo_from_line(line));
  }
  if (demos.size() != hj.at("count").get<std::size_t>()) {
    throw ConfigError("demo file count mismatch");
  }
  return demos;
}

std::vector<Difficulty> parse_difficulty_mix(const std::string& mix) {
  std::vector<Difficulty> out;
  std::stringstream ss(mix);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("bad difficulty mix: " + mix);
    const Difficulty d = difficulty_from_name(part.substr(0, colon));
    const int count = std::stoi(part.substr(colon + 1));
    for (int i = 0; i < count; ++i) out.push_back(d);
  }
  if (out.empty()) throw ConfigError("empty difficulty mix");
  return out;
}

}  // namespace navwam
