#pragma once

#include <array>
#include <vector>

namespace navwam {

// Agent state in world frame. psi is yaw, wrapped to (-pi, pi].
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double psi = 0.0;
};

// Relative waypoint: dx forward along yaw, dy body-left, dz world-vertical,
// dpsi yaw change.
struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double dpsi = 0.0;
};

// Per-component action bound: |dx|,|dy|,|dz| <= xyz and |dpsi| <= yaw.
struct ActionBounds {
  double xyz = 1.0;
  double yaw = 0.5;
};

using Trajectory = std::vector<Pose>;
using Vec3 = std::array<double, 3>;

// Wraps to (-pi, pi]; -pi maps to +pi. Throws std::invalid_argument on
// non-finite input.
double wrap_angle(double theta);

bool action_within_bounds(const Action& a, const ActionBounds& b);
Action clamp_action(const Action& a, const ActionBounds& b);

// Applies a body-frame waypoint to a pose. Throws BoundViolation if the
// action exceeds the bounds.
Pose compose_pose(const Pose& q, const Action& a, const ActionBounds& b);

// Euclidean distance between the pose position and a target point.
double endpoint_distance(const Pose& q, const Vec3& target);

// Pointwise trajectory distance: position L2 plus weighted wrapped-yaw gap.
double pose_point_distance(const Pose& a, const Pose& b, double yaw_weight);

// Classic cumulative DTW cost under pose_point_distance. Throws
// std::invalid_argument when either trajectory is empty.
double dtw_cost(const Trajectory& pred, const Trajectory& ref, double yaw_weight);

// exp(-dtw / (|ref| * epsilon)); 1 iff the DTW cost is 0. Throws
// std::invalid_argument when epsilon <= 0.
double ndtw(const Trajectory& pred, const Trajectory& ref, double epsilon,
            double yaw_weight);

// Replays an action sequence from a start pose (actions clamped to bounds
// first, as the environment does). Returns 1 + n poses.
Trajectory replay_actions(const Pose& start, const std::vector<Action>& actions,
                          const ActionBounds& b);

}  // namespace navwam
