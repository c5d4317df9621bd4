#include "navwam/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "navwam/errors.hpp"

namespace navwam {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("wrap_angle: non-finite angle");
  }
  double r = std::fmod(theta + kPi, kTwoPi);
  if (r <= 0.0) r += kTwoPi;
  return r - kPi;
}

bool action_within_bounds(const Action& a, const ActionBounds& b) {
  const double tol = 1e-12;
  return std::abs(a.dx) <= b.xyz + tol && std::abs(a.dy) <= b.xyz + tol &&
         std::abs(a.dz) <= b.xyz + tol && std::abs(a.dpsi) <= b.yaw + tol;
}

Action clamp_action(const Action& a, const ActionBounds& b) {
  return Action{std::clamp(a.dx, -b.xyz, b.xyz), std::clamp(a.dy, -b.xyz, b.xyz),
                std::clamp(a.dz, -b.xyz, b.xyz), std::clamp(a.dpsi, -b.yaw, b.yaw)};
}

Pose compose_pose(const Pose& q, const Action& a, const ActionBounds& b) {
  if (!action_within_bounds(a, b)) {
    throw BoundViolation("compose_pose: action exceeds per-component bounds");
  }
  const double c = std::cos(q.psi);
  const double s = std::sin(q.psi);
  Pose out;
  out.x = q.x + c * a.dx - s * a.dy;
  out.y = q.y + s * a.dx + c * a.dy;
  out.z = q.z + a.dz;
  out.psi = wrap_angle(q.psi + a.dpsi);
  return out;
}

double endpoint_distance(const Pose& q, const Vec3& target) {
  const double dx = q.x - target[0];
  const double dy = q.y - target[1];
  const double dz = q.z - target[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double pose_point_distance(const Pose& a, const Pose& b, double yaw_weight) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  const double pos = std::sqrt(dx * dx + dy * dy + dz * dz);
  return pos + yaw_weight * std::abs(wrap_angle(a.psi - b.psi));
}

double dtw_cost(const Trajectory& pred, const Trajectory& ref, double yaw_weight) {
  if (pred.empty() || ref.empty()) {
    throw std::invalid_argument("dtw_cost: empty trajectory");
  }
  const std::size_t n = pred.size();
  const std::size_t m = ref.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double d = pose_point_distance(pred[i - 1], ref[j - 1], yaw_weight);
      cur[j] = d + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double ndtw(const Trajectory& pred, const Trajectory& ref, double epsilon,
            double yaw_weight) {
  if (epsilon <= 0.0) {
    throw std::invalid_argument("ndtw: epsilon must be positive");
  }
  const double cost = dtw_cost(pred, ref, yaw_weight);
  return std::exp(-cost / (static_cast<double>(ref.size()) * epsilon));
}

Trajectory replay_actions(const Pose& start, const std::vector<Action>& actions,
                          const ActionBounds& b) {
  Trajectory out;
  out.reserve(actions.size() + 1);
  out.push_back(start);
  for (const Action& a : actions) {
    out.push_back(compose_pose(out.back(), clamp_action(a, b), b));
  }
  return out;
}

}  // namespace navwam
