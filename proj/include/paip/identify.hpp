#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>

#include "paip/gridmap.hpp"

namespace paip::identify {

using gridmap::ThetaEstimate;

/// One contact observation: penetration, its rate, and the measured normal force.
struct InteractionSample {
  double dx = 0.0;  // m
  double v = 0.0;   // m/s
  double f = 0.0;   // N
  std::int64_t tick = 0;
};

struct RegressionRow {
  std::array<double, 3> phi{};
  double y = 0.0;
};

/// Spring-damper-friction regression row: phi = [dx, v, sign(v)], y = f.
RegressionRow regressor(const InteractionSample& sample);

inline constexpr double kDefaultRidge = 1e-8;
inline constexpr double kDefaultConfidenceThreshold = 1e-3;
/// Normal matrices with a larger eigenvalue ratio are treated as singular.
inline constexpr double kMaxConditionNumber = 1e12;

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

/// Recursive least-squares identification via accumulated normal equations.
class LSEstimator {
 public:
  /// Accumulates A += phi phi^T and b += phi y. Non-finite samples throw InvalidParameter.
  void push_sample(const InteractionSample& sample);

  /// Solves the normal equations, clamps each component at 0 and records the estimate.
  /// Throws RankDeficient when fewer than 3 samples were pushed or A is ill-conditioned.
  ThetaEstimate solve(double ridge = kDefaultRidge);

  /// Trace of the sample covariance of the last two estimates. Throws NotReady before two solves.
  double update_confidence();

  const Mat3& normal_matrix() const { return a_; }
  const Vec3& rhs() const { return b_; }
  std::int64_t count() const { return n_; }
  int solve_count() const { return solves_; }
  const std::optional<ThetaEstimate>& theta() const { return theta_; }
  const std::optional<ThetaEstimate>& previous_theta() const { return prev_theta_; }
  /// +inf until two solves have happened.
  double confidence_trace() const { return conf_trace_; }

 private:
  Mat3 a_{};
  Vec3 b_{};
  std::int64_t n_ = 0;
  int solves_ = 0;
  std::optional<ThetaEstimate> theta_;
  std::optional<ThetaEstimate> prev_theta_;
  double conf_trace_ = std::numeric_limits<double>::infinity();
};

/// Eigenvalues of a symmetric 3x3 matrix in ascending order (cyclic Jacobi).
Vec3 symmetric_eigenvalues(const Mat3& m);

}  // namespace paip::identify
