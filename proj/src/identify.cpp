#include "paip/identify.hpp"

#include <algorithm>
#include <cmath>

#include "paip/error.hpp"

namespace paip::identify {

RegressionRow regressor(const InteractionSample& s) {
  const double sgn = (s.v > 0.0) ? 1.0 : (s.v < 0.0 ? -1.0 : 0.0);
  return {{s.dx, s.v, sgn}, s.f};
}

void LSEstimator::push_sample(const InteractionSample& s) {
  if (!std::isfinite(s.dx) || !std::isfinite(s.v) || !std::isfinite(s.f))
    throw InvalidParameter("interaction sample must be finite");
  const auto row = regressor(s);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a_[i][j] += row.phi[i] * row.phi[j];
    b_[i] += row.phi[i] * row.y;
  }
  ++n_;
}

Vec3 symmetric_eigenvalues(const Mat3& input) {
  Mat3 m = input;
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    const double diag = m[0][0] * m[0][0] + m[1][1] * m[1][1] + m[2][2] * m[2][2];
    if (off <= 1e-300 || off <= diag * 1e-34) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (m[p][q] == 0.0) continue;
        const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
        const double t = std::copysign(1.0, theta) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double mkp = m[k][p], mkq = m[k][q];
          m[k][p] = c * mkp - s * mkq;
          m[k][q] = s * mkp + c * mkq;
        }
        for (int k = 0; k < 3; ++k) {
          const double mpk = m[p][k], mqk = m[q][k];
          m[p][k] = c * mpk - s * mqk;
          m[q][k] = s * mpk + c * mqk;
        }
      }
  }
  Vec3 ev{m[0][0], m[1][1], m[2][2]};
  std::sort(ev.begin(), ev.end());
  return ev;
}

namespace {

// Cholesky factor of a symmetric positive definite matrix; returns false if not SPD.
bool cholesky(const Mat3& m, Mat3& l) {
  l = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = m[i][j];
      for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (!(s > 0.0)) return false;
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  return true;
}

Vec3 cholesky_solve(const Mat3& l, const Vec3& rhs) {
  Vec3 y{};
  for (int i = 0; i < 3; ++i) {
    double s = rhs[i];
    for (int k = 0; k < i; ++k) s -= l[i][k] * y[k];
    y[i] = s / l[i][i];
  }
  Vec3 x{};
  for (int i = 2; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < 3; ++k) s -= l[k][i] * x[k];
    x[i] = s / l[i][i];
  }
  return x;
}

}  // namespace

ThetaEstimate LSEstimator::solve(double ridge) {
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw InvalidParameter("ridge must be finite and non-negative");
  if (n_ < 3) throw RankDeficient("at least three samples are needed");
  const Vec3 ev = symmetric_eigenvalues(a_);
  if (!(ev[2] > 0.0) || !(ev[0] * kMaxConditionNumber >= ev[2]))
    throw RankDeficient("normal matrix is singular or ill-conditioned");

  Mat3 reg = a_;
  for (int i = 0; i < 3; ++i) reg[i][i] += ridge;
  Mat3 l;
  if (!cholesky(reg, l)) throw RankDeficient("normal matrix is not positive definite");

  // The ridge only stabilizes the factorization; refinement against A removes its bias.
  Vec3 x = cholesky_solve(l, b_);
  for (int it = 0; it < 8; ++it) {
    Vec3 r{};
    for (int i = 0; i < 3; ++i) {
      r[i] = b_[i];
      for (int j = 0; j < 3; ++j) r[i] -= a_[i][j] * x[j];
    }
    const Vec3 dx = cholesky_solve(l, r);
    double change = 0.0, size = 0.0;
    for (int i = 0; i < 3; ++i) {
      x[i] += dx[i];
      change = std::max(change, std::fabs(dx[i]));
      size = std::max(size, std::fabs(x[i]));
    }
    if (change <= 1e-16 * size) break;
  }

  ThetaEstimate est{std::max(0.0, x[0]), std::max(0.0, x[1]), std::max(0.0, x[2])};
  prev_theta_ = theta_;
  theta_ = est;
  ++solves_;
  if (solves_ >= 2) update_confidence();
  return est;
}

double LSEstimator::update_confidence() {
  if (solves_ < 2 || !theta_ || !prev_theta_) throw NotReady("confidence needs two successive solves");
  const double dk = theta_->k - prev_theta_->k;
  const double dc = theta_->c - prev_theta_->c;
  const double df = theta_->fc - prev_theta_->fc;
  // Unbiased two-point variance of each component is d^2 / 2.
  conf_trace_ = 0.5 * (dk * dk + dc * dc + df * df);
  return conf_trace_;
}

}  // namespace paip::identify
