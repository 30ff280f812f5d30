#ifndef DSBFA_CP_KERNEL_HPP
#define DSBFA_CP_KERNEL_HPP

// Convolution-process covariance functions for k correlated factor
// trajectories.
//
// Each factor a is the sum of a shared component (base process tau_0 convolved
// with h_a0), an idiosyncratic component (tau_a convolved with h_a1) and white
// noise psi^2. Kernels are h(t) = v exp(-B^2 t^2 / 2), for which the
// convolution integrals have closed forms:
//
//   C_aa(dt) = v_a0^2 sqrt(pi)/B_a0 exp(-B_a0^2 dt^2/4)
//            + v_a1^2 sqrt(pi)/B_a1 exp(-B_a1^2 dt^2/4) + [same index] psi^2
//   C_ab(dt) = v_a0 v_b0 sqrt(2 pi)/sqrt(B_a0^2 + B_b0^2)
//              exp(-B_a0^2 B_b0^2 dt^2 / (2 (B_a0^2 + B_b0^2)))
//
// Matrices over a time grid use the factor-major layout: row a*q + j holds
// factor a at time j.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dsbfa/error.hpp"

namespace dsbfa {

/// Hyperparameters of the k-output convolution process plus constant means.
struct MogpHyperparams {
  Eigen::VectorXd v0;  ///< shared-kernel amplitude per factor (signed)
  Eigen::VectorXd v1;  ///< idiosyncratic-kernel amplitude per factor
  Eigen::VectorXd B0;  ///< shared-kernel precision per factor, > 0
  Eigen::VectorXd B1;  ///< idiosyncratic-kernel precision per factor, > 0
  Eigen::VectorXd c;   ///< constant mean per factor
  double psi2 = 0.0;   ///< process noise variance, >= 0

  MogpHyperparams() = default;

  /// k factors, every field set to the same value.
  static MogpHyperparams uniform(int k, double v0, double v1, double B0, double B1,
                                 double psi2, double c = 0.0) {
    MogpHyperparams hp;
    hp.v0 = Eigen::VectorXd::Constant(k, v0);
    hp.v1 = Eigen::VectorXd::Constant(k, v1);
    hp.B0 = Eigen::VectorXd::Constant(k, B0);
    hp.B1 = Eigen::VectorXd::Constant(k, B1);
    hp.c = Eigen::VectorXd::Constant(k, c);
    hp.psi2 = psi2;
    return hp;
  }

  int k() const { return static_cast<int>(v0.size()); }

  void validate() const {
    const auto n = v0.size();
    detail::require(n >= 1, "MogpHyperparams: at least one factor required");
    detail::require(v1.size() == n && B0.size() == n && B1.size() == n && c.size() == n,
                    "MogpHyperparams: per-factor vectors must all have length k");
    detail::require(v0.allFinite() && v1.allFinite() && B0.allFinite() && B1.allFinite() &&
                        c.allFinite() && std::isfinite(psi2),
                    "MogpHyperparams: non-finite value");
    detail::require((B0.array() > 0.0).all() && (B1.array() > 0.0).all(),
                    "MogpHyperparams: kernel precisions must be positive");
    detail::require(psi2 >= 0.0, "MogpHyperparams: psi2 must be non-negative");
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(6);
    os << "{psi2=" << psi2;
    for (int a = 0; a < k(); ++a) {
      os << "; factor " << a + 1 << ": v0=" << v0(a) << " v1=" << v1(a) << " B0=" << B0(a)
         << " B1=" << B1(a) << " c=" << c(a);
    }
    os << "}";
    return os.str();
  }

  bool operator==(const MogpHyperparams& other) const {
    return v0 == other.v0 && v1 == other.v1 && B0 == other.B0 && B1 == other.B1 &&
           c == other.c && psi2 == other.psi2;
  }
};

/// Strictly increasing, finite time points.
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> points) : points_(std::move(points)) {
    for (std::size_t j = 0; j < points_.size(); ++j) {
      detail::require(std::isfinite(points_[j]), "TimeGrid: non-finite time point");
      detail::require(j == 0 || points_[j] > points_[j - 1],
                      "TimeGrid: time points must be strictly increasing");
    }
  }

  TimeGrid(std::initializer_list<double> points) : TimeGrid(std::vector<double>(points)) {}

  int size() const { return static_cast<int>(points_.size()); }
  bool empty() const { return points_.empty(); }
  double operator[](int j) const { return points_[static_cast<std::size_t>(j)]; }
  const std::vector<double>& values() const { return points_; }

  std::optional<int> index_of(double t) const {
    auto it = std::lower_bound(points_.begin(), points_.end(), t);
    if (it == points_.end() || *it != t) return std::nullopt;
    return static_cast<int>(it - points_.begin());
  }

  bool operator==(const TimeGrid& other) const { return points_ == other.points_; }

 private:
  std::vector<double> points_;
};

namespace detail {

inline void check_factor(const MogpHyperparams& hp, int a) {
  if (a < 0 || a >= hp.k()) {
    throw InvalidArgument("factor index " + std::to_string(a) + " out of range for k=" +
                          std::to_string(hp.k()));
  }
}

/// v^2 sqrt(pi)/B exp(-B^2 dt^2 / 4): self-convolution of one Gaussian kernel.
inline double self_convolution(double v, double B, double dt) {
  return v * v * std::sqrt(std::numbers::pi) / B * std::exp(-0.25 * B * B * dt * dt);
}

}  // namespace detail

/// Auto-covariance of factor a at lag dt. The noise term is added only for a
/// zero lag with include_noise set (i.e. the same observation index).
inline double auto_covariance(const MogpHyperparams& hp, int a, double dt, bool include_noise) {
  detail::check_factor(hp, a);
  detail::require(std::isfinite(dt), "auto_covariance: non-finite lag");
  double value = detail::self_convolution(hp.v0(a), hp.B0(a), dt) +
                 detail::self_convolution(hp.v1(a), hp.B1(a), dt);
  if (include_noise && dt == 0.0) value += hp.psi2;
  return value;
}

/// Covariance between factors a != b at lag dt = t_a - t_b, generated by the
/// shared base process only.
inline double cross_covariance(const MogpHyperparams& hp, int a, int b, double dt) {
  detail::check_factor(hp, a);
  detail::check_factor(hp, b);
  if (a == b) throw InvalidArgument("cross_covariance: a == b, use auto_covariance");
  detail::require(std::isfinite(dt), "cross_covariance: non-finite lag");
  const double ba2 = hp.B0(a) * hp.B0(a);
  const double bb2 = hp.B0(b) * hp.B0(b);
  const double s = ba2 + bb2;
  return hp.v0(a) * hp.v0(b) * std::sqrt(2.0 * std::numbers::pi / s) *
         std::exp(-0.5 * (ba2 * bb2 / s) * dt * dt);
}

/// Covariance between factor a at time t and factor b at time t'. Noise enters
/// only when same_index is true, a == b and the lag is zero.
inline double covariance(const MogpHyperparams& hp, int a, int b, double dt, bool same_index) {
  return a == b ? auto_covariance(hp, a, dt, same_index) : cross_covariance(hp, a, b, dt);
}

/// Lag-0 cross-correlation between factors a and b (noise included in the
/// variances).
inline double cross_correlation(const MogpHyperparams& hp, int a, int b) {
  if (a == b) {
    detail::check_factor(hp, a);
    return 1.0;
  }
  const double va = auto_covariance(hp, a, 0.0, true);
  const double vb = auto_covariance(hp, b, 0.0, true);
  if (!(va > 0.0) || !(vb > 0.0)) {
    throw NumericalError("cross_correlation: zero variance for factor " +
                         std::to_string(va > 0.0 ? b + 1 : a + 1));
  }
  return cross_covariance(hp, a, b, 0.0) / std::sqrt(va * vb);
}

/// k x k matrix of lag-0 cross-correlations.
inline Eigen::MatrixXd correlation_matrix(const MogpHyperparams& hp) {
  const int k = hp.k();
  Eigen::MatrixXd R(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) R(a, b) = cross_correlation(hp, a, b);
  }
  return R;
}

/// Per-factor marginal variance C_aa(0) including noise.
inline Eigen::VectorXd factor_variances(const MogpHyperparams& hp) {
  Eigen::VectorXd d(hp.k());
  for (int a = 0; a < hp.k(); ++a) d(a) = auto_covariance(hp, a, 0.0, true);
  return d;
}

/// kq x kq covariance of vec(Y^T) over the grid, factor-major.
inline Eigen::MatrixXd assemble_covariance(const MogpHyperparams& hp, const TimeGrid& grid) {
  hp.validate();
  detail::require(!grid.empty(), "assemble_covariance: empty time grid");
  const int k = hp.k();
  const int q = grid.size();
  Eigen::MatrixXd S(k * q, k * q);
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      for (int j = 0; j < q; ++j) {
        for (int l = 0; l < q; ++l) {
          const double v = covariance(hp, a, b, grid[j] - grid[l], j == l);
          S(a * q + j, b * q + l) = v;
          S(b * q + l, a * q + j) = v;
        }
      }
    }
  }
  return S;
}

/// Covariance between vec(Y^T) on `rows` and on `cols`, for two sets of
/// distinct observation indices (no noise term anywhere).
inline Eigen::MatrixXd assemble_cross_covariance(const MogpHyperparams& hp, const TimeGrid& rows,
                                                 const TimeGrid& cols) {
  hp.validate();
  const int k = hp.k();
  const int qr = rows.size();
  const int qc = cols.size();
  Eigen::MatrixXd S(k * qr, k * qc);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      for (int j = 0; j < qr; ++j) {
        for (int l = 0; l < qc; ++l) {
          S(a * qr + j, b * qc + l) = covariance(hp, a, b, rows[j] - cols[l], false);
        }
      }
    }
  }
  return S;
}

/// Rescale a factor-major covariance so every factor has unit variance.
inline Eigen::MatrixXd normalize_to_correlation(const Eigen::MatrixXd& sigma, int k, int q) {
  detail::require(k >= 1 && q >= 1, "normalize_to_correlation: k and q must be positive");
  detail::require(sigma.rows() == k * q && sigma.cols() == k * q,
                  "normalize_to_correlation: matrix is not kq x kq");
  Eigen::VectorXd scale(k);
  for (int a = 0; a < k; ++a) {
    const double d = sigma(a * q, a * q);
    if (!(d > 0.0)) {
      throw NumericalError("normalize_to_correlation: non-positive diagonal for factor " +
                           std::to_string(a + 1));
    }
    for (int j = 1; j < q; ++j) {
      const double dj = sigma(a * q + j, a * q + j);
      if (std::abs(dj - d) > 1e-10 * std::abs(d)) {
        throw NumericalError("normalize_to_correlation: diagonal not constant within factor " +
                             std::to_string(a + 1));
      }
    }
    scale(a) = 1.0 / std::sqrt(d);
  }
  Eigen::VectorXd s(k * q);
  for (int a = 0; a < k; ++a) s.segment(a * q, q).setConstant(scale(a));
  Eigen::MatrixXd out = s.asDiagonal() * sigma * s.asDiagonal();
  out.diagonal().setOnes();
  return out;
}

/// Unit-variance covariance used by the factor model.
inline Eigen::MatrixXd assemble_normalized_covariance(const MogpHyperparams& hp,
                                                      const TimeGrid& grid) {
  return normalize_to_correlation(assemble_covariance(hp, grid), hp.k(), grid.size());
}

/// Cholesky factor of a covariance built from hp; reports hp on failure.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_or_throw(const Eigen::MatrixXd& sigma,
                                                     const MogpHyperparams& hp,
                                                     const char* context) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(context) + ": covariance is not positive definite for " +
                         hp.to_string());
  }
  return llt;
}

}  // namespace dsbfa

#endif  // DSBFA_CP_KERNEL_HPP
