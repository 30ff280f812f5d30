#ifndef DSBFA_QUADRATURE_ORACLE_HPP
#define DSBFA_QUADRATURE_ORACLE_HPP

// Numerical evaluation of the kernel convolution integrals
//   int h_a(t - s) h_b(t' - s) ds,   h(u) = v exp(-B^2 u^2 / 2),
// used to check the closed-form covariances. Nothing in the library depends on
// this header.

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/error.hpp"

namespace dsbfa {

namespace detail {

/// int v_a exp(-Ba^2 (dt - s)^2 / 2) * v_b exp(-Bb^2 s^2 / 2) ds over the real line.
inline double convolve_kernels(double va, double Ba, double vb, double Bb, double dt) {
  if (va == 0.0 || vb == 0.0) return 0.0;
  const double ba2 = Ba * Ba;
  const double bb2 = Bb * Bb;
  // The integrand is a Gaussian in s centred at ba2 dt / (ba2 + bb2).
  const double centre = ba2 * dt / (ba2 + bb2);
  const double width = 1.0 / std::sqrt(ba2 + bb2);
  auto integrand = [&](double s) {
    const double u = dt - s;
    return va * vb * std::exp(-0.5 * ba2 * u * u - 0.5 * bb2 * s * s);
  };
  double error = 0.0;
  const double half = 40.0 * width;
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, centre - half, centre + half, 15, 1e-13, &error);
  if (!std::isfinite(value) || error > 1e-9 * std::max(1.0, std::abs(value))) {
    throw NumericalError("quadrature_oracle: integral did not converge");
  }
  return value;
}

}  // namespace detail

/// Covariance between factor a and factor b at lag dt by quadrature. For a == b
/// noise is added at zero lag (same observation index).
inline double quadrature_oracle(const MogpHyperparams& hp, int a, int b, double dt) {
  hp.validate();
  detail::check_factor(hp, a);
  detail::check_factor(hp, b);
  detail::require(std::isfinite(dt), "quadrature_oracle: non-finite lag");
  double value = detail::convolve_kernels(hp.v0(a), hp.B0(a), hp.v0(b), hp.B0(b), dt);
  if (a == b) {
    value += detail::convolve_kernels(hp.v1(a), hp.B1(a), hp.v1(a), hp.B1(a), dt);
    if (dt == 0.0) value += hp.psi2;
  }
  return value;
}

}  // namespace dsbfa

#endif  // DSBFA_QUADRATURE_ORACLE_HPP
