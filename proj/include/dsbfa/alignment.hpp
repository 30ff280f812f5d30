#ifndef DSBFA_ALIGNMENT_HPP
#define DSBFA_ALIGNMENT_HPP

// Signed-permutation alignment of factor solutions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/error.hpp"
#include "dsbfa/factor_model.hpp"
#include "dsbfa/gibbs.hpp"
#include "dsbfa/random.hpp"

namespace dsbfa {

inline constexpr int kMaxAlignedFactors = 8;

/// New factor j is old factor perm[j] multiplied by sign[j].
struct SignedPermutation {
  std::vector<int> perm;
  std::vector<int> sign;

  static SignedPermutation identity(int k) {
    SignedPermutation sp;
    sp.perm.resize(static_cast<std::size_t>(k));
    std::iota(sp.perm.begin(), sp.perm.end(), 0);
    sp.sign.assign(static_cast<std::size_t>(k), 1);
    return sp;
  }

  static SignedPermutation random(int k, Rng& rng) {
    SignedPermutation sp = identity(k);
    for (int j = k - 1; j > 0; --j) {
      std::swap(sp.perm[static_cast<std::size_t>(j)],
                sp.perm[rng.index(static_cast<std::size_t>(j) + 1)]);
    }
    for (auto& s : sp.sign) s = rng.uniform() < 0.5 ? -1 : 1;
    return sp;
  }

  int k() const { return static_cast<int>(perm.size()); }

  void validate() const {
    detail::require(!perm.empty(), "SignedPermutation: empty");
    detail::require(sign.size() == perm.size(), "SignedPermutation: sign and permutation lengths differ");
    std::vector<int> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (int j = 0; j < k(); ++j) {
      detail::require(sorted[static_cast<std::size_t>(j)] == j, "SignedPermutation: not a bijection");
      detail::require(sign[static_cast<std::size_t>(j)] == 1 || sign[static_cast<std::size_t>(j)] == -1,
                      "SignedPermutation: signs must be +1 or -1");
    }
  }

  SignedPermutation inverse() const {
    SignedPermutation inv = identity(k());
    for (int j = 0; j < k(); ++j) {
      const auto old = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
      inv.perm[old] = j;
      inv.sign[old] = sign[static_cast<std::size_t>(j)];
    }
    return inv;
  }

  /// Applying the result equals applying `first`, then *this.
  SignedPermutation after(const SignedPermutation& first) const {
    detail::require(first.k() == k(), "SignedPermutation: size mismatch in composition");
    SignedPermutation out = identity(k());
    for (int j = 0; j < k(); ++j) {
      const auto mid = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
      out.perm[static_cast<std::size_t>(j)] = first.perm[mid];
      out.sign[static_cast<std::size_t>(j)] = sign[static_cast<std::size_t>(j)] * first.sign[mid];
    }
    return out;
  }

  bool is_identity() const { return *this == identity(k()); }

  /// Lexicographic order on (perm, sign bits with +1 < -1); identity is smallest.
  bool encodes_before(const SignedPermutation& other) const {
    if (perm != other.perm) return perm < other.perm;
    for (std::size_t j = 0; j < sign.size(); ++j) {
      if (sign[j] != other.sign[j]) return sign[j] > other.sign[j];
    }
    return false;
  }

  std::string to_string() const {
    std::string s = "(";
    for (int j = 0; j < k(); ++j) {
      if (j) s += ' ';
      s += sign[static_cast<std::size_t>(j)] < 0 ? "-" : "+";
      s += std::to_string(perm[static_cast<std::size_t>(j)] + 1);
    }
    return s + ")";
  }

  bool operator==(const SignedPermutation& other) const = default;
};

namespace detail {

inline void check_size(const SignedPermutation& sp, Eigen::Index k, const char* what) {
  sp.validate();
  require(sp.k() == k, std::string("signed permutation of size ") + std::to_string(sp.k()) +
                           " does not match " + what + " with " + std::to_string(k) + " factors");
}

}  // namespace detail

/// Columns of a p x k matrix.
inline Eigen::MatrixXd apply_columns(const SignedPermutation& sp, const Eigen::MatrixXd& L) {
  detail::check_size(sp, L.cols(), "loading matrix");
  Eigen::MatrixXd out(L.rows(), L.cols());
  for (int j = 0; j < sp.k(); ++j) {
    out.col(j) = sp.sign[static_cast<std::size_t>(j)] * L.col(sp.perm[static_cast<std::size_t>(j)]);
  }
  return out;
}

/// Rows of a k x q score matrix.
inline Eigen::MatrixXd apply_rows(const SignedPermutation& sp, const Eigen::MatrixXd& Y) {
  detail::check_size(sp, Y.rows(), "score matrix");
  Eigen::MatrixXd out(Y.rows(), Y.cols());
  for (int j = 0; j < sp.k(); ++j) {
    out.row(j) = sp.sign[static_cast<std::size_t>(j)] * Y.row(sp.perm[static_cast<std::size_t>(j)]);
  }
  return out;
}

struct FactorSolution {
  Eigen::MatrixXd L;
  std::vector<Eigen::MatrixXd> Y;
};

inline FactorSolution apply(const SignedPermutation& sp, const Eigen::MatrixXd& L,
                            const std::vector<Eigen::MatrixXd>& Y) {
  FactorSolution out{apply_columns(sp, L), {}};
  out.Y.reserve(Y.size());
  for (const auto& Yi : Y) out.Y.push_back(apply_rows(sp, Yi));
  return out;
}

/// Relabels every factor-indexed part of a sampler state. Inclusion indicators,
/// slab variances and inclusion probabilities are permuted; coefficients and
/// scores also take the signs.
inline LatentState apply(const SignedPermutation& sp, const LatentState& st) {
  detail::check_size(sp, st.A.cols(), "state");
  LatentState out = st;
  out.A = apply_columns(sp, st.A);
  for (int j = 0; j < sp.k(); ++j) {
    const int old = sp.perm[static_cast<std::size_t>(j)];
    out.Z.col(j) = st.Z.col(old);
    out.rho2(j) = st.rho2(old);
    out.pi(j) = st.pi(old);
  }
  for (auto& Yi : out.Y) Yi = apply_rows(sp, Yi);
  return out;
}

/// Flipping factor a flips the shared-kernel amplitude and the constant mean.
inline MogpHyperparams apply(const SignedPermutation& sp, const MogpHyperparams& hp) {
  detail::check_size(sp, hp.k(), "hyperparameters");
  MogpHyperparams out = hp;
  for (int j = 0; j < sp.k(); ++j) {
    const int old = sp.perm[static_cast<std::size_t>(j)];
    const double s = sp.sign[static_cast<std::size_t>(j)];
    out.v0(j) = s * hp.v0(old);
    out.v1(j) = hp.v1(old);
    out.B0(j) = hp.B0(old);
    out.B1(j) = hp.B1(old);
    out.c(j) = s * hp.c(old);
  }
  return out;
}

/// R'(i, j) = s_i s_j R(perm_i, perm_j) for a k x k correlation matrix.
inline Eigen::MatrixXd apply_to_correlation(const SignedPermutation& sp, const Eigen::MatrixXd& R) {
  detail::check_size(sp, R.rows(), "correlation matrix");
  detail::require(R.rows() == R.cols(), "correlation matrix must be square");
  Eigen::MatrixXd out(R.rows(), R.cols());
  for (int i = 0; i < sp.k(); ++i) {
    for (int j = 0; j < sp.k(); ++j) {
      out(i, j) = sp.sign[static_cast<std::size_t>(i)] * sp.sign[static_cast<std::size_t>(j)] *
                  R(sp.perm[static_cast<std::size_t>(i)], sp.perm[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

/// L * Y with each entry summed over factors in sorted-term order. The terms
/// form the same multiset under any signed permutation, so the result is
/// bit-identical before and after `apply`.
inline Eigen::MatrixXd invariant_product(const Eigen::MatrixXd& L, const Eigen::MatrixXd& Y) {
  detail::require(L.cols() == Y.rows(), "invariant_product: inner dimensions differ");
  Eigen::MatrixXd out(L.rows(), Y.cols());
  std::vector<double> terms(static_cast<std::size_t>(L.cols()));
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    for (Eigen::Index c = 0; c < Y.cols(); ++c) {
      for (Eigen::Index a = 0; a < L.cols(); ++a) terms[static_cast<std::size_t>(a)] = L(r, a) * Y(a, c);
      std::sort(terms.begin(), terms.end());
      double s = 0.0;
      for (double t : terms) s += t;
      out(r, c) = s;
    }
  }
  return out;
}

inline double mean_absolute_difference(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "mean_absolute_difference: shapes differ");
  detail::require(a.size() > 0, "mean_absolute_difference: empty matrices");
  return (a - b).cwiseAbs().mean();
}

struct Alignment {
  SignedPermutation sp;       ///< apply(sp, estimate) is closest to the reference
  Eigen::MatrixXd aligned;
  double mad = 0.0;
  double unaligned_mad = 0.0;
};

/// Exhaustive search over all 2^k k! signed column permutations of `estimate`.
inline Alignment align_to_reference(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference) {
  const auto k = estimate.cols();
  detail::require(k >= 1, "align_to_reference: no factors");
  if (k > kMaxAlignedFactors) {
    throw InvalidArgument("align_to_reference: k = " + std::to_string(k) + " exceeds the enumeration bound of " +
                          std::to_string(kMaxAlignedFactors));
  }
  detail::require(reference.rows() == estimate.rows() && reference.cols() == k,
                  "align_to_reference: estimate and reference shapes differ");
  Alignment best;
  best.unaligned_mad = mean_absolute_difference(estimate, reference);
  best.mad = std::numeric_limits<double>::infinity();
  // Per-column costs: cost(j, old, s) = sum_r |s * est(r, old) - ref(r, j)|.
  Eigen::MatrixXd plus(k, k), minus(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index old = 0; old < k; ++old) {
      plus(j, old) = (estimate.col(old) - reference.col(j)).cwiseAbs().sum();
      minus(j, old) = (estimate.col(old) + reference.col(j)).cwiseAbs().sum();
    }
  }
  SignedPermutation cand = SignedPermutation::identity(static_cast<int>(k));
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    for (unsigned mask = 0; mask < (1u << static_cast<unsigned>(k)); ++mask) {
      double cost = 0.0;
      for (int j = 0; j < static_cast<int>(k); ++j) {
        const bool flip = (mask >> (k - 1 - j)) & 1u;
        cand.sign[static_cast<std::size_t>(j)] = flip ? -1 : 1;
        const int old = cand.perm[static_cast<std::size_t>(j)];
        cost += flip ? minus(j, old) : plus(j, old);
      }
      if (cost < best_cost || (cost == best_cost && cand.encodes_before(best.sp))) {
        best_cost = cost;
        best.sp = cand;
      }
    }
  } while (std::next_permutation(cand.perm.begin(), cand.perm.end()));
  best.aligned = apply_columns(best.sp, estimate);
  best.mad = mean_absolute_difference(best.aligned, reference);
  return best;
}

/// Index of the draw with the largest complete-data log-likelihood.
inline std::size_t best_draw_index(const Dataset& ds, const ChainSamples& chain, const MogpHyperparams& hp,
                                   const PriorConfig& prior) {
  detail::require(!chain.draws.empty(), "best_draw_index: chain has no draws");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < chain.draws.size(); ++d) {
    const double v = complete_data_loglik(ds, chain.draws[d], hp, prior);
    if (v > best_value) {
      best_value = v;
      best = d;
    }
  }
  return best;
}

struct AlignedChain {
  ChainSamples samples;
  std::vector<SignedPermutation> transforms;  ///< applied to each stored draw
};

/// Align every draw's loadings to `pivot_loadings`.
inline AlignedChain align_chain_draws(const ChainSamples& chain, const Eigen::MatrixXd& pivot_loadings) {
  detail::require(!chain.draws.empty(), "align_chain_draws: chain has no draws");
  AlignedChain out;
  out.samples.config = chain.config;
  out.samples.sweeps = chain.sweeps;
  out.samples.draws.reserve(chain.draws.size());
  for (const auto& st : chain.draws) {
    const Alignment al = align_to_reference(st.loadings(), pivot_loadings);
    out.transforms.push_back(al.sp);
    out.samples.draws.push_back(apply(al.sp, st));
  }
  return out;
}

inline AlignedChain align_chain_draws(const ChainSamples& chain, std::size_t pivot) {
  detail::require(pivot < chain.draws.size(), "align_chain_draws: pivot index out of range");
  return align_chain_draws(chain, chain.draws[pivot].loadings());
}

/// Cross-chain alignment against one shared pivot: the best draw of the first chain.
inline std::vector<AlignedChain> align_chains(const Dataset& ds, const std::vector<ChainSamples>& chains,
                                              const MogpHyperparams& hp, const PriorConfig& prior) {
  detail::require(!chains.empty(), "align_chains: no chains");
  const std::size_t pivot = best_draw_index(ds, chains.front(), hp, prior);
  const Eigen::MatrixXd ref = chains.front().draws[pivot].loadings();
  std::vector<AlignedChain> out;
  for (const auto& c : chains) out.push_back(align_chain_draws(c, ref));
  return out;
}

}  // namespace dsbfa

#endif  // DSBFA_ALIGNMENT_HPP
