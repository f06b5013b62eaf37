#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "onramp/common.hpp"

namespace onramp::nhmm {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using CovVec = Eigen::Matrix<double, kCovariateDim, 1>;

inline Vec4 to_eigen(const Behavior& o) { return Vec4(o[0], o[1], o[2], o[3]); }
inline CovVec to_eigen(const Covariates& x) {
  CovVec v;
  for (std::size_t c = 0; c < kCovariateDim; ++c) v[static_cast<Eigen::Index>(c)] = x[c];
  return v;
}

/// Emission and transition parameters of a K-state covariate-driven HMM.
///
/// The transition into state j at time t is a multinomial logit with
/// intercept xi(i, j) for source state i and covariate weights rho.row(j).
/// The last state is the reference: xi.col(K-1) and rho.row(K-1) are zero.
struct NhmmParams {
  int K = 1;
  std::vector<Vec4> mu;
  std::vector<Mat4> sigma;
  Eigen::MatrixXd xi;   ///< K x K
  Eigen::MatrixXd rho;  ///< K x 6
  Eigen::VectorXd pi0;  ///< K

  static NhmmParams zeros(int K) {
    NhmmParams p;
    p.K = K;
    p.mu.assign(static_cast<std::size_t>(K), Vec4::Zero());
    p.sigma.assign(static_cast<std::size_t>(K), Mat4::Identity());
    p.xi = Eigen::MatrixXd::Zero(K, K);
    p.rho = Eigen::MatrixXd::Zero(K, static_cast<Eigen::Index>(kCovariateDim));
    p.pi0 = Eigen::VectorXd::Constant(K, 1.0 / K);
    return p;
  }

  /// Re-expresses the logits relative to the last state; probabilities are unchanged.
  void rezero_reference() {
    const Eigen::Index r = K - 1;
    for (Eigen::Index i = 0; i < K; ++i) xi.row(i).array() -= xi(i, r);
    const Eigen::RowVectorXd ref = rho.row(r);
    for (Eigen::Index j = 0; j < K; ++j) rho.row(j) -= ref;
  }
};

/// Row-stochastic transition matrix at standardized covariates x.
inline Eigen::MatrixXd log_transition_matrix_at(const NhmmParams& p, const CovVec& x) {
  const Eigen::VectorXd u = p.rho * x;
  Eigen::MatrixXd out(p.K, p.K);
  for (Eigen::Index i = 0; i < p.K; ++i) {
    const Eigen::RowVectorXd eta = p.xi.row(i) + u.transpose();
    const double m = eta.maxCoeff();
    const double lse = m + std::log((eta.array() - m).exp().sum());
    out.row(i) = eta.array() - lse;
  }
  return out;
}

inline Eigen::MatrixXd transition_matrix_at(const NhmmParams& p, const CovVec& x) {
  if (!x.allFinite()) throw InputError("transition_matrix_at: covariates must be finite");
  Eigen::MatrixXd a = log_transition_matrix_at(p, x).array().exp();
  for (Eigen::Index i = 0; i < p.K; ++i) a.row(i) /= a.row(i).sum();
  return a;
}

inline Eigen::MatrixXd transition_matrix_at(const NhmmParams& p, const Covariates& x) {
  return transition_matrix_at(p, to_eigen(x));
}

/// Cached Cholesky factor of one Gaussian emission.
class GaussianEmission {
 public:
  GaussianEmission() = default;
  GaussianEmission(const Vec4& mean, const Mat4& cov) : mean_(mean) {
    Eigen::LLT<Mat4> llt(cov);
    if (llt.info() != Eigen::Success || !cov.allFinite())
      throw ModelStateError("emission covariance is not positive definite");
    chol_ = llt.matrixL();
    const double logdet = 2.0 * chol_.diagonal().array().log().sum();
    constant_ = -0.5 * (4.0 * std::log(2.0 * std::numbers::pi) + logdet);
  }

  double logdensity(const Vec4& o) const {
    const Vec4 z = chol_.triangularView<Eigen::Lower>().solve(o - mean_);
    return constant_ - 0.5 * z.squaredNorm();
  }

 private:
  Vec4 mean_ = Vec4::Zero();
  Mat4 chol_ = Mat4::Identity();
  double constant_ = 0.0;
};

/// Log multivariate-normal density of o under state k.
inline double emission_logdensity(const NhmmParams& p, const Behavior& o, int k) {
  if (k < 0 || k >= p.K) throw InputError("emission_logdensity: state out of range");
  const auto i = static_cast<std::size_t>(k);
  return GaussianEmission(p.mu[i], p.sigma[i]).logdensity(to_eigen(o));
}

/// Per-covariate z-scoring. Covariates with (numerically) zero spread are
/// marked inactive: they map to 0 and carry no regression weight.
struct CovariateScaler {
  Covariates mean{};
  Covariates sd{1, 1, 1, 1, 1, 1};
  std::array<bool, kCovariateDim> active{true, true, true, true, true, true};

  static CovariateScaler identity() { return {}; }

  static CovariateScaler fit(std::span<const std::vector<Covariates>* const> sequences) {
    CovariateScaler s;
    std::size_t n = 0;
    for (const auto* seq : sequences) n += seq->size();
    if (n == 0) return s;
    for (std::size_t c = 0; c < kCovariateDim; ++c) {
      double sum = 0.0;
      for (const auto* seq : sequences)
        for (const auto& x : *seq) sum += x[c];
      const double m = sum / static_cast<double>(n);
      double ss = 0.0;
      for (const auto* seq : sequences)
        for (const auto& x : *seq) ss += (x[c] - m) * (x[c] - m);
      const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
      s.mean[c] = m;
      s.active[c] = sd > 1e-9 * (1.0 + std::abs(m));
      s.sd[c] = s.active[c] ? sd : 1.0;
    }
    return s;
  }

  /// Marks constant covariates of already-standardized data inactive.
  static CovariateScaler detect_constant(std::span<const std::vector<Covariates>* const> sequences) {
    CovariateScaler fitted = fit(sequences);
    CovariateScaler s;
    s.active = fitted.active;
    return s;
  }

  Covariates apply(const Covariates& x) const {
    Covariates z{};
    for (std::size_t c = 0; c < kCovariateDim; ++c) z[c] = active[c] ? (x[c] - mean[c]) / sd[c] : 0.0;
    return z;
  }

  std::vector<Covariates> apply(const std::vector<Covariates>& X) const {
    std::vector<Covariates> out;
    out.reserve(X.size());
    for (const auto& x : X) out.push_back(apply(x));
    return out;
  }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (bool a : active) n += a;
    return n;
  }

  std::vector<std::string> dropped_names() const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < kCovariateDim; ++c)
      if (!active[c]) out.emplace_back(kCovariateNames[c]);
    return out;
  }

  /// Coefficients on the raw covariate scale that give the same logits.
  void to_raw_scale(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& rho, Eigen::MatrixXd& xi_raw,
                    Eigen::MatrixXd& rho_raw) const {
    rho_raw = Eigen::MatrixXd::Zero(rho.rows(), rho.cols());
    xi_raw = xi;
    for (Eigen::Index j = 0; j < rho.rows(); ++j) {
      double shift = 0.0;
      for (std::size_t c = 0; c < kCovariateDim; ++c) {
        if (!active[c]) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        rho_raw(j, ci) = rho(j, ci) / sd[c];
        shift += rho(j, ci) * mean[c] / sd[c];
      }
      xi_raw.col(j).array() -= shift;
    }
  }
};

}  // namespace onramp::nhmm
