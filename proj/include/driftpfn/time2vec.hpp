// Time2Vec domain encoding and train-statistics normalization.
//
// t2v(c)[0] = omega_0 * c + phi_0 and t2v(c)[i] = sin(omega_i * c + phi_i)
// for 1 <= i < m: one linear component carrying order and magnitude, the rest
// periodic with learnable frequency and phase.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <vector>

#include "driftpfn/common.hpp"
#include "driftpfn/rng.hpp"

namespace driftpfn {

struct Time2VecParams {
  Eigen::VectorXd omega;
  Eigen::VectorXd phi;

  int m() const { return static_cast<int>(omega.size()); }

  // Frequencies log-spaced over [0.1, 10], phases uniform in [0, 2*pi).
  static Time2VecParams init(int m, RngState& rng) {
    DRIFTPFN_CHECK(m >= 1);
    Time2VecParams p;
    p.omega.resize(m);
    p.phi.resize(m);
    for (int i = 0; i < m; ++i) {
      const double frac = m > 1 ? static_cast<double>(i) / (m - 1) : 0.0;
      p.omega[i] = 0.1 * std::pow(100.0, frac);
      p.phi[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return p;
  }
};

inline Eigen::VectorXd time2vec(double c, const Time2VecParams& p) {
  DRIFTPFN_CHECK(p.omega.size() == p.phi.size() && p.m() >= 1);
  Eigen::VectorXd out(p.m());
  out[0] = p.omega[0] * c + p.phi[0];
  for (int i = 1; i < p.m(); ++i) out[i] = std::sin(p.omega[i] * c + p.phi[i]);
  return out;
}

// Per-column standardization fitted on training rows only, plus an affine map
// for the domain axis. Zero-variance columns are flagged and pass through
// with unit scale, so a constant training column maps to exactly zero. The
// map is strictly increasing per column; values beyond the training range
// stay beyond the mapped training range.
class Normalizer {
 public:
  static Normalizer fit(const Eigen::MatrixXd& train_x,
                        const Eigen::VectorXd& train_c) {
    if (train_x.rows() != train_c.size())
      throw DataError("normalizer: row count mismatch");
    if (train_x.rows() < 2)
      throw DataError("normalizer: need at least two training rows");
    Normalizer n;
    const auto rows = static_cast<double>(train_x.rows());
    n.mean_.resize(train_x.cols());
    n.std_.resize(train_x.cols());
    n.flagged_.resize(train_x.cols());
    for (int j = 0; j < train_x.cols(); ++j) {
      n.mean_[j] = train_x.col(j).mean();
      n.std_[j] =
          std::sqrt((train_x.col(j).array() - n.mean_[j]).square().sum() / rows);
      n.flagged_[j] = n.std_[j] < kEps;
      if (n.flagged_[j]) n.std_[j] = 1.0;
    }
    n.dom_mean_ = train_c.mean();
    n.dom_std_ = std::sqrt((train_c.array() - n.dom_mean_).square().sum() / rows);
    n.dom_flagged_ = n.dom_std_ < kEps;
    if (n.dom_flagged_) n.dom_std_ = 1.0;
    return n;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean_.size())
      throw DataError("normalizer: column count mismatch");
    return (x.rowwise() - mean_.transpose()).array().rowwise() /
           std_.transpose().array();
  }

  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const {
    return (z.array().rowwise() * std_.transpose().array()).matrix().rowwise() +
           mean_.transpose();
  }

  double apply_domain(double c) const { return (c - dom_mean_) / dom_std_; }

  Eigen::VectorXd apply_domain(const Eigen::VectorXd& c) const {
    return (c.array() - dom_mean_) / dom_std_;
  }

  double inverse_domain(double z) const { return z * dom_std_ + dom_mean_; }

  bool column_flagged(int j) const { return flagged_[j]; }
  bool domain_flagged() const { return dom_flagged_; }
  int num_columns() const { return static_cast<int>(mean_.size()); }

 private:
  static constexpr double kEps = 1e-12;
  Eigen::VectorXd mean_, std_;
  std::vector<bool> flagged_;
  double dom_mean_ = 0.0, dom_std_ = 1.0;
  bool dom_flagged_ = false;
};

}  // namespace driftpfn
