#pragma once

#include <Eigen/Cholesky>

#include "laug/common.hpp"

namespace laug {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct PairMeta {
  std::string sequence_id;
  int anchor = 0;
  int gap = 1;
};

// Matched latent codes assembled column-wise: X holds [d^(t); 1], Y holds
// d^(t+x). The trailing homogeneous row of X carries the affine offset.
template <class S>
struct LatentPairSet {
  MatX<S> X;  // (Z+1) x N
  MatX<S> Y;  // Z x N
  std::vector<PairMeta> meta;

  std::int64_t latent_dim() const { return Y.rows(); }
  std::int64_t count() const { return Y.cols(); }
};

template <class S>
LatentPairSet<S> build_design_matrices(const std::vector<std::pair<VecX<S>, VecX<S>>>& pairs,
                                       std::vector<PairMeta> meta = {}) {
  if (pairs.empty()) throw ValueError("build_design_matrices: need at least one pair");
  const Eigen::Index z = pairs.front().first.size();
  for (const auto& [d, dn] : pairs)
    if (d.size() != z || dn.size() != z)
      throw ShapeError("build_design_matrices: inconsistent latent dimension (expected " +
                       std::to_string(z) + ", got " + std::to_string(d.size()) + "/" +
                       std::to_string(dn.size()) + ")");
  LatentPairSet<S> set;
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  set.X.resize(z + 1, n);
  set.Y.resize(z, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    set.X.block(0, k, z, 1) = pairs[static_cast<std::size_t>(k)].first;
    set.X(z, k) = S(1);
    set.Y.col(k) = pairs[static_cast<std::size_t>(k)].second;
  }
  if (!set.X.allFinite() || !set.Y.allFinite())
    throw NumericalAbort("build_design_matrices: non-finite latent codes");
  set.meta = meta.empty() ? std::vector<PairMeta>(static_cast<std::size_t>(n)) : std::move(meta);
  return set;
}

// A maps [d; 1] to the code one gap later; lambda is the Tikhonov weight the
// model was fitted with.
template <class S>
struct LinearDynamicsModel {
  MatX<S> A;  // Z x (Z+1)
  S lambda = S(0);

  MatX<S> linear_part() const { return A.leftCols(A.cols() - 1); }
  VecX<S> constant_part() const { return A.col(A.cols() - 1); }
};

struct RidgeDiagnostics {
  double solve_residual = 0.0;  // relative residual of the normal-equations solve
};

// Ridge solution A = Y X^T (X X^T + lambda I)^{-1}, computed through a
// Cholesky solve of the Gram system rather than an explicit inverse.
template <class S>
LinearDynamicsModel<S> fit_ridge(const LatentPairSet<S>& set, double lambda,
                                 RidgeDiagnostics* diag = nullptr) {
  if (lambda < 0.0) throw ValueError("fit_ridge: lambda must be nonnegative");
  if (set.count() < 1) throw ValueError("fit_ridge: empty pair set");

  const Eigen::Index p = set.X.rows();  // Z+1
  MatX<double> x = set.X.template cast<double>();
  MatX<double> y = set.Y.template cast<double>();
  MatX<double> gram = x * x.transpose();
  gram.diagonal().array() += lambda;
  MatX<double> rhs = x * y.transpose();  // (Z+1) x Z

  Eigen::LDLT<MatX<double>> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff()))
    throw NumericalAbort(
        "fit_ridge: singular Gram system at lambda=" + std::to_string(lambda) +
        "; use lambda > 0 to regularize");

  MatX<double> at = ldlt.solve(rhs);  // (Z+1) x Z, equals A^T
  const double rhs_norm = rhs.norm();
  const double residual =
      rhs_norm > 0.0 ? (gram * at - rhs).norm() / rhs_norm : (gram * at - rhs).norm();
  if (diag) diag->solve_residual = residual;
  if (residual > 1e-8)
    throw NumericalAbort("fit_ridge: normal-equations solve residual " +
                         std::to_string(residual) + " exceeds 1e-8; increase lambda");

  LinearDynamicsModel<S> model;
  model.A = at.transpose().template cast<S>();
  model.lambda = static_cast<S>(lambda);
  if (!model.A.allFinite()) throw NumericalAbort("fit_ridge: non-finite solution");
  (void)p;
  return model;
}

// ||Y - A X||_F^2 + lambda ||A||_F^2
template <class S>
double ridge_objective(const LinearDynamicsModel<S>& model, const LatentPairSet<S>& set) {
  if (model.A.rows() != set.Y.rows() || model.A.cols() != set.X.rows())
    throw ShapeError("ridge_objective: model/set dimension mismatch");
  const MatX<double> a = model.A.template cast<double>();
  const MatX<double> x = set.X.template cast<double>();
  const MatX<double> y = set.Y.template cast<double>();
  const double fit = (y - a * x).squaredNorm();
  return fit + static_cast<double>(model.lambda) * a.squaredNorm();
}

template <class S>
VecX<S> predict_latent(const LinearDynamicsModel<S>& model, const VecX<S>& d) {
  if (d.size() + 1 != model.A.cols())
    throw ShapeError("predict_latent: latent dimension " + std::to_string(d.size()) +
                     " does not match model (" + std::to_string(model.A.cols() - 1) + ")");
  VecX<S> h(d.size() + 1);
  h.head(d.size()) = d;
  h(d.size()) = S(1);
  return model.A * h;
}

// columns predicted from a whole design matrix
template <class S>
MatX<S> predict_latent_all(const LinearDynamicsModel<S>& model, const MatX<S>& x_design) {
  if (x_design.rows() != model.A.cols())
    throw ShapeError("predict_latent_all: design matrix row count mismatch");
  return model.A * x_design;
}

}  // namespace laug
