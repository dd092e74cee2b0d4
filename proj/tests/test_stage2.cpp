#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <laug/rng.hpp>
#include <laug/stage2.hpp>

#include "oracles.hpp"

using laug::LatentPairSet;
using laug::LinearDynamicsModel;
using Mat = laug::MatX<double>;
using Vec = laug::VecX<double>;

namespace {

std::vector<std::pair<Vec, Vec>> random_pairs(int z, int n, laug::Rng& rng,
                                              bool identity_targets = false) {
  std::vector<std::pair<Vec, Vec>> pairs;
  for (int k = 0; k < n; ++k) {
    Vec d(z), dn(z);
    for (int i = 0; i < z; ++i) {
      d(i) = rng.normal();
      dn(i) = identity_targets ? d(i) : rng.normal();
    }
    pairs.emplace_back(d, dn);
  }
  return pairs;
}

}  // namespace

TEST_CASE("design matrices: single-pair layout") {
  Vec d(2), dn(2);
  d << 3, 4;
  dn << 5, 6;
  auto set = laug::build_design_matrices<double>({{d, dn}});
  REQUIRE(set.X.rows() == 3);
  REQUIRE(set.X.cols() == 1);
  CHECK(set.X(0, 0) == 3);
  CHECK(set.X(1, 0) == 4);
  CHECK(set.X(2, 0) == 1);
  CHECK(set.Y(0, 0) == 5);
  CHECK(set.Y(1, 0) == 6);
}

TEST_CASE("design matrices: shapes, homogeneous row, column round-trip") {
  laug::Rng rng(31);
  auto pairs = random_pairs(5, 17, rng);
  auto set = laug::build_design_matrices<double>(pairs);
  CHECK(set.X.rows() == 6);
  CHECK(set.X.cols() == 17);
  CHECK(set.Y.rows() == 5);
  for (int k = 0; k < 17; ++k) {
    CHECK(set.X(5, k) == 1.0);
    for (int i = 0; i < 5; ++i) {
      CHECK(set.X(i, k) == pairs[static_cast<std::size_t>(k)].first(i));
      CHECK(set.Y(i, k) == pairs[static_cast<std::size_t>(k)].second(i));
    }
  }
}

TEST_CASE("design matrices: dimension inconsistency rejected") {
  Vec d2(2), d3(3);
  d2 << 1, 2;
  d3 << 1, 2, 3;
  CHECK_THROWS_AS(laug::build_design_matrices<double>({{d2, d2}, {d3, d3}}), laug::ShapeError);
  CHECK_THROWS_AS(laug::build_design_matrices<double>({}), laug::ValueError);
}

TEST_CASE("fit_ridge recovers identity dynamics from identity pairs") {
  laug::Rng rng(32);
  auto set = laug::build_design_matrices<double>(random_pairs(6, 60, rng, true));
  auto model = laug::fit_ridge(set, 0.0);
  REQUIRE(model.A.rows() == 6);
  REQUIRE(model.A.cols() == 7);
  double dev = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 7; ++j) dev = std::max(dev, std::abs(model.A(i, j) - (i == j ? 1.0 : 0.0)));
  CHECK(dev < 1e-6);
}

TEST_CASE("fit_ridge shrinks to zero as lambda grows") {
  laug::Rng rng(33);
  auto set = laug::build_design_matrices<double>(random_pairs(6, 40, rng));
  auto model = laug::fit_ridge(set, 1e9);
  CHECK(model.A.norm() < 1e-3);
}

TEST_CASE("fit_ridge reports singular systems at lambda 0") {
  laug::Rng rng(34);
  // fewer pairs than latent dimension + 1 leaves the Gram matrix rank-deficient
  auto set = laug::build_design_matrices<double>(random_pairs(8, 4, rng));
  try {
    laug::fit_ridge(set, 0.0);
    FAIL("expected NumericalAbort");
  } catch (const laug::NumericalAbort& e) {
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }
  CHECK_NOTHROW(laug::fit_ridge(set, 1e-3));
}

TEST_CASE("fit_ridge matches a gradient-descent minimizer") {
  for (std::uint64_t seed : {40u, 41u, 42u}) {
    laug::Rng rng(seed);
    const int z = 8, n = 40;
    auto set = laug::build_design_matrices<double>(random_pairs(z, n, rng));
    laug::RidgeDiagnostics diag;
    auto model = laug::fit_ridge(set, 0.1, &diag);
    CHECK(diag.solve_residual < 1e-8);

    Mat a_gd = oracle::ridge_gradient_descent(set.X, set.Y, 0.1);
    double max_elem = 0.0;
    for (int i = 0; i < model.A.rows(); ++i)
      for (int j = 0; j < model.A.cols(); ++j)
        max_elem = std::max(max_elem, std::abs(model.A(i, j) - a_gd(i, j)));
    CHECK(max_elem < 1e-4);

    LinearDynamicsModel<double> gd_model{a_gd, 0.1};
    const double obj_closed = laug::ridge_objective(model, set);
    const double obj_gd = laug::ridge_objective(gd_model, set);
    CHECK(std::abs(obj_closed - obj_gd) / std::max(1.0, std::abs(obj_gd)) < 1e-6);
  }
}

TEST_CASE("ridge objective values and stationarity at the closed form") {
  laug::Rng rng(35);
  const int z = 7;
  auto set = laug::build_design_matrices<double>(random_pairs(z, 30, rng));

  LinearDynamicsModel<double> zero{Mat::Zero(z, z + 1), 0.0};
  CHECK(laug::ridge_objective(zero, set) == doctest::Approx(set.Y.squaredNorm()).epsilon(1e-12));

  // exact fit at lambda 0 on consistent data
  auto idset = laug::build_design_matrices<double>(random_pairs(z, 30, rng, true));
  auto idmodel = laug::fit_ridge(idset, 0.0);
  CHECK(laug::ridge_objective(idmodel, idset) < 1e-12);

  const double lambda = 0.1;
  auto model = laug::fit_ridge(set, lambda);
  Mat grad = 2.0 * (model.A * set.X - set.Y) * set.X.transpose() + 2.0 * lambda * model.A;
  CHECK(grad.norm() < 1e-6);
}

TEST_CASE("fitted model is the global minimizer against random alternatives") {
  laug::Rng rng(36);
  const int z = 6;
  auto set = laug::build_design_matrices<double>(random_pairs(z, 25, rng));
  const double lambda = 0.05;
  auto model = laug::fit_ridge(set, lambda);
  const double best = laug::ridge_objective(model, set);
  for (int trial = 0; trial < 100; ++trial) {
    LinearDynamicsModel<double> other{model.A, lambda};
    for (int i = 0; i < other.A.rows(); ++i)
      for (int j = 0; j < other.A.cols(); ++j)
        other.A(i, j) += rng.normal(0.0, trial % 2 ? 1e-3 : 1.0);
    CHECK(laug::ridge_objective(other, set) >= best);
  }
}

TEST_CASE("||A|| is monotone nonincreasing in lambda") {
  laug::Rng rng(37);
  auto set = laug::build_design_matrices<double>(random_pairs(6, 30, rng));
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-4, 1e-2, 1.0, 1e2, 1e4}) {
    const double norm = laug::fit_ridge(set, lambda).A.norm();
    CHECK(norm <= prev + 1e-12);
    prev = norm;
  }
}

TEST_CASE("predict_latent on canonical matrices") {
  const int z = 4;
  LinearDynamicsModel<double> ident{Mat::Zero(z, z + 1), 0.0};
  ident.A.leftCols(z) = Mat::Identity(z, z);
  Vec d(z);
  d << 0.5, -1.0, 2.0, 0.0;
  Vec out = laug::predict_latent(ident, d);
  CHECK((out - d).norm() == 0.0);

  LinearDynamicsModel<double> constant{Mat::Zero(z, z + 1), 0.0};
  Vec b(z);
  b << 1, 2, 3, 4;
  constant.A.col(z) = b;
  Vec out2 = laug::predict_latent(constant, d);
  CHECK((out2 - b).norm() == 0.0);

  Vec wrong(z + 1);
  wrong.setZero();
  CHECK_THROWS_AS(laug::predict_latent(ident, wrong), laug::ShapeError);
}

TEST_CASE("prediction decomposes as the affine identity A_lin d + a_const") {
  laug::Rng rng(38);
  auto set = laug::build_design_matrices<double>(random_pairs(5, 30, rng));
  auto model = laug::fit_ridge(set, 0.01);
  const Mat a_lin = model.linear_part();
  const Vec a_const = model.constant_part();
  for (int trial = 0; trial < 10; ++trial) {
    Vec d1(5), d2(5);
    for (int i = 0; i < 5; ++i) {
      d1(i) = rng.normal();
      d2(i) = rng.normal();
    }
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Vec direct = laug::predict_latent<double>(model, (alpha * d1 + beta * d2).eval());
    Vec composed = a_lin * (alpha * d1 + beta * d2) + a_const;
    CHECK((direct - composed).norm() < 1e-12);
    // affine split: predict(d) - a_const is linear in d
    Vec lhs = laug::predict_latent<double>(model, (alpha * d1).eval()) - a_const;
    Vec rhs = alpha * (laug::predict_latent(model, d1) - a_const);
    CHECK((lhs - rhs).norm() < 1e-9);
  }
}
