#include <tmsopt/qp.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace tmsopt;
using Catch::Matchers::WithinAbs;

namespace {

QuadraticProgram reference_problem() {
  const int n = 6, m = 5;
  QuadraticProgram qp;
  qp.H.resize(n, n);
  qp.c.resize(n);
  qp.A.resize(m, n);
  qp.b.resize(m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) qp.H(i, j) = i == j ? 2.0 + i : 0.3 / (1 + std::abs(i - j));
    qp.c[i] = 4.0 * std::sin(1.0 + i);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) qp.A(i, j) = std::cos(0.7 * (i + 1) * (j + 1));
    qp.b[i] = 0.5 + 0.1 * i;
  }
  qp.lb = Eigen::VectorXd::Constant(n, -0.8);
  return qp;
}

}  // namespace

TEST_CASE("dense QP matches the conic reference solution") {
  // numerics_oracle.py (cvxpy / Clarabel at 1e-12)
  const double x_ref[] = {-0.8,           -0.465507350018, 0.0959071204147,
                          0.279986442943, 0.371402002667,  0.294185024928};
  const auto r = solve_qp(reference_problem());
  REQUIRE(r.status == QpStatus::optimal);
  REQUIRE_THAT(r.objective, WithinAbs(-5.02571196144734, 1e-8));
  for (int i = 0; i < 6; ++i) REQUIRE_THAT(r.x[i], WithinAbs(x_ref[i], 1e-7));
}

TEST_CASE("unconstrained QP reduces to the linear solve") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const int n = 12;
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = nd(rng);
  QuadraticProgram qp;
  qp.H = g * g.transpose() + Eigen::MatrixXd::Identity(n, n);
  qp.c = Eigen::VectorXd::NullaryExpr(n, [&] { return nd(rng); });
  qp.A.resize(0, n);
  qp.b.resize(0);
  const auto r = solve_qp(qp);
  const Eigen::VectorXd x = qp.H.ldlt().solve(-qp.c);
  REQUIRE(r.status == QpStatus::optimal);
  REQUIRE((r.x - x).norm() < 1e-7 * (1.0 + x.norm()));
}

TEST_CASE("box-only QP clips the separable minimizer") {
  QuadraticProgram qp;
  qp.H = Eigen::VectorXd::Constant(4, 2.0).asDiagonal();
  qp.c = Eigen::Vector4d(-4.0, 4.0, -1.0, 0.5);
  qp.A.resize(0, 4);
  qp.b.resize(0);
  qp.lb = Eigen::VectorXd::Constant(4, -1.0);
  qp.ub = Eigen::VectorXd::Constant(4, 1.0);
  const auto r = solve_qp(qp);
  REQUIRE(r.status == QpStatus::optimal);
  const double expect[] = {1.0, -1.0, 0.5, -0.25};
  for (int i = 0; i < 4; ++i) REQUIRE_THAT(r.x[i], WithinAbs(expect[i], 1e-7));
}

TEST_CASE("random feasible QPs satisfy the KKT conditions") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 8 + trial % 5, m = 10;
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = nd(rng);
    QuadraticProgram qp;
    qp.H = g * g.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    qp.c = Eigen::VectorXd::NullaryExpr(n, [&] { return 3.0 * nd(rng); });
    qp.A = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return nd(rng); });
    // x = 0 strictly feasible
    qp.b = Eigen::VectorXd::NullaryExpr(m, [&] { return 0.5 + std::abs(nd(rng)); });
    qp.lb = Eigen::VectorXd::Constant(n, -2.0);
    qp.ub = Eigen::VectorXd::Constant(n, 2.0);
    const auto r = solve_qp(qp);
    REQUIRE(r.status == QpStatus::optimal);
    REQUIRE((qp.A * r.x - qp.b).maxCoeff() < 1e-7);
    REQUIRE(r.x.minCoeff() > -2.0 - 1e-9);
    REQUIRE(r.x.maxCoeff() < 2.0 + 1e-9);
    REQUIRE(r.z.minCoeff() > -1e-9);
    // complementarity on the general rows
    for (int i = 0; i < m; ++i) REQUIRE(std::abs(r.z[i] * (qp.A.row(i).dot(r.x) - qp.b[i])) < 1e-6);
  }
}
