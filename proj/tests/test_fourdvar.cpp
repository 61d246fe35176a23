#include <gtest/gtest.h>

#include "qda/errors.hpp"
#include "qda/fourdvar.hpp"
#include "qda/kalman.hpp"
#include "qda/rng.hpp"

using namespace qda;

namespace {

AssimilationProblem scalar_problem() {
  AssimilationProblem p;
  p.background = Eigen::VectorXd::Zero(1);
  p.background_cov = Covariance::scaled_identity(1, 1.0);
  p.model = linear_model(Eigen::MatrixXd::Identity(1, 1));
  p.window = 1;
  p.observations.push_back({0, Eigen::VectorXd::Constant(1, 2.0), identity_operator(1), Covariance::scaled_identity(1, 1.0)});
  return p;
}

Eigen::MatrixXd random_matrix(CounterRng& rng, int rows, int cols, double scale) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Covariance random_spd(CounterRng& rng, int d) {
  const Eigen::MatrixXd a = random_matrix(rng, d, d, 1.0);
  return Covariance::from_matrix(a * a.transpose() + d * Eigen::MatrixXd::Identity(d, d));
}

AssimilationProblem random_linear_problem(std::uint64_t seed, int d, int window) {
  CounterRng rng(seed);
  AssimilationProblem p;
  p.background = random_matrix(rng, d, 1, 1.0);
  p.background_cov = random_spd(rng, d);
  p.model = linear_model(Eigen::MatrixXd::Identity(d, d) + random_matrix(rng, d, d, 0.2));
  p.window = window;
  for (int k = 0; k < window; ++k) {
    const int rows = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(d)));
    p.observations.push_back({k, random_matrix(rng, rows, 1, 2.0), make_observation_operator(random_matrix(rng, rows, d, 1.0)),
                              random_spd(rng, rows)});
  }
  return p;
}

// Whitened stacked least squares, solved by QR: independent of the normal equations.
Eigen::VectorXd least_squares_oracle(const AssimilationProblem& p) {
  const int d = p.dim();
  int rows = d;
  for (const auto& o : p.observations) rows += o.op.obs_dim();
  Eigen::MatrixXd a(rows, d);
  Eigen::VectorXd b(rows);
  const Eigen::MatrixXd lb = p.background_cov.matrix().llt().matrixL();
  a.topRows(d) = lb.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
  b.head(d) = a.topRows(d) * p.background;
  int row = d;
  for (const auto& o : p.observations) {
    Eigen::MatrixXd mk = Eigen::MatrixXd::Identity(d, d);
    for (int k = 0; k < o.time; ++k) mk = p.model.matrix * mk;
    const Eigen::MatrixXd lr = o.cov.matrix().llt().matrixL();
    const Eigen::MatrixXd w = lr.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(o.op.obs_dim(), o.op.obs_dim()));
    a.middleRows(row, o.op.obs_dim()) = w * o.op.matrix * mk;
    b.segment(row, o.op.obs_dim()) = w * o.value;
    row += o.op.obs_dim();
  }
  return a.colPivHouseholderQr().solve(b);
}

}  // namespace

TEST(Cost, ScalarExample) {
  const auto p = scalar_problem();
  EXPECT_DOUBLE_EQ(fourdvar::cost(p, Eigen::VectorXd::Constant(1, 1.0)), 1.0);
  EXPECT_NEAR(fourdvar::gradient(p, Eigen::VectorXd::Constant(1, 0.0))[0], -2.0, 1e-14);
  EXPECT_NEAR(fourdvar::gradient(p, Eigen::VectorXd::Constant(1, 1.0))[0], 0.0, 1e-8);
}

TEST(Cost, ZeroAtConsistentState) {
  auto p = random_linear_problem(4, 3, 4);
  const auto xs = fourdvar::trajectory(p, p.background);
  for (auto& o : p.observations) o.value = o.op.apply(xs[o.time]);
  EXPECT_NEAR(fourdvar::cost(p, p.background), 0.0, 1e-20);
}

TEST(Cost, NonNegativeAndHomogeneous) {
  const auto p = random_linear_problem(5, 3, 3);
  auto scaled = p;
  const double c = 3.5;
  scaled.background_cov = Covariance::from_matrix(c * p.background_cov.matrix());
  for (auto& o : scaled.observations) o.cov = Covariance::from_matrix(c * o.cov.matrix());
  CounterRng rng(8);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = random_matrix(rng, 3, 1, 3.0);
    const double j = fourdvar::cost(p, x);
    EXPECT_GE(j, 0.0);
    EXPECT_NEAR(fourdvar::cost(scaled, x), j / c, 1e-12 * std::max(1.0, j));
  }
}

TEST(Gradient, AdjointMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const int d = 1 + static_cast<int>(seed % 8);
    const auto p = random_linear_problem(seed, d, 1 + static_cast<int>(seed % 5));
    CounterRng rng(seed + 100);
    const Eigen::VectorXd x = random_matrix(rng, d, 1, 2.0);
    const Eigen::VectorXd adj = fourdvar::gradient(p, x);
    const Eigen::VectorXd fd = fourdvar::finite_difference_gradient(p, x);
    EXPECT_LT((adj - fd).norm() / std::max(1.0, fd.norm()), 1e-6) << "seed " << seed;
  }
}

TEST(Gradient, NonlinearUsesFiniteDifferences) {
  AssimilationProblem p;
  p.background = Eigen::Vector3d(1, 2, 20);
  p.background_cov = Covariance::scaled_identity(3, 2.0);
  p.model = lorenz63_model(0.01, 2);
  p.window = 3;
  p.observations.push_back({2, Eigen::Vector3d(1.5, 2.5, 19.0), identity_operator(3), Covariance::scaled_identity(3, 1.0)});
  const Eigen::Vector3d x(1.2, 1.9, 20.3);
  EXPECT_EQ(fourdvar::gradient(p, x), fourdvar::finite_difference_gradient(p, x));
}

TEST(Minimize, ScalarExample) {
  const auto p = scalar_problem();
  const auto r = fourdvar::minimize(p, Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_TRUE(r.converged);
}

TEST(Minimize, StartAtOptimum) {
  const auto p = scalar_problem();
  const auto r = fourdvar::minimize(p, Eigen::VectorXd::Constant(1, 1.0));
  EXPECT_EQ(r.cost_trace.size(), 1u);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Minimize, MatchesLeastSquaresOracle) {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const int d = 1 + static_cast<int>(seed % 5);
    const auto p = random_linear_problem(seed, d, 1 + static_cast<int>(seed % 6));
    const Eigen::VectorXd oracle = least_squares_oracle(p);
    EXPECT_LT((fourdvar::solve_linear(p) - oracle).cwiseAbs().maxCoeff(), 1e-8);
    const auto r = fourdvar::minimize(p, p.background);
    EXPECT_LT((r.x - oracle).cwiseAbs().maxCoeff(), 1e-6) << "seed " << seed;
    for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LE(r.cost_trace[i], r.cost_trace[i - 1]);
  }
}

TEST(Minimize, ThreeDimWindowFour) {
  const auto p = random_linear_problem(77, 3, 4);
  const auto r = fourdvar::minimize(p, Eigen::VectorXd::Zero(3));
  EXPECT_LT((r.x - least_squares_oracle(p)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Kalman, SmootherEndpointAgreesWithFourdvar) {
  // Without model error, the filter mean at the last step equals M^{N-1} applied to the 4DVAR analysis.
  const auto p = random_linear_problem(31, 3, 5);
  const auto kf = kalman_filter(p);
  const auto xs = fourdvar::trajectory(p, least_squares_oracle(p));
  EXPECT_LT((kf.means.back() - xs.back()).cwiseAbs().maxCoeff(), 1e-9);
}
