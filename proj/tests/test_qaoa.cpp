#include <gtest/gtest.h>

#include <numbers>

#include "qda/errors.hpp"
#include "qda/qaoa.hpp"
#include "qda/rng.hpp"

using namespace qda;
using qaoa::QaoaParams;

namespace {

constexpr double kPi = std::numbers::pi;

DiagonalObservable random_table(int n, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::VectorXd v(Eigen::Index{1} << n);
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = 10.0 * rng.uniform() - 2.0;
  return make_observable(v);
}

QaoaParams random_params(int depth, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::VectorXd g(depth), b(depth);
  for (int i = 0; i < depth; ++i) g[i] = 2 * kPi * rng.uniform(), b[i] = kPi * rng.uniform();
  return qaoa::make_params(g, b);
}

Eigen::VectorXd central_differences(const DiagonalObservable& table, const QaoaParams& params, double h) {
  const Eigen::VectorXd theta = params.flat();
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    g[i] = (qaoa::expectation(table, QaoaParams::from_flat(up)) - qaoa::expectation(table, QaoaParams::from_flat(down))) /
           (2 * h);
  }
  return g;
}

// The whole-angle rule (L(theta + pi/2) - L(theta - pi/2)) / 2 on each QAOA angle.
Eigen::VectorXd whole_angle_shift(const DiagonalObservable& table, const QaoaParams& params) {
  const Eigen::VectorXd theta = params.flat();
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up[i] += kPi / 2;
    down[i] -= kPi / 2;
    g[i] = 0.5 * (qaoa::expectation(table, QaoaParams::from_flat(up)) -
                  qaoa::expectation(table, QaoaParams::from_flat(down)));
  }
  return g;
}

}  // namespace

TEST(Evolve, TrivialCases) {
  const auto table = random_table(3, 1);
  const auto uniform = init_uniform(3);
  EXPECT_EQ(qaoa::evolve(table, qaoa::zero_params(0)).amplitudes, uniform.amplitudes);
  EXPECT_LT((qaoa::evolve(table, qaoa::zero_params(3)).amplitudes - uniform.amplitudes).norm(), 1e-15);
  for (std::uint64_t s = 0; s < 5; ++s)
    EXPECT_NEAR(norm_squared(qaoa::evolve(table, random_params(1, s))), 1.0, 1e-10);
  EXPECT_THROW(qaoa::evolve(make_observable(Eigen::VectorXd::Zero(6)), qaoa::zero_params(1)), ShapeError);
}

TEST(Evolve, MatchesPrimitiveComposition) {
  const auto table = random_table(3, 2);
  const auto params = random_params(2, 3);
  const auto phases = make_observable(qaoa::phase_table(table));
  StateVector s = init_uniform(3);
  for (int l = 0; l < 2; ++l) s = apply_mixer(apply_diagonal_phase(s, phases, params.gammas[l]), params.betas[l]);
  EXPECT_LT((qaoa::evolve(table, params).amplitudes - s.amplitudes).norm(), 1e-13);
}

TEST(PhaseTable, RescalesToZeroPi) {
  const auto h = qaoa::phase_table(make_observable(Eigen::Vector4d(3, -1, 7, 5)));
  EXPECT_NEAR(h.minCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(h.maxCoeff(), kPi, 1e-15);
  EXPECT_NEAR(h[0], kPi * 0.5, 1e-15);
  EXPECT_EQ(qaoa::phase_table(make_observable(Eigen::Vector2d(2, 2))), Eigen::Vector2d::Zero());
}

TEST(Walsh, ReconstructsTable) {
  const Eigen::VectorXd v = random_table(4, 5).values;
  const Eigen::VectorXd c = qaoa::walsh_coefficients(v);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    double sum = 0.0;
    for (Eigen::Index s = 0; s < v.size(); ++s) sum += c[s] * ((std::popcount(static_cast<unsigned>(k & s)) & 1) ? -1.0 : 1.0);
    EXPECT_NEAR(sum, v[k], 1e-12);
  }
}

TEST(Expectation, Examples) {
  const auto table = random_table(3, 6);
  EXPECT_NEAR(qaoa::expectation(table, qaoa::zero_params(2)), table.values.mean(), 1e-12);
  const auto constant = make_observable(Eigen::VectorXd::Constant(8, 1.75));
  EXPECT_NEAR(qaoa::expectation(constant, random_params(2, 7)), 1.75, 1e-12);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double e = qaoa::expectation(table, random_params(3, s));
    EXPECT_GE(e, table.values.minCoeff() - 1e-12);
    EXPECT_LE(e, table.values.maxCoeff() + 1e-12);
  }
}

TEST(Gradient, ConstantTableIsZero) {
  const auto constant = make_observable(Eigen::VectorXd::Constant(16, -3.0));
  const auto params = random_params(2, 8);
  EXPECT_LT(qaoa::parameter_shift_gradient(constant, params).norm(), 1e-12);
  EXPECT_LT(qaoa::adjoint_gradient(constant, params).norm(), 1e-12);
}

TEST(Gradient, ShiftRuleMatchesFiniteDifferences) {
  for (int n = 2; n <= 6; ++n)
    for (int depth = 1; depth <= 3; ++depth) {
      const std::uint64_t seed = static_cast<std::uint64_t>(10 * n + depth);
      const auto table = random_table(n, seed);
      const auto params = random_params(depth, seed + 1);
      const Eigen::VectorXd fd = central_differences(table, params, 1e-6);
      const Eigen::VectorXd ps = qaoa::parameter_shift_gradient(table, params);
      const Eigen::VectorXd adj = qaoa::adjoint_gradient(table, params);
      EXPECT_LT((ps - fd).cwiseAbs().maxCoeff(), 1e-5) << "n=" << n << " p=" << depth;
      EXPECT_LT((adj - ps).cwiseAbs().maxCoeff(), 1e-10) << "n=" << n << " p=" << depth;
    }
}

TEST(Gradient, WholeAngleShiftIsNotTheDerivative) {
  // Neither QAOA generator has a two-point spectrum, so shifting the whole
  // angle by pi/2 does not give the derivative.
  const auto table = random_table(4, 40);
  const auto params = random_params(2, 41);
  const Eigen::VectorXd fd = central_differences(table, params, 1e-6);
  const Eigen::VectorXd naive = whole_angle_shift(table, params);
  EXPECT_GT((naive - fd).cwiseAbs().maxCoeff(), 1e-2);
  // For a single-qubit mixer the generator X has eigenvalues +-1, and the
  // rule needs the half-angle shift pi/4 with factor 1.
  const auto one = make_observable(Eigen::Vector2d(0.0, 1.0));
  const QaoaParams p1 = qaoa::make_params(Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::Constant(1, 0.3));
  const double up = qaoa::expectation(one, qaoa::make_params(p1.gammas, p1.betas.array() + kPi / 4));
  const double down = qaoa::expectation(one, qaoa::make_params(p1.gammas, p1.betas.array() - kPi / 4));
  EXPECT_NEAR(up - down, central_differences(one, p1, 1e-6)[1], 1e-8);
}

TEST(Gradient, SymmetricTableHasZeroBetaGradientAtOrigin) {
  // h(k) = h(~k): flipping every bit leaves the table invariant.
  CounterRng rng(50);
  Eigen::VectorXd v(16);
  for (int k = 0; k < 8; ++k) v[k] = v[15 - k] = rng.uniform() * 5;
  const auto table = make_observable(v);
  for (auto method : {qaoa::GradientMethod::parameter_shift, qaoa::GradientMethod::adjoint}) {
    const Eigen::VectorXd g = qaoa::gradient(table, qaoa::zero_params(3), method);
    EXPECT_LT(g.tail(3).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Fisher, SymmetricPsd) {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto table = random_table(4, 60 + s);
    const auto params = random_params(2, 70 + s);
    const Eigen::MatrixXd f = qaoa::fisher_information(table, params, qaoa::GradientMethod::parameter_shift);
    EXPECT_LT((f - f.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    const Eigen::MatrixXd fa = qaoa::fisher_information(table, params, qaoa::GradientMethod::adjoint);
    EXPECT_LT((f - fa).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Fisher, ProbabilityJacobianMatchesFiniteDifferences) {
  const auto table = random_table(3, 80);
  const auto params = random_params(2, 81);
  const Eigen::MatrixXd j = qaoa::probability_jacobian(table, params, qaoa::GradientMethod::parameter_shift);
  const Eigen::VectorXd theta = params.flat();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const Eigen::VectorXd fd = (probabilities(qaoa::evolve(table, QaoaParams::from_flat(up))) -
                                probabilities(qaoa::evolve(table, QaoaParams::from_flat(down)))) /
                               2e-6;
    EXPECT_LT((j.col(i) - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(NaturalGradient, Examples) {
  const auto params = random_params(2, 90);
  const Eigen::MatrixXd f = Eigen::MatrixXd::Identity(4, 4);
  const auto still = qaoa::natural_gradient_step(params, Eigen::VectorXd::Zero(4), f, 0.5, 1e-3);
  EXPECT_EQ(still.params.flat(), params.flat());

  const Eigen::Vector4d g(0.3, -0.2, 0.1, 0.05);
  const auto step = qaoa::natural_gradient_step(params, g, f, 0.5, 1e-14);
  EXPECT_LT((step.params.flat() - (params.flat() - 0.5 * g)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_FALSE(step.fell_back);

  EXPECT_THROW(qaoa::natural_gradient_step(params, g, f, 0.5, 0.0), PreconditionError);
  const Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(4, 4, std::nan(""));
  EXPECT_TRUE(qaoa::natural_gradient_step(params, g, bad, 0.5, 1e-3).fell_back);
}

TEST(Optimize, NeverWorseThanUniformMean) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto table = random_table(4, 100 + s);
    qaoa::QaoaConfig config;
    config.seed = s;
    const auto r = qaoa::optimize(table, 2, config);
    EXPECT_LE(r.expectation, table.values.mean() + 1e-12);
    ASSERT_FALSE(r.trace.empty());
    EXPECT_EQ(r.trace.back().second, r.expectation);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].second, r.trace[i - 1].second);
  }
}

TEST(Optimize, TwoQubitRampAgainstGridSearch) {
  const auto table = make_observable(Eigen::Vector4d(0, 1, 2, 3));
  qaoa::QaoaConfig config;
  config.seed = 4;
  const auto r = qaoa::optimize(table, 3, config);
  const Eigen::VectorXd p = probabilities(qaoa::evolve(table, r.params));
  Eigen::Index arg;
  EXPECT_GT(p.maxCoeff(&arg), 0.5);
  EXPECT_EQ(arg, 0);
  EXPECT_EQ(r.samples.most_frequent(), 0u);

  // Exhaustive depth-1 grid at 0.01 pi: depth 3 must do at least as well, and
  // the grid optimum must also favour index 0.
  double best = 1e300;
  QaoaParams best_params;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 100; ++j) {
      const auto q = qaoa::make_params(Eigen::VectorXd::Constant(1, 0.01 * kPi * i), Eigen::VectorXd::Constant(1, 0.01 * kPi * j));
      const double e = qaoa::expectation(table, q);
      if (e < best) best = e, best_params = q;
    }
  EXPECT_LE(r.expectation, best + 1e-9);
  Eigen::Index grid_arg;
  probabilities(qaoa::evolve(table, best_params)).maxCoeff(&grid_arg);
  EXPECT_EQ(grid_arg, 0);
}

TEST(Optimize, DeterministicAndNaturalMode) {
  const auto table = random_table(3, 110);
  qaoa::QaoaConfig config;
  config.seed = 9;
  const auto a = qaoa::optimize(table, 2, config);
  const auto b = qaoa::optimize(table, 2, config);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.samples.counts, b.samples.counts);
  config.natural = true;
  const auto n = qaoa::optimize(table, 2, config);
  EXPECT_LE(n.expectation, table.values.mean());
  EXPECT_THROW(qaoa::optimize(table, 0, config), PreconditionError);
}

TEST(SampleParticles, Examples) {
  const auto scheme = make_scheme(2, Eigen::Vector2d(-1, 0), Eigen::Vector2d(1, 3));
  const auto table = random_table(4, 120);
  qaoa::QaoaConfig config;
  config.seed = 1;
  config.max_iterations = 30;
  const auto r = qaoa::optimize(table, 2, config);
  EXPECT_THROW(qaoa::sample_particles(table, r, 0, scheme, 1), PreconditionError);

  const std::uint64_t count = 10000;
  const auto particles = qaoa::sample_particles(table, r, count, scheme, 77);
  ASSERT_EQ(particles.size(), count);
  const Eigen::VectorXd p = probabilities(qaoa::evolve(table, r.params));
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(16);
  for (const auto& x : particles) freq[static_cast<Eigen::Index>(encode(x, scheme))] += 1.0;
  for (Eigen::Index k = 0; k < 16; ++k) {
    const double sd = std::sqrt(count * p[k] * (1 - p[k]));
    EXPECT_LE(std::abs(freq[k] - count * p[k]), 6 * sd + 1e-9) << k;
  }
}

TEST(SampleParticles, ConcentratedState) {
  // One qubit, phase table (0, pi): gamma = 1/2 gives (1, -i)/sqrt2 and the
  // beta = pi/4 mixer sends that to -i|1>.
  const auto table = make_observable(Eigen::Vector2d(0.0, 1.0));
  const auto params = qaoa::make_params(Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, kPi / 4));
  const Eigen::VectorXd p = probabilities(qaoa::evolve(table, params));
  Eigen::Index arg;
  ASSERT_NEAR(p.maxCoeff(&arg), 1.0, 1e-12);
  qaoa::QaoaResult r;
  r.params = params;
  const auto scheme = make_scheme(1, Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 4.0));
  for (const auto& x : qaoa::sample_particles(table, r, 50, scheme, 3)) EXPECT_EQ(x, decode(arg, scheme));
}
