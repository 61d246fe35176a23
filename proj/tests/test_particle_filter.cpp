#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <sstream>

#include "qda/errors.hpp"
#include "qda/kalman.hpp"
#include "qda/particle_filter.hpp"
#include "qda/rng.hpp"

using namespace qda;
using namespace qda::pf;

namespace {

ParticleEnsemble weighted(const Eigen::VectorXd& w) {
  Eigen::MatrixXd particles(1, w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) particles(0, i) = static_cast<double>(i);
  ParticleEnsemble e = make_ensemble(particles);
  e.weights = w;
  return e;
}

Eigen::VectorXd copy_counts(const ParticleEnsemble& resampled, Eigen::Index n) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < resampled.size(); ++i) c[static_cast<Eigen::Index>(resampled.particles(0, i))] += 1.0;
  return c;
}

double chi_square_p_value(const Eigen::VectorXd& observed, const Eigen::VectorXd& expected) {
  double stat = 0.0;
  int cells = 0;
  for (Eigen::Index i = 0; i < observed.size(); ++i) {
    if (expected[i] <= 0.0) continue;
    stat += std::pow(observed[i] - expected[i], 2) / expected[i];
    ++cells;
  }
  return boost::math::gamma_q(0.5 * (cells - 1), 0.5 * stat);
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

TEST(Ensemble, Validation) {
  EXPECT_THROW(make_ensemble(Eigen::MatrixXd(2, 0)), PreconditionError);
  auto e = weighted(Eigen::Vector3d(0.2, 0.3, 0.5));
  EXPECT_NO_THROW(validate(e));
  e.weights[0] = 0.3;
  EXPECT_THROW(validate(e), PreconditionError);
  e.weights = Eigen::Vector2d(0.5, 0.5);
  EXPECT_THROW(validate(e), ShapeError);
}

TEST(Predict, IdentityWithoutNoise) {
  const auto e = sample_prior(Eigen::Vector2d(1, -1), Covariance::scaled_identity(2, 1.0), 50, 3);
  const auto out = predict(e, linear_model(Eigen::Matrix2d::Identity()), Covariance::zero(2), 7);
  EXPECT_EQ(out.particles, e.particles);
  EXPECT_EQ(out.weights, e.weights);
}

TEST(Predict, WeightsUnchanged) {
  auto e = weighted(Eigen::Vector4d(0.1, 0.2, 0.3, 0.4));
  const auto out = predict(e, linear_model(Eigen::MatrixXd::Constant(1, 1, 0.5)), Covariance::scaled_identity(1, 1.0), 2);
  EXPECT_EQ(out.weights, e.weights);
}

TEST(Predict, LinearMeanPropagation) {
  Eigen::Matrix2d m;
  m << 0.9, 0.2, -0.1, 1.1;
  const Eigen::Vector2d mean(2.0, -1.0);
  const auto q = Covariance::scaled_identity(2, 0.3);
  const auto e = sample_prior(mean, Covariance::scaled_identity(2, 1.0), 10000, 4);
  const auto out = predict(e, linear_model(m), q, 5);
  const Eigen::Vector2d expected = m * mean;
  // Var of each propagated coordinate: (M M^T)_ii + 0.3.
  const Eigen::Vector2d sd = ((m * m.transpose()).diagonal().array() + 0.3).sqrt() / std::sqrt(10000.0);
  for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(out.mean()[i] - expected[i]), 5 * sd[i]);
}

TEST(Predict, DivergentParticlesAreClamped) {
  Eigen::MatrixXd p(3, 2);
  p.col(0) << 1.0, 1.0, 20.0;
  p.col(1) << 1e200, 1e200, 1e200;
  const auto e = make_ensemble(p);
  Box box{Eigen::Vector3d::Constant(-30), Eigen::Vector3d::Constant(50)};
  PredictStats stats;
  const auto out = predict(e, lorenz63_model(0.01, 1), Covariance::zero(3), 1, box, &stats);
  EXPECT_EQ(stats.divergent, 1);
  EXPECT_EQ(out.particles.col(1), Eigen::VectorXd(Eigen::Vector3d::Constant(50)));
  EXPECT_TRUE(out.particles.allFinite());
}

TEST(UpdateWeights, IdenticalParticlesStayUniform) {
  const auto e = make_ensemble(Eigen::MatrixXd::Constant(2, 5, 1.5));
  const auto out = update_weights(e, Eigen::Vector2d(0, 3), identity_operator(2), Covariance::scaled_identity(2, 0.5));
  EXPECT_LT((out.weights.array() - 0.2).abs().maxCoeff(), 1e-15);
}

TEST(UpdateWeights, GaussianRatio) {
  Eigen::MatrixXd p(2, 2);
  p.col(0) << 1.0, 2.0;
  p.col(1) << 2.0, 0.5;
  Eigen::Matrix2d r;
  r << 1.0, 0.3, 0.3, 2.0;
  const auto cov = Covariance::from_matrix(r);
  const Eigen::Vector2d y(1.0, 2.0);
  const auto out = update_weights(make_ensemble(p), y, identity_operator(2), cov);
  const Eigen::Vector2d diff = p.col(1) - y;
  const double d2 = diff.dot(r.inverse() * diff);
  EXPECT_NEAR(out.weights[0] / out.weights[1], std::exp(0.5 * d2), 1e-10);
  EXPECT_NEAR(out.weights.sum(), 1.0, 1e-10);
}

TEST(UpdateWeights, UnderflowResetsUniform) {
  Eigen::MatrixXd p(1, 3);
  p << 1e6, 2e6, 3e6;
  UpdateStats stats;
  const auto out = update_weights(make_ensemble(p), Eigen::VectorXd::Zero(1), identity_operator(1), Covariance::zero(1),
                                  &stats);
  EXPECT_TRUE(stats.degenerate);
  EXPECT_LT((out.weights.array() - 1.0 / 3).abs().maxCoeff(), 1e-15);
}

TEST(Ess, Examples) {
  EXPECT_NEAR(ess(Eigen::VectorXd::Constant(8, 0.125)), 8.0, 1e-12);
  EXPECT_EQ(ess(Eigen::Vector3d(0, 1, 0)), 1.0);
  EXPECT_EQ(ess(Eigen::Vector4d(0.5, 0.5, 0, 0)), 2.0);
}

TEST(Systematic, Examples) {
  const auto uniform = weighted(Eigen::VectorXd::Constant(6, 1.0 / 6));
  const auto out = resample_systematic(uniform, 3);
  EXPECT_EQ(copy_counts(out, 6), Eigen::VectorXd::Ones(6));  // one offset, six even pointers
  EXPECT_LT((out.weights.array() - 1.0 / 6).abs().maxCoeff(), 1e-15);

  const auto point = resample_systematic(weighted(Eigen::Vector4d(0, 0, 1, 0)), 4);
  EXPECT_EQ(copy_counts(point, 4), Eigen::Vector4d(0, 0, 4, 0));
}

TEST(Systematic, Unbiased) {
  const Eigen::VectorXd w = (Eigen::VectorXd(5) << 0.05, 0.4, 0.15, 0.3, 0.1).finished();
  const auto e = weighted(w);
  const int runs = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(5), sum2 = Eigen::VectorXd::Zero(5);
  for (int r = 0; r < runs; ++r) {
    const Eigen::VectorXd c = copy_counts(resample_systematic(e, derive_key(11, r)), 5);
    sum += c;
    sum2 += c.cwiseAbs2();
  }
  const Eigen::VectorXd mean = sum / runs;
  const Eigen::VectorXd var = sum2 / runs - mean.cwiseAbs2();
  for (int i = 0; i < 5; ++i) EXPECT_LE(std::abs(mean[i] - 5 * w[i]), 3 * std::sqrt(var[i] / runs) + 1e-12) << i;
}

TEST(Quantum, SuperpositionMatchesWeights) {
  const auto s = weighted_superposition(Eigen::Vector2d(0.5, 0.5));
  EXPECT_NEAR(s.amplitudes[0].real(), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s.amplitudes[1].real(), 1.0 / std::sqrt(2.0), 1e-15);

  CounterRng rng(5);
  Eigen::VectorXd w(37);
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.uniform();
  w /= w.sum();
  const auto big = weighted_superposition(w);
  EXPECT_EQ(big.num_qubits, 6);
  const Eigen::VectorXd p = probabilities(big);
  EXPECT_LT((p.head(37) - w).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(p.tail(64 - 37).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(weighted_superposition(Eigen::VectorXd::Ones(1)).num_qubits, 1);
}

TEST(Quantum, MultinomialChiSquare) {
  const Eigen::VectorXd w = (Eigen::VectorXd(6) << 0.02, 0.28, 0.1, 0.25, 0.05, 0.3).finished();
  const auto e = weighted(w);
  const int runs = 10000;
  Eigen::VectorXd total = Eigen::VectorXd::Zero(6);
  for (int r = 0; r < runs; ++r) {
    const auto out = resample_quantum(e, 0, derive_key(21, r));
    ASSERT_EQ(out.size(), 6);
    total += copy_counts(out, 6);
  }
  EXPECT_GT(chi_square_p_value(total, w * 6.0 * runs), 0.001);
}

TEST(Quantum, ShotCount) {
  const auto out = resample_quantum(weighted(Eigen::Vector3d(0.2, 0.5, 0.3)), 11, 1);
  EXPECT_EQ(out.size(), 11);
  EXPECT_NEAR(out.weights.sum(), 1.0, 1e-12);
}

TEST(Qvr, AnsatzShape) {
  QvrAnsatz a{3, 2, Eigen::VectorXd::Zero(6)};
  EXPECT_EQ(qvr_probabilities(a)[0], 1.0);
  a.thetas.resize(5);
  EXPECT_THROW(qvr_state(a), ShapeError);
}

TEST(Qvr, PointMass) {
  Eigen::VectorXd target = Eigen::VectorXd::Zero(8);
  target[0] = 1.0;
  const auto fit = qvr_fit(target, QvrConfig{}, 3);
  EXPECT_LT(fit.divergence, 1e-3);
  EXPECT_TRUE(fit.reached_threshold);
  for (double d : fit.trace) EXPECT_GE(d, 0.0);
}

TEST(Qvr, Uniform) {
  QvrConfig config;
  config.layers = 1;
  const auto fit = qvr_fit(Eigen::VectorXd::Constant(16, 1.0 / 16), config, 4);
  EXPECT_LT(fit.divergence, 1e-2);
  // The product state RY(pi/2)^n is the exact uniform solution.
  QvrAnsatz exact{4, 1, Eigen::VectorXd::Constant(4, std::numbers::pi / 2)};
  EXPECT_LT(qvr_divergence(qvr_probabilities(exact), Eigen::VectorXd::Constant(16, 1.0 / 16), false), 1e-12);
}

TEST(Qvr, GradientMatchesFiniteDifferences) {
  CounterRng rng(7);
  Eigen::VectorXd target(8);
  for (int i = 0; i < 8; ++i) target[i] = rng.uniform();
  target /= target.sum();
  QvrAnsatz a{3, 2, Eigen::VectorXd(6)};
  for (int i = 0; i < 6; ++i) a.thetas[i] = 3 * rng.uniform();
  for (bool reverse : {false, true}) {
    const Eigen::VectorXd g = qvr_gradient(a, target, reverse);
    for (int i = 0; i < 6; ++i) {
      QvrAnsatz up = a, down = a;
      up.thetas[i] += 1e-6;
      down.thetas[i] -= 1e-6;
      const double fd = (qvr_divergence(qvr_probabilities(up), target, reverse) -
                         qvr_divergence(qvr_probabilities(down), target, reverse)) /
                        2e-6;
      EXPECT_NEAR(g[i], fd, 1e-6) << "reverse=" << reverse << " i=" << i;
    }
  }
}

TEST(Qvr, RejectsBadTargets) {
  EXPECT_THROW(qvr_fit(Eigen::VectorXd::Constant(6, 1.0 / 6), QvrConfig{}, 1), ShapeError);
  EXPECT_THROW(qvr_fit(Eigen::VectorXd::Constant(4, 0.3), QvrConfig{}, 1), PreconditionError);
}

namespace {

AssimilationProblem identity_problem(const Eigen::VectorXd& truth, int window) {
  AssimilationProblem p;
  p.background = truth;
  p.background_cov = Covariance::zero(static_cast<int>(truth.size()));
  p.model = linear_model(Eigen::MatrixXd::Identity(truth.size(), truth.size()));
  p.window = window;
  p.process_cov = Covariance::zero(static_cast<int>(truth.size()));
  for (int k = 0; k < window; ++k)
    p.observations.push_back({k, truth, identity_operator(static_cast<int>(truth.size())),
                              Covariance::zero(static_cast<int>(truth.size()))});
  return p;
}

}  // namespace

TEST(RunPf, NoiseFreeIdentityIsExact) {
  const Eigen::Vector3d truth(1.0, -2.0, 0.5);
  for (Resampler r : {Resampler::systematic, Resampler::quantum, Resampler::qvr}) {
    PfConfig config;
    config.particles = 16;
    config.resampler = r;
    config.threshold = 1.0;
    const auto result = run_pf(identity_problem(truth, 4), config);
    for (const auto& a : result.analysis) EXPECT_EQ(a, Eigen::VectorXd(truth));
  }
}

TEST(RunPf, LorenzBeatsFreeRun) {
  TwinConfig c;
  c.model = lorenz63_model(0.01, 5);
  c.window = 40;
  c.obs_every = 2;
  c.truth_mean = Eigen::Vector3d(1.0, 1.0, 25.0);
  c.truth_cov = Covariance::scaled_identity(3, 1.0);
  c.background_cov = Covariance::scaled_identity(3, 4.0);
  c.obs_op = identity_operator(3);
  c.obs_cov = Covariance::scaled_identity(3, 1.0);
  c.process_cov = Covariance::scaled_identity(3, 0.05);
  const auto twin = generate_twin(c, 12);
  PfConfig config;
  config.particles = 500;
  config.seed = 13;
  const auto result = run_pf(twin.problem, config);
  const auto free = free_run(c.model, twin.problem.background, c.window);
  double pf_err = 0.0, free_err = 0.0;
  for (int k = 0; k < c.window; ++k) {
    pf_err += rmse(result.analysis[k], twin.truth[k]);
    free_err += rmse(free[k], twin.truth[k]);
  }
  EXPECT_LT(pf_err, free_err);
  for (double e : result.ess) {
    EXPECT_GE(e, 1.0 - 1e-9);
    EXPECT_LE(e, 500.0 + 1e-9);
  }
  EXPECT_GT(result.resample_count, 0);
}

TEST(RunPf, LinearGaussianTracksKalman) {
  TwinConfig c;
  Eigen::Matrix2d m;
  m << 0.95, 0.1, -0.1, 0.95;
  c.model = linear_model(m);
  c.window = 10;
  c.truth_mean = Eigen::Vector2d(1, 0);
  c.truth_cov = Covariance::scaled_identity(2, 1.0);
  c.background_cov = Covariance::scaled_identity(2, 1.0);
  c.obs_op = selector_operator(2, {0});
  c.obs_cov = Covariance::scaled_identity(1, 0.5);
  c.process_cov = Covariance::scaled_identity(2, 0.1);
  const auto twin = generate_twin(c, 5);
  const auto kf = kalman_filter(twin.problem);
  PfConfig config;
  config.particles = 20000;
  config.seed = 2;
  const auto result = run_pf(twin.problem, config);
  for (int k = 0; k < c.window; ++k) EXPECT_LT((result.analysis[k] - kf.means[k]).norm(), 0.05) << k;
}

TEST(RunPf, WeightsNormalizedAndDeterministic) {
  TwinConfig c;
  c.model = linear_model(Eigen::Matrix2d::Identity());
  c.window = 5;
  c.truth_mean = Eigen::Vector2d::Zero();
  c.truth_cov = Covariance::scaled_identity(2, 1.0);
  c.background_cov = Covariance::scaled_identity(2, 1.0);
  c.obs_op = identity_operator(2);
  c.obs_cov = Covariance::scaled_identity(2, 0.2);
  c.process_cov = Covariance::scaled_identity(2, 0.1);
  const auto twin = generate_twin(c, 8);
  for (Resampler r : {Resampler::systematic, Resampler::quantum, Resampler::qvr}) {
    PfConfig config;
    config.particles = 30;
    config.resampler = r;
    config.seed = 4;
    const auto a = run_pf(twin.problem, config);
    const auto b = run_pf(twin.problem, config);
    EXPECT_NEAR(a.final_ensemble.weights.sum(), 1.0, 1e-10);
    EXPECT_EQ(a.ess, b.ess);
    for (std::size_t k = 0; k < a.analysis.size(); ++k) EXPECT_EQ(a.analysis[k], b.analysis[k]);
  }
  PfConfig bad;
  bad.particles = 1;
  EXPECT_THROW(run_pf(twin.problem, bad), PreconditionError);
}

TEST(TraceCsv, Format) {
  PfResult r;
  r.analysis = {Eigen::Vector2d(1, 1)};
  r.ess = {3.5};
  r.resampled = {1};
  std::ostringstream out;
  write_trace_csv(out, r, {Eigen::Vector2d(1, 3)});
  EXPECT_EQ(out.str(), "time,ess,resampled,rmse\n0,3.5,1,1.41421\n");
}
