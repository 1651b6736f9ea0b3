#include <random>

#include <gtest/gtest.h>

#include "bip/filter.hpp"
#include "oracles.hpp"

using namespace bip;

namespace {

std::shared_ptr<const BasisSpace> space(std::vector<ChannelBasis> ch) { return std::make_shared<const BasisSpace>(std::move(ch)); }

/// Ensemble at fixed phase 0.5 and zero velocity whose weights are drawn from N(mean, cov).
EnsembleState gaussian_ensemble(std::shared_ptr<const BasisSpace> b, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                std::vector<std::size_t> observed, const Eigen::VectorXd& r, Eigen::Index E, std::uint64_t seed) {
  EnsembleState s;
  s.basis = b;
  s.observed = std::move(observed);
  s.measurement_noise = r;
  s.process_noise = Eigen::VectorXd::Zero(2 + mean.size());
  s.members.resize(2 + mean.size(), E);
  const Eigen::MatrixXd L = cov.llt().matrixL();
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index j = 0; j < E; ++j) {
    for (auto& v : z) v = n(rng);
    s.members(0, j) = 0.5;
    s.members(1, j) = 0.0;
    s.members.col(j).tail(mean.size()) = mean + L * z;
  }
  return s;
}

/// Observation matrix of the observed channels at phase 0.5.
Eigen::MatrixXd observation_matrix(const EnsembleState& s) {
  const auto& b = *s.basis;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.observed.size()), static_cast<Eigen::Index>(b.total()));
  for (std::size_t k = 0; k < s.observed.size(); ++k) {
    const auto d = s.observed[k];
    h.row(static_cast<Eigen::Index>(k)).segment(static_cast<Eigen::Index>(b.offset(d)), static_cast<Eigen::Index>(b.size(d))) =
        basis_row(b, d, 0.5).transpose();
  }
  return h;
}

ObservationFrame frame(const Eigen::VectorXd& v) {
  ObservationFrame f;
  f.values = v;
  f.mask.assign(static_cast<std::size_t>(v.size()), true);
  return f;
}

void expect_matches_kalman(const EnsembleState& prior, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                           const Eigen::VectorXd& y) {
  Rng rng(77);
  const auto post = update(prior, frame(y), rng);
  const Eigen::MatrixXd h = observation_matrix(prior);
  const auto exact = oracle::kalman_update({mean, cov}, h, prior.measurement_noise.asDiagonal(), y);
  const Eigen::Index B = mean.size();
  const Eigen::MatrixXd w = post.members.bottomRows(B);
  const Eigen::VectorXd m = w.rowwise().mean();
  const Eigen::MatrixXd dev = w.colwise() - m;
  const Eigen::MatrixXd c = dev * dev.transpose() / static_cast<double>(w.cols() - 1);
  for (Eigen::Index i = 0; i < B; ++i) {
    EXPECT_NEAR(m(i), exact.mean(i), 0.02 * std::abs(exact.mean(i))) << "mean " << i;
    EXPECT_NEAR(c(i, i), exact.cov(i, i), 0.02 * exact.cov(i, i)) << "variance " << i;
  }
}

}  // namespace

TEST(InitEnsemble, MembersFromDemos) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  std::vector<LatentModel> demos = {{Eigen::Vector2d(1, 2), b}, {Eigen::Vector2d(3, 4), b}};
  const std::vector<std::size_t> lengths = {100, 200};
  const auto s = init_ensemble(demos, lengths, {0}, ProcessNoise{}, Eigen::VectorXd::Constant(1, 0.1));
  EXPECT_EQ(s.size(), 2);
  EXPECT_EQ(s.dim(), 4);
  EXPECT_DOUBLE_EQ(s.members(1, 0), 0.01);
  EXPECT_DOUBLE_EQ(s.members(1, 1), 0.005);
  EXPECT_EQ(s.members(0, 0), 0.0);
  EXPECT_EQ(s.members(3, 1), 4.0);
}

TEST(InitEnsemble, Errors) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  auto other = space({ChannelBasis{{0.4}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(1, 0.1);
  std::vector<LatentModel> one = {{Eigen::Vector2d(1, 2), b}};
  std::vector<std::size_t> l1 = {10}, l2 = {10, 10};
  EXPECT_THROW(init_ensemble(one, l1, {0}, {}, r), DataError);
  std::vector<LatentModel> mixed = {{Eigen::Vector2d(1, 2), b}, {Eigen::Vector2d(1, 2), other}};
  EXPECT_THROW(init_ensemble(mixed, l2, {0}, {}, r), DataError);
  std::vector<LatentModel> two = {{Eigen::Vector2d(1, 2), b}, {Eigen::Vector2d(1, 2), b}};
  EXPECT_THROW(init_ensemble(two, l2, {0}, {}, Eigen::VectorXd::Constant(1, -1.0)), DataError);
  EXPECT_THROW(init_ensemble(two, l2, {0, 1}, {}, r), DataError);
  EXPECT_THROW(init_ensemble(two, l2, {5}, {}, r), DataError);
}

TEST(Predict, ConstantVelocityStep) {
  EnsembleState s;
  s.basis = space({ChannelBasis{{0.5}, 0.2}});
  s.observed = {0};
  s.measurement_noise = Eigen::VectorXd::Constant(1, 0.1);
  s.process_noise = Eigen::VectorXd::Zero(3);
  s.members.resize(3, 2);
  s.members.col(0) << 0.5, 0.01, 2.0;
  s.members.col(1) << 1.0, 0.02, -1.0;
  Rng rng(1);
  const auto p = predict(s, rng);
  EXPECT_DOUBLE_EQ(p.members(0, 0), 0.51);
  EXPECT_EQ(p.members(1, 0), 0.01);
  EXPECT_EQ(p.members(2, 0), 2.0);
  EXPECT_EQ(p.members(0, 1), 1.0);
}

TEST(Predict, VelocityVarianceGrowsBySigmaSquared) {
  const double sigma2 = 1e-4;
  EnsembleState s;
  s.basis = space({ChannelBasis{{0.5}, 0.2}});
  s.observed = {0};
  s.measurement_noise = Eigen::VectorXd::Constant(1, 0.1);
  s.process_noise = Eigen::Vector3d(0.0, sigma2, 0.0);
  const Eigen::Index E = 100000;
  s.members.resize(3, E);
  Rng init(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index j = 0; j < E; ++j) s.members.col(j) << 0.2, 0.5 + 0.01 * n(init), 1.0;
  const auto var = [](const Eigen::RowVectorXd& v) { return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1); };
  const double before = var(s.members.row(1));
  Rng rng(4);
  const auto p = predict(s, rng);
  EXPECT_NEAR(var(p.members.row(1)) - before, sigma2, 0.03 * sigma2);
}

TEST(Update, ZeroSpreadMeansZeroGain) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  std::vector<LatentModel> demos(5, LatentModel{Eigen::Vector2d(1, 2), b});
  const std::vector<std::size_t> lengths(5, 100);
  const auto s = init_ensemble(demos, lengths, {0}, {}, Eigen::VectorXd::Constant(1, 0.01));
  Rng rng(1);
  const auto u = update(s, frame(Eigen::VectorXd::Constant(1, 50.0)), rng);
  EXPECT_EQ(u.members, s.members);
}

TEST(Update, AllMaskedIsAnError) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  std::vector<LatentModel> demos = {{Eigen::Vector2d(1, 2), b}, {Eigen::Vector2d(3, 4), b}};
  const std::vector<std::size_t> lengths = {100, 200};
  const auto s = init_ensemble(demos, lengths, {0}, {}, Eigen::VectorXd::Constant(1, 0.01));
  auto f = frame(Eigen::VectorXd::Constant(1, 1.0));
  f.mask[0] = false;
  Rng rng(1);
  EXPECT_THROW(update(s, f, rng), DataError);
  EXPECT_THROW(update(s, frame(Eigen::VectorXd::Constant(2, 1.0)), rng), DataError);
}

TEST(Update, SingularInnovationCovarianceAsksForNoise) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  const Eigen::MatrixXd cov = Eigen::Matrix2d::Identity();
  // The same channel observed twice with R = 0 gives a rank-one C_yy.
  auto s = gaussian_ensemble(b, Eigen::Vector2d(1, 1), cov, {0, 0}, Eigen::Vector2d::Zero(), 50, 1);
  Rng rng(1);
  try {
    update(s, frame(Eigen::Vector2d(1, 1)), rng);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("R > 0"), std::string::npos);
  }
}

TEST(Update, MatchesKalmanDim1) {
  auto b = space({ChannelBasis{{0.5}, 0.2}});
  const Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const auto s = gaussian_ensemble(b, mean, cov, {0}, Eigen::VectorXd::Constant(1, 0.25), 100000, 10);
  expect_matches_kalman(s, mean, cov, Eigen::VectorXd::Constant(1, 3.0));
}

TEST(Update, MatchesKalmanDim2) {
  auto b = space({ChannelBasis{{0.4, 0.6}, 0.2}});
  const Eigen::Vector2d mean(2.0, -1.5);
  Eigen::Matrix2d cov;
  cov << 0.6, 0.2, 0.2, 0.4;
  const auto s = gaussian_ensemble(b, mean, cov, {0}, Eigen::VectorXd::Constant(1, 0.1), 100000, 11);
  expect_matches_kalman(s, mean, cov, Eigen::VectorXd::Constant(1, 1.2));
}

TEST(Update, MatchesKalmanDim5) {
  auto b = space({ChannelBasis{{0.4, 0.6}, 0.2}, ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.3, 0.7}, 0.25}});
  Eigen::VectorXd mean(5);
  mean << 2.0, -1.5, 3.0, 1.0, 2.5;
  Eigen::MatrixXd a(5, 5);
  a << 0.7, 0.1, 0.0, 0.2, 0.0,  //
      0.0, 0.5, 0.1, 0.0, 0.1,   //
      0.1, 0.0, 0.6, 0.1, 0.0,   //
      0.0, 0.2, 0.0, 0.5, 0.1,   //
      0.1, 0.0, 0.1, 0.0, 0.4;
  const Eigen::MatrixXd cov = a * a.transpose();
  const auto s = gaussian_ensemble(b, mean, cov, {0, 2}, Eigen::Vector2d(0.1, 0.2), 100000, 12);
  expect_matches_kalman(s, mean, cov, Eigen::Vector2d(0.5, 3.5));
}

TEST(Update, ZeroInnovationKeepsSymmetricMean) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  EnsembleState s;
  s.basis = b;
  s.observed = {0};
  s.measurement_noise = Eigen::VectorXd::Constant(1, 1e-10);
  s.process_noise = Eigen::VectorXd::Zero(4);
  const Eigen::Index E = 2000;
  s.members.resize(4, E);
  Rng init(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index j = 0; j < E; j += 2) {
    const double a = n(init), c = n(init);
    s.members.col(j) << 0.5, 0.0, 1.0 + a, 2.0 + c;
    s.members.col(j + 1) << 0.5, 0.0, 1.0 - a, 2.0 - c;
  }
  const Eigen::VectorXd before = s.mean();
  Rng rng(6);
  const auto u = update(s, frame(Eigen::VectorXd::Constant(1, 1.0)), rng);
  EXPECT_LE((u.mean() - before).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Update, ClampsPhaseAndVelocity) {
  auto b = space({ChannelBasis{{0.0, 0.5, 1.0}, 0.3}});
  EnsembleState s;
  s.basis = b;
  s.observed = {0};
  s.measurement_noise = Eigen::VectorXd::Constant(1, 1e-4);
  s.process_noise = Eigen::VectorXd::Zero(5);
  s.members.resize(5, 40);
  Rng init(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index j = 0; j < 40; ++j) s.members.col(j) << u(init), 0.01 * u(init), 0.0, 1.0, 2.0;
  Rng rng(10);
  for (double y : {-50.0, 80.0, 0.0, 3.0}) {
    s = update(s, frame(Eigen::VectorXd::Constant(1, y)), rng);
    ASSERT_EQ(s.size(), 40);
    ASSERT_GE(s.members.row(0).minCoeff(), 0.0);
    ASSERT_LE(s.members.row(0).maxCoeff(), 1.0);
    ASSERT_GE(s.members.row(1).minCoeff(), 0.0);
  }
}

TEST(Infer, DecodesAtClampedLookAhead) {
  auto b = space({ChannelBasis{{0.0, 0.5, 1.0}, 0.3}, ChannelBasis{{0.2, 0.8}, 0.3}});
  EnsembleState s;
  s.basis = b;
  s.observed = {0};
  s.measurement_noise = Eigen::VectorXd::Constant(1, 0.1);
  s.process_noise = Eigen::VectorXd::Zero(7);
  s.members.resize(7, 2);
  s.members.col(0) << 0.96, 0.01, 1, 2, 3, 4, 5;
  s.members.col(1) << 0.98, 0.03, 3, 2, 1, 0, 1;
  const auto out = infer(s, 0.1);
  EXPECT_DOUBLE_EQ(out.phase, 0.97);
  EXPECT_DOUBLE_EQ(out.phase_velocity, 0.02);
  EXPECT_EQ(out.look_ahead, 0.1);
  const Eigen::VectorXd w = s.mean().tail(5);
  EXPECT_EQ(out.decoded, decode_all(*b, w, 1.0));
  EXPECT_EQ(out.decoded.size(), 2);
  EXPECT_EQ(infer(s, 0.0).decoded, decode_all(*b, w, 0.97));
  EXPECT_THROW(infer(s, -0.1), DataError);
}

TEST(Session, MaskedFramesAdvanceAtPriorVelocity) {
  auto b = space({ChannelBasis{{0.5}, 0.2}, ChannelBasis{{0.5}, 0.2}});
  std::vector<LatentModel> demos;
  std::vector<std::size_t> lengths;
  for (int j = 0; j < 20; ++j) {
    demos.push_back({Eigen::Vector2d(j, -j), b});
    lengths.push_back(100 + 5 * static_cast<std::size_t>(j));
  }
  const auto s = init_ensemble(demos, lengths, {0}, ProcessNoise{0.0, 1e-6, 0.0}, Eigen::VectorXd::Constant(1, 0.1));
  const double v0 = s.mean()(1);
  ObservationFrame empty;
  empty.values = Eigen::VectorXd::Zero(1);
  empty.mask = {false};
  const std::vector<ObservationFrame> frames(30, empty);
  const auto out = run_session(s, frames, 0.0, 3);
  ASSERT_EQ(out.size(), 30u);
  EXPECT_NEAR(out.back().phase, 30 * v0, 0.1 * 30 * v0);
  Session session(s, 3);
  double sd_prev = 0.0;
  for (int t = 0; t < 30; ++t) {
    session.step(empty);
    const Eigen::RowVectorXd ph = session.state().members.row(0);
    const double sd = std::sqrt((ph.array() - ph.mean()).square().mean());
    if (t % 10 == 9) {
      EXPECT_GT(sd, sd_prev);
      sd_prev = sd;
    }
  }
}

TEST(Session, DeterministicGivenSeed) {
  auto b = space({ChannelBasis{{0.2, 0.8}, 0.3}, ChannelBasis{{0.5}, 0.2}});
  std::vector<LatentModel> demos;
  std::vector<std::size_t> lengths;
  for (int j = 0; j < 10; ++j) {
    demos.push_back({Eigen::Vector3d(j, 1 - j, 0.5 * j), b});
    lengths.push_back(80 + static_cast<std::size_t>(j));
  }
  const auto s = init_ensemble(demos, lengths, {0}, ProcessNoise{0.0, 1e-6, 0.0}, Eigen::VectorXd::Constant(1, 0.1));
  std::vector<ObservationFrame> frames;
  for (int t = 0; t < 20; ++t) frames.push_back(frame(Eigen::VectorXd::Constant(1, 0.1 * t)));
  const auto a = run_session(s, frames, 0.05, 42), c = run_session(s, frames, 0.05, 42);
  for (std::size_t t = 0; t < a.size(); ++t) {
    ASSERT_EQ(a[t].phase, c[t].phase);
    ASSERT_EQ(a[t].decoded, c[t].decoded);
  }
  EXPECT_THROW(run_session(s, std::vector<ObservationFrame>{}, 0.0, 1), DataError);
}
