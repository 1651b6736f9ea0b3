#include <gtest/gtest.h>

#include "bip/synth.hpp"

using namespace bip;
using namespace bip::synth;

namespace {

ScenarioConfig small(std::size_t demos = 8) {
  ScenarioConfig c;
  c.n_demos = demos;
  return c;
}

}  // namespace

TEST(Synth, DefaultLayoutShape) {
  const auto h = hug_layout(ScenarioConfig{});
  EXPECT_EQ(h.joints.size(), 12u);
  EXPECT_EQ(h.arm_forces.size() + h.torso_forces.size(), 61u);
  EXPECT_EQ(h.pose.size(), 16u);
  EXPECT_EQ(h.layout.size(), 89u);
  EXPECT_EQ(h.informative.size(), 6u);
  for (auto i : h.informative) EXPECT_EQ(h.layout[i].role, Role::Observed);
  for (auto a : h.arm_forces) EXPECT_EQ(h.layout[a].role, Role::Controlled);
}

TEST(Synth, SameSeedSameData) {
  const auto a = generate_dataset(small()), b = generate_dataset(small());
  ASSERT_EQ(a.demos.size(), b.demos.size());
  for (std::size_t i = 0; i < a.demos.size(); ++i) EXPECT_EQ(a.demos[i].samples, b.demos[i].samples);
  auto c = small();
  c.seed = 2;
  EXPECT_NE(generate_dataset(c).demos[0].samples, a.demos[0].samples);
}

TEST(Synth, EveryDemoValidates) {
  const auto d = generate_dataset(small(20));
  for (const auto& demo : d.demos) {
    EXPECT_NO_THROW(validate_interaction(demo));
    EXPECT_GE(demo.steps(), 120u);
    EXPECT_LE(demo.steps(), 200u);
  }
}

TEST(Synth, ForceVanishesOutsideContactWindow) {
  const auto d = generate_dataset(small(6));
  for (std::size_t i = 0; i < d.demos.size(); ++i) {
    const auto& demo = d.demos[i];
    const auto& p = d.params[i];
    for (auto ch : d.hug.arm_forces) {
      const Eigen::RowVectorXd row = demo.samples.row(static_cast<Eigen::Index>(ch));
      const double peak = row.maxCoeff();
      ASSERT_GT(peak, 0.0);
      for (Eigen::Index t = 0; t < row.size(); ++t) {
        const double phi = warp_phase(phase_of(static_cast<std::size_t>(t), p.length), p.warp_alpha);
        if (phi < d.config.contact_begin || phi > d.config.contact_end) ASSERT_LT(row(t), 0.01 * peak) << ch << " " << t;
      }
    }
  }
}

TEST(Synth, AmplitudeScalesForcesOnly) {
  auto c = small(1);
  c.noise = 0.0;
  const auto h = hug_layout(c);
  Rng rng(c.seed);
  auto p = sample_demo_params(c, h, rng);
  p.amplitude = 1.0;
  const auto base = render_demo(c, h, p);
  p.amplitude = 1.5;
  const auto big = render_demo(c, h, p);
  for (auto ch : h.arm_forces) {
    const auto r = static_cast<Eigen::Index>(ch);
    Eigen::Index arg;
    base.samples.row(r).maxCoeff(&arg);
    EXPECT_NEAR(big.samples(r, arg) / base.samples(r, arg), 1.5, 1e-6);
  }
  for (auto j : h.joints) EXPECT_EQ(big.samples.row(static_cast<Eigen::Index>(j)), base.samples.row(static_cast<Eigen::Index>(j)));
}

TEST(Synth, ArmForcesFollowTheirDrivers) {
  auto c = small(1);
  c.noise = 0.0;
  const auto d = generate_dataset(c);
  const auto& s = d.demos[0].samples;
  for (std::size_t a = 0; a < d.hug.arm_forces.size(); ++a) {
    const auto& [alpha, beta, gamma] = d.hug.coefficients[a];
    const auto& dr = d.hug.drivers[a];
    for (Eigen::Index t = 0; t < s.cols(); t += 7) {
      const double bump_part = s(static_cast<Eigen::Index>(d.hug.arm_forces[a]), t) - alpha * s(static_cast<Eigen::Index>(dr[0]), t) -
                               beta * s(static_cast<Eigen::Index>(dr[1]), t);
      EXPECT_GE(bump_part, -1e-9);
      EXPECT_LE(bump_part, gamma * c.peak_force * d.params[0].amplitude + 1e-9);
    }
  }
}

TEST(Synth, ConfigValidation) {
  ScenarioConfig c;
  c.n_groups = 5;
  EXPECT_THROW(hug_layout(c), DataError);
  c = ScenarioConfig{};
  c.contact_begin = 0.8;
  c.contact_end = 0.5;
  EXPECT_THROW(hug_layout(c), DataError);
  c = ScenarioConfig{};
  c.noise = -1.0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(EdgeCases, Shapes) {
  const auto c = small(1);
  const auto demo = generate_demo(c);
  const auto T = demo.steps();

  const auto nothing = generate_edge_case(EdgeCase::DoNothing, c, 50);
  EXPECT_EQ(nothing.input.steps(), T + 50);
  for (Eigen::Index t = 1; t < nothing.input.samples.cols(); ++t) ASSERT_EQ(nothing.input.samples.col(t), demo.samples.col(0));

  const auto before = generate_edge_case(EdgeCase::DelayBeforeHug, c, 30);
  EXPECT_EQ(before.input.steps(), T + 30);
  EXPECT_EQ(before.input.samples.col(29), demo.samples.col(0));
  EXPECT_EQ(before.input.samples.col(30 + 10), demo.samples.col(10));
  EXPECT_EQ(before.stall_onset, 0u);

  const auto after = generate_edge_case(EdgeCase::DelayAfterRaise, c, 40);
  EXPECT_EQ(after.input.steps(), T + 40);
  EXPECT_GT(after.stall_onset, 0u);
  EXPECT_EQ(after.input.samples.col(static_cast<Eigen::Index>(after.stall_onset + 20)), demo.samples.col(static_cast<Eigen::Index>(after.stall_onset)));
}

TEST(EdgeCases, NoContactMeansFlatForces) {
  const auto c = small(1);
  const auto h = hug_layout(c);
  for (auto kind : {EdgeCase::HugNoContact, EdgeCase::HugAir}) {
    const auto e = generate_edge_case(kind, c);
    for (auto ch : h.torso_forces) EXPECT_LE(e.input.samples.row(static_cast<Eigen::Index>(ch)).maxCoeff(), noise_floor(c));
    for (auto ch : h.arm_forces) EXPECT_LE(e.input.samples.row(static_cast<Eigen::Index>(ch)).maxCoeff(), noise_floor(c));
  }
  // Without an approach the partner never comes closer.
  const auto air = generate_edge_case(EdgeCase::HugAir, c);
  const auto normal = generate_demo(c);
  const auto neck_y = h.pose[1];
  EXPECT_LT(air.input.samples.row(static_cast<Eigen::Index>(neck_y)).maxCoeff(),
            normal.samples.row(static_cast<Eigen::Index>(neck_y)).maxCoeff() - 0.05);
}

TEST(EdgeCases, FramesCoverObservedChannels) {
  const auto e = generate_edge_case(EdgeCase::HugNoContact, small(1));
  const auto frames = e.frames();
  ASSERT_EQ(frames.size(), e.input.steps());
  EXPECT_EQ(static_cast<std::size_t>(frames[0].values.size()), e.input.layout.indices(Role::Observed).size());
  EXPECT_TRUE(frames[0].any());
}

TEST(EdgeCases, ParseNames) {
  for (auto e : {EdgeCase::DoNothing, EdgeCase::DelayBeforeHug, EdgeCase::DelayAfterRaise, EdgeCase::HugAir, EdgeCase::HugNoContact})
    EXPECT_EQ(parse_edge_case(to_string(e)), e);
  EXPECT_THROW(parse_edge_case("wave"), DataError);
}
