#include <gtest/gtest.h>

#include "bip/model.hpp"

using namespace bip;

namespace {

SensorLayout small_layout() {
  return SensorLayout({{"a", Modality::JointPosition, Role::Controlled, std::nullopt},
                       {"b", Modality::Pose, Role::Observed, std::nullopt},
                       {"c", Modality::ContactForce, Role::Observed, std::string("g")}});
}

Interaction series(std::size_t T) {
  Interaction in;
  in.layout = small_layout();
  in.samples = Eigen::MatrixXd::Random(3, static_cast<Eigen::Index>(T));
  return in;
}

}  // namespace

TEST(Layout, RejectsDuplicateNames) {
  EXPECT_THROW(SensorLayout({{"a", Modality::Pose, Role::Observed, std::nullopt},
                             {"a", Modality::JointPosition, Role::Controlled, std::nullopt}}),
               DataError);
}

TEST(Layout, GroupOnlyOnForceChannels) {
  EXPECT_THROW(SensorLayout({{"a", Modality::Pose, Role::Observed, std::string("g")},
                             {"b", Modality::JointPosition, Role::Controlled, std::nullopt}}),
               DataError);
}

TEST(Layout, NeedsBothRoles) {
  EXPECT_THROW(SensorLayout({{"a", Modality::Pose, Role::Observed, std::nullopt}}), DataError);
}

TEST(Layout, IndicesByRoleAndModality) {
  const auto l = small_layout();
  EXPECT_EQ(l.indices(Role::Observed), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(l.indices(Role::Observed, Modality::ContactForce), (std::vector<std::size_t>{2}));
  EXPECT_EQ(l.require("c"), 2u);
  EXPECT_FALSE(l.index_of("zz"));
  EXPECT_THROW(l.require("zz"), DataError);
}

TEST(Validate, AcceptsWellFormedSeriesUnchanged) {
  auto in = series(10);
  const Eigen::MatrixXd before = in.samples;
  const auto& out = validate_interaction(in);
  EXPECT_EQ(&out, &in);
  EXPECT_EQ(out.samples, before);
}

TEST(Validate, NamesNonFiniteCoordinate) {
  auto in = series(10);
  in.samples(2, 5) = std::numeric_limits<double>::quiet_NaN();
  try {
    validate_interaction(in);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("channel 2"), std::string::npos);
    EXPECT_NE(msg.find("step 5"), std::string::npos);
  }
}

TEST(Validate, TooShort) {
  auto in = series(1);
  try {
    validate_interaction(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("too short"), std::string::npos);
  }
}

TEST(Validate, ReportsEveryViolation) {
  auto in = series(1);
  in.samples.conservativeResize(2, 1);
  in.samples(0, 0) = std::numeric_limits<double>::infinity();
  const auto r = check_interaction(in);
  EXPECT_EQ(r.violations.size(), 3u);
}

TEST(Validate, LayoutOrderMismatchRejected) {
  auto in = series(5);
  const SensorLayout other({{"b", Modality::Pose, Role::Observed, std::nullopt},
                            {"a", Modality::JointPosition, Role::Controlled, std::nullopt},
                            {"c", Modality::ContactForce, Role::Observed, std::string("g")}});
  EXPECT_THROW(require_layout(in, other, "test"), DataError);
  EXPECT_NO_THROW(require_layout(in, small_layout(), "test"));
}

TEST(PhaseOf, Endpoints) {
  EXPECT_EQ(phase_of(0, 100), 0.0);
  EXPECT_EQ(phase_of(99, 100), 1.0);
  EXPECT_DOUBLE_EQ(phase_of(49, 99), 0.5);
}

TEST(PhaseOf, OutOfRange) {
  EXPECT_THROW(phase_of(100, 100), DataError);
  EXPECT_THROW(phase_of(0, 1), DataError);
}

TEST(PhaseOf, StrictlyIncreasing) {
  for (std::size_t T : {2u, 3u, 7u, 100u, 1001u})
    for (std::size_t t = 1; t < T; ++t) ASSERT_LT(phase_of(t - 1, T), phase_of(t, T)) << T << " " << t;
}

TEST(Names, RoundTrip) {
  for (auto m : {Modality::JointPosition, Modality::ContactForce, Modality::Pose}) EXPECT_EQ(parse_modality(to_string(m)), m);
  for (auto r : {Role::Observed, Role::Controlled}) EXPECT_EQ(parse_role(to_string(r)), r);
  EXPECT_THROW(parse_modality("torque"), DataError);
}
