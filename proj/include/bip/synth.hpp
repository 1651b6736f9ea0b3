#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bip/basis.hpp"
#include "bip/filter.hpp"
#include "bip/model.hpp"

namespace bip::synth {

/// Hug-like scenario. Force sensors are split evenly into groups; the first
/// half of the groups sit on the arms (controlled outputs, left then right),
/// the rest on the torso (observed inputs, chest then back).
struct ScenarioConfig {
  std::size_t n_joints = 12;
  std::size_t n_force_sensors = 61;
  std::size_t n_groups = 16;
  std::size_t n_pose = 8;  // markers; each contributes an x and a y channel
  std::size_t n_informative = 6;
  std::size_t n_demos = 121;
  std::size_t duration_min = 120;
  std::size_t duration_max = 200;
  double contact_begin = 0.35;
  double contact_end = 0.75;
  double amplitude_min = 0.8;
  double amplitude_max = 1.25;
  double warp = 0.5;            // |alpha| bound of the sinusoidal time warp, < 1
  double active_probability = 0.3;  // chance an uninformative torso sensor sees contact
  double peak_force = 50.0;     // raw sensor units
  double noise = 1.0;           // scales every sensor noise term; 0 renders clean signals
  double timestep = 1.0 / 30.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_joints < 1 || n_pose < 1) throw DataError("scenario: need joints and pose markers");
    if (n_groups < 4 || n_groups % 2 != 0) throw DataError("scenario: n_groups must be even and >= 4");
    if (n_force_sensors < n_groups) throw DataError("scenario: fewer force sensors than groups");
    if (n_informative < 2 || n_informative > n_groups / 2)
      throw DataError("scenario: n_informative must be in [2, n_groups / 2]");
    if (duration_min < 50 || duration_max < duration_min) throw DataError("scenario: durations must be >= 50 steps");
    if (!(0.0 <= contact_begin && contact_begin < contact_end && contact_end <= 1.0))
      throw DataError("scenario: contact window must lie inside [0, 1]");
    if (!(amplitude_min > 0.0 && amplitude_max >= amplitude_min)) throw DataError("scenario: amplitude must be > 0");
    if (!(warp >= 0.0 && warp < 1.0)) throw DataError("scenario: warp must be in [0, 1)");
    if (n_demos < 1) throw DataError("scenario: need at least one demo");
    if (!(noise >= 0.0)) throw DataError("scenario: noise scale must be >= 0");
  }
};

/// Channel roles of the generated layout plus the ground truth of the
/// output-force model.
struct HugLayout {
  SensorLayout layout;
  std::vector<std::size_t> joints, arm_forces, torso_forces, pose;
  std::vector<std::size_t> informative;           // torso channel indices driving the outputs
  std::vector<std::array<std::size_t, 2>> drivers;  // per arm force channel, its two torso drivers
  std::vector<std::array<double, 3>> coefficients;  // per arm force channel: alpha, beta, gamma
  std::vector<std::string> left_groups, right_groups;
};

inline HugLayout hug_layout(const ScenarioConfig& c) {
  c.validate();
  static const char* marker_names[] = {"neck", "r_shoulder", "r_elbow", "r_wrist",
                                       "l_shoulder", "l_elbow", "l_wrist", "mid_hip"};
  HugLayout h;
  std::vector<ChannelSpec> specs;
  const auto add = [&](ChannelSpec s, std::vector<std::size_t>& bucket) {
    bucket.push_back(specs.size());
    specs.push_back(std::move(s));
  };

  for (std::size_t j = 0; j < c.n_joints; ++j) {
    const bool left = j < (c.n_joints + 1) / 2;
    const auto k = left ? j : j - (c.n_joints + 1) / 2;
    add({std::string("joint_") + (left ? "left_" : "right_") + std::to_string(k), Modality::JointPosition,
         Role::Controlled, std::nullopt},
        h.joints);
  }

  const std::size_t base = c.n_force_sensors / c.n_groups, extra = c.n_force_sensors % c.n_groups;
  const std::size_t arm_groups = c.n_groups / 2, torso_groups = c.n_groups - arm_groups;
  for (std::size_t g = 0; g < c.n_groups; ++g) {
    std::string id;
    if (g < arm_groups) {
      const bool left = g < arm_groups / 2;
      id = std::string("arm_") + (left ? "left_" : "right_") + std::to_string(left ? g : g - arm_groups / 2);
      (left ? h.left_groups : h.right_groups).push_back(id);
    } else {
      const auto t = g - arm_groups;
      const bool chest = t < torso_groups / 2;
      id = std::string(chest ? "chest_" : "back_") + std::to_string(chest ? t : t - torso_groups / 2);
    }
    const std::size_t size = base + (g < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k)
      add({"f_" + id + "_" + std::to_string(k), Modality::ContactForce, g < arm_groups ? Role::Controlled : Role::Observed, id},
          g < arm_groups ? h.arm_forces : h.torso_forces);
  }

  for (std::size_t m = 0; m < c.n_pose; ++m) {
    const std::string name = m < 8 ? marker_names[m] : "m" + std::to_string(m);
    add({"pose_" + name + "_x", Modality::Pose, Role::Observed, std::nullopt}, h.pose);
    add({"pose_" + name + "_y", Modality::Pose, Role::Observed, std::nullopt}, h.pose);
  }
  h.layout = SensorLayout(std::move(specs));

  // Informative inputs: the first sensor of each of the first n_informative torso groups.
  const std::size_t n_inf = c.n_informative;
  for (std::size_t k = 0; k < h.torso_forces.size() && h.informative.size() < n_inf; ++k) {
    const auto ch = h.torso_forces[k];
    if (k == 0 || h.layout[ch].group_id != h.layout[h.torso_forces[k - 1]].group_id) h.informative.push_back(ch);
  }
  // Sensors of one arm pad share a driver pair and differ only in gain.
  std::size_t gi = 0, member = 0;
  for (std::size_t a = 0; a < h.arm_forces.size(); ++a) {
    if (a > 0) {
      const bool same = h.layout[h.arm_forces[a]].group_id == h.layout[h.arm_forces[a - 1]].group_id;
      gi += same ? 0 : 1;
      member = same ? member + 1 : 0;
    }
    const std::size_t p = gi % n_inf;
    const std::size_t q = (p + 1 + (gi / n_inf) % (n_inf - 1)) % n_inf;
    h.drivers.push_back({h.informative[p], h.informative[q]});
    const double alpha = 0.3 + 0.04 * static_cast<double>((gi * 7) % 11);
    const double gain = 1.0 - 0.15 * static_cast<double>(member);
    h.coefficients.push_back({gain * alpha, gain * (1.0 - alpha), gain * 0.2});
  }
  return h;
}

/// Informative sensors carry the partner's contact at a location; their group
/// neighbours see a fraction of it; sensors in other torso groups only pick up
/// spurious contact (e.g. deformation from the robot's own motion).
enum class TorsoRole { Informative, Neighbour, Spurious };

inline TorsoRole torso_role(const HugLayout& h, std::size_t channel) {
  for (auto i : h.informative) {
    if (i == channel) return TorsoRole::Informative;
    if (h.layout[i].group_id == h.layout[channel].group_id) return TorsoRole::Neighbour;
  }
  return TorsoRole::Spurious;
}

/// Informative sensor in the same group as `channel`.
inline std::size_t group_centre(const HugLayout& h, std::size_t channel) {
  for (auto i : h.informative)
    if (h.layout[i].group_id == h.layout[channel].group_id) return i;
  return channel;
}

/// Everything that varies between demonstrations.
struct DemoParams {
  std::size_t length = 0;
  double amplitude = 1.0;
  double warp_alpha = 0.0;
  double height = 0.0;              // partner size proxy in [-1, 1]
  std::vector<double> intensity;    // per torso sensor: contact level (informative) or spread ratio / false-positive level
  std::uint64_t noise_seed = 0;
};

inline DemoParams sample_demo_params(const ScenarioConfig& c, const HugLayout& h, Rng& rng) {
  std::uniform_int_distribution<std::size_t> len(c.duration_min, c.duration_max);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  DemoParams p;
  p.length = len(rng);
  p.amplitude = c.amplitude_min + (c.amplitude_max - c.amplitude_min) * u01(rng);
  p.warp_alpha = c.warp * (2.0 * u01(rng) - 1.0);
  p.height = 2.0 * u01(rng) - 1.0;
  for (auto ch : h.torso_forces) {
    const double draw = u01(rng), level = u01(rng);
    switch (torso_role(h, ch)) {
      case TorsoRole::Informative: p.intensity.push_back(0.5 + level); break;
      case TorsoRole::Neighbour: p.intensity.push_back(0.2 + 0.6 * level); break;
      case TorsoRole::Spurious: p.intensity.push_back(draw < c.active_probability ? 0.3 + 1.2 * level : 0.0); break;
    }
  }
  p.noise_seed = rng();
  return p;
}

/// Monotone re-timing of relative time u onto the nominal behaviour phase.
inline double warp_phase(double u, double alpha) {
  return u + alpha / (2.0 * std::numbers::pi) * std::sin(2.0 * std::numbers::pi * u);
}

/// Raised-cosine bump on [begin, end], peak 1 at the window centre.
inline double contact_bump(double phase, double begin, double end) {
  if (phase <= begin || phase >= end) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (phase - begin) / (end - begin)));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Force channels below this level count as no contact.
inline double noise_floor(const ScenarioConfig& c) { return 3.0 * 5e-4 * c.peak_force; }

struct RenderFlags {
  bool approach = true;
  bool raise = true;
  bool contact = true;
};

inline Interaction render_demo(const ScenarioConfig& c, const HugLayout& h, const DemoParams& p, RenderFlags flags = {}) {
  Interaction out;
  out.layout = h.layout;
  out.timestep = c.timestep;
  const auto T = static_cast<Eigen::Index>(p.length);
  out.samples = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h.layout.size()), T);

  Rng rng(p.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double force_sd = 5e-4 * c.peak_force * c.noise;
  const auto floor_noise = [&] { return std::min(std::abs(force_sd * normal(rng)), 2.5 * force_sd); };

  static const double marker_offsets[8][2] = {{0.0, -0.15}, {-0.08, -0.13}, {-0.10, -0.03}, {-0.10, 0.06},
                                              {0.08, -0.13}, {0.10, -0.03}, {0.10, 0.06}, {0.0, 0.10}};

  for (Eigen::Index t = 0; t < T; ++t) {
    const double u = phase_of(static_cast<std::size_t>(t), p.length);
    const double phi = warp_phase(u, p.warp_alpha);
    const double bump = flags.contact ? contact_bump(phi, c.contact_begin, c.contact_end) : 0.0;
    auto col = out.samples.col(t);

    // Robot joints: raise, hold, lower.
    const double robot_raise = logistic((phi - 0.28) / 0.035) - logistic((phi - 0.85) / 0.035);
    for (std::size_t j = 0; j < h.joints.size(); ++j) {
      const double sign = j < (h.joints.size() + 1) / 2 ? 1.0 : -1.0;
      const double base = 0.1 * static_cast<double>(j % 3) - 0.1;
      const double amp = (0.4 + 0.1 * static_cast<double>(j % 4)) * (1.0 + 0.1 * p.height);
      col(static_cast<Eigen::Index>(h.joints[j])) = base + sign * amp * robot_raise + 0.002 * c.noise * normal(rng);
    }

    // Torso sensors: the partner's contact.
    std::vector<double> clean(h.layout.size(), 0.0);
    for (std::size_t k = 0; k < h.torso_forces.size(); ++k) {
      const auto ch = h.torso_forces[k];
      if (torso_role(h, ch) != TorsoRole::Neighbour) clean[ch] = c.peak_force * p.amplitude * p.intensity[k] * bump;
    }
    for (std::size_t k = 0; k < h.torso_forces.size(); ++k) {
      const auto ch = h.torso_forces[k];
      if (torso_role(h, ch) == TorsoRole::Neighbour) clean[ch] = p.intensity[k] * clean[group_centre(h, ch)];
      col(static_cast<Eigen::Index>(ch)) = clean[ch] + floor_noise();
    }

    // Arm sensors: affine in their two torso drivers, 1% noise.
    for (std::size_t a = 0; a < h.arm_forces.size(); ++a) {
      const auto& [alpha, beta, gamma] = h.coefficients[a];
      const double v = alpha * clean[h.drivers[a][0]] + beta * clean[h.drivers[a][1]] + gamma * c.peak_force * p.amplitude * bump;
      col(static_cast<Eigen::Index>(h.arm_forces[a])) = v * (1.0 + 0.01 * c.noise * normal(rng)) + floor_noise();
    }

    // Partner pose in normalised image coordinates.
    const double approach = flags.approach ? logistic((phi - 0.12) / 0.03) - logistic((phi - 0.93) / 0.025) : 0.0;
    const double raise = flags.raise ? logistic((phi - 0.22) / 0.035) - logistic((phi - 0.83) / 0.035) : 0.0;
    const double scale = 0.6 + 0.35 * approach;
    const double cy = 0.45 + 0.12 * approach + 0.02 * p.height;
    for (std::size_t m = 0; m < h.pose.size() / 2; ++m) {
      double dx = marker_offsets[m % 8][0], dy = marker_offsets[m % 8][1];
      const auto kind = m % 8;
      if (kind == 2 || kind == 5) dy -= 0.08 * raise;
      if (kind == 3 || kind == 6) {
        dy -= 0.18 * raise;
        dx += (dx < 0 ? -0.05 : 0.05) * raise;
      }
      col(static_cast<Eigen::Index>(h.pose[2 * m])) = 0.5 + scale * dx + 0.002 * c.noise * normal(rng);
      col(static_cast<Eigen::Index>(h.pose[2 * m + 1])) = cy + scale * dy + 0.002 * c.noise * normal(rng);
    }
  }
  return out;
}

struct Dataset {
  ScenarioConfig config;
  HugLayout hug;
  std::vector<Interaction> demos;
  std::vector<DemoParams> params;
};

inline Dataset generate_dataset(const ScenarioConfig& c) {
  Dataset d;
  d.config = c;
  d.hug = hug_layout(c);
  Rng rng(c.seed);
  for (std::size_t i = 0; i < c.n_demos; ++i) {
    d.params.push_back(sample_demo_params(c, d.hug, rng));
    d.demos.push_back(render_demo(c, d.hug, d.params.back()));
  }
  return d;
}

/// First demonstration of the scenario seeded by `c.seed`.
inline Interaction generate_demo(const ScenarioConfig& c) {
  const auto h = hug_layout(c);
  Rng rng(c.seed);
  return render_demo(c, h, sample_demo_params(c, h, rng));
}

// ---------------------------------------------------------------------------
// Edge cases

enum class EdgeCase { DoNothing, DelayBeforeHug, DelayAfterRaise, HugAir, HugNoContact };

inline const char* to_string(EdgeCase e) {
  switch (e) {
    case EdgeCase::DoNothing: return "do-nothing";
    case EdgeCase::DelayBeforeHug: return "delay-before-hug";
    case EdgeCase::DelayAfterRaise: return "delay-after-raise";
    case EdgeCase::HugAir: return "hug-air";
    case EdgeCase::HugNoContact: return "hug-no-contact";
  }
  return "?";
}

inline EdgeCase parse_edge_case(const std::string& s) {
  for (auto e : {EdgeCase::DoNothing, EdgeCase::DelayBeforeHug, EdgeCase::DelayAfterRaise, EdgeCase::HugAir,
                 EdgeCase::HugNoContact})
    if (s == to_string(e)) return e;
  throw DataError("unknown edge case '" + s + "'");
}

/// Fully observed frame of the observed channels of `in` at step t.
inline ObservationFrame observed_frame(const Interaction& in, std::span<const std::size_t> observed, Eigen::Index t) {
  ObservationFrame f;
  f.values.resize(static_cast<Eigen::Index>(observed.size()));
  for (std::size_t r = 0; r < observed.size(); ++r) f.values(static_cast<Eigen::Index>(r)) = in.samples(static_cast<Eigen::Index>(observed[r]), t);
  f.mask.assign(observed.size(), true);
  f.step_duration = in.timestep;
  return f;
}

inline std::vector<ObservationFrame> observed_frames(const Interaction& in, std::span<const std::size_t> observed) {
  std::vector<ObservationFrame> out;
  for (Eigen::Index t = 0; t < in.samples.cols(); ++t) out.push_back(observed_frame(in, observed, t));
  return out;
}

struct EdgeCaseSession {
  Interaction input;          // every channel of the full layout, as a sensor would record it
  std::size_t stall_onset = 0;  // first step at which a normal hug would make progress the input lacks

  std::vector<ObservationFrame> frames() const { return observed_frames(input, input.layout.indices(Role::Observed)); }
};

/// One scripted behaviour, built from the first demonstration of `c`.
inline EdgeCaseSession generate_edge_case(EdgeCase kind, const ScenarioConfig& c, std::size_t delay = 200) {
  const auto h = hug_layout(c);
  Rng rng(c.seed);
  const auto p = sample_demo_params(c, h, rng);
  const auto normal = render_demo(c, h, p);

  // Step at which the nominal phase first reaches `phi`.
  const auto step_at = [&](double phi) {
    for (std::size_t t = 0; t < p.length; ++t)
      if (warp_phase(phase_of(t, p.length), p.warp_alpha) >= phi) return t;
    return p.length - 1;
  };

  const Interaction* source = &normal;
  Interaction variant;
  std::vector<std::size_t> steps;
  EdgeCaseSession s;
  const auto run = [&](std::size_t from, std::size_t to) {
    for (std::size_t t = from; t < to; ++t) steps.push_back(t);
  };
  switch (kind) {
    case EdgeCase::DoNothing:
      steps.assign(p.length + delay, 0);
      s.stall_onset = 0;
      break;
    case EdgeCase::DelayBeforeHug:
      steps.assign(delay, 0);
      run(0, p.length);
      s.stall_onset = 0;
      break;
    case EdgeCase::DelayAfterRaise: {
      const auto hold = step_at(0.32);
      run(0, hold + 1);
      steps.insert(steps.end(), delay, hold);
      run(hold + 1, p.length);
      s.stall_onset = hold;
      break;
    }
    case EdgeCase::HugAir:
      variant = render_demo(c, h, p, RenderFlags{false, true, false});
      source = &variant;
      run(0, p.length);
      s.stall_onset = step_at(0.12);
      break;
    case EdgeCase::HugNoContact:
      variant = render_demo(c, h, p, RenderFlags{true, true, false});
      source = &variant;
      run(0, p.length);
      s.stall_onset = step_at(c.contact_begin);
      break;
  }
  s.input.layout = h.layout;
  s.input.timestep = c.timestep;
  s.input.samples.resize(source->samples.rows(), static_cast<Eigen::Index>(steps.size()));
  for (std::size_t k = 0; k < steps.size(); ++k)
    s.input.samples.col(static_cast<Eigen::Index>(k)) = source->samples.col(static_cast<Eigen::Index>(steps[k]));
  return s;
}

// ---------------------------------------------------------------------------
// Feature-selection fixture with known informative inputs

struct SelectionFixture {
  SensorLayout layout;
  std::vector<LatentModel> demos;
  std::vector<std::size_t> candidates, targets;
  std::vector<std::size_t> informative;  // subset of candidates
};

enum class FixtureKind { Informative, Independent, Duplicated };

/// `n_informative` + `n_noise` observed candidate channels and `n_targets`
/// controlled targets whose contact intensity is a fixed convex mix of the
/// first two informative candidates. Candidate positions are shuffled.
inline SelectionFixture selection_fixture(std::uint64_t seed, std::size_t n_demos = 40, std::size_t n_noise = 6,
                                          std::size_t n_targets = 4, FixtureKind kind = FixtureKind::Informative,
                                          std::size_t basis_size = 8) {
  constexpr std::size_t n_inf = 2;
  const std::size_t n_cand = n_inf + n_noise;
  Rng rng(seed);
  std::vector<std::size_t> slot(n_cand);
  for (std::size_t i = 0; i < n_cand; ++i) slot[i] = i;
  if (kind != FixtureKind::Duplicated) std::shuffle(slot.begin(), slot.end(), rng);

  SelectionFixture f;
  std::vector<ChannelSpec> specs;
  for (std::size_t i = 0; i < n_cand; ++i) {
    specs.push_back({"in_" + std::to_string(i), Modality::ContactForce, Role::Observed, std::nullopt});
    f.candidates.push_back(i);
  }
  for (std::size_t t = 0; t < n_targets; ++t) {
    specs.push_back({"out_" + std::to_string(t), Modality::ContactForce, Role::Controlled, std::nullopt});
    f.targets.push_back(n_cand + t);
  }
  f.layout = SensorLayout(specs);
  if (kind == FixtureKind::Informative || kind == FixtureKind::Duplicated) f.informative = {slot[0], slot[1]};

  const std::size_t T = 100;
  auto basis = std::make_shared<const BasisSpace>(uniform_basis(f.layout.size(), basis_size));
  std::uniform_real_distribution<double> level(0.5, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < n_demos; ++j) {
    std::vector<double> u(n_cand);
    for (auto& e : u) e = level(rng);
    if (kind == FixtureKind::Duplicated) u[slot[1]] = u[slot[0]];
    std::vector<double> driver = {u[slot[0]], u[slot[1]]};
    if (kind == FixtureKind::Independent) driver = {level(rng), level(rng)};
    Interaction in;
    in.layout = f.layout;
    in.samples.resize(static_cast<Eigen::Index>(f.layout.size()), static_cast<Eigen::Index>(T));
    for (std::size_t t = 0; t < T; ++t) {
      const double b = contact_bump(phase_of(t, T), 0.3, 0.8);
      for (std::size_t i = 0; i < n_cand; ++i) in.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = 10.0 * u[i] * b;
      for (std::size_t k = 0; k < n_targets; ++k) {
        const double a = n_targets == 1 ? 0.5 : 0.3 + 0.4 * static_cast<double>(k) / static_cast<double>(n_targets - 1);
        in.samples(static_cast<Eigen::Index>(n_cand + k), static_cast<Eigen::Index>(t)) =
            10.0 * (a * driver[0] + (1.0 - a) * driver[1]) * b * (1.0 + 0.01 * normal(rng));
      }
    }
    f.demos.push_back(fit(in, basis).model);
  }
  return f;
}

}  // namespace bip::synth
