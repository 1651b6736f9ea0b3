#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bip {

// Error taxonomy. The CLI maps these onto exit codes.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Modality { JointPosition, ContactForce, Pose };
enum class Role { Observed, Controlled };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::JointPosition: return "joint";
    case Modality::ContactForce: return "force";
    case Modality::Pose: return "pose";
  }
  return "?";
}

inline const char* to_string(Role r) { return r == Role::Observed ? "observed" : "controlled"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "joint") return Modality::JointPosition;
  if (s == "force") return Modality::ContactForce;
  if (s == "pose") return Modality::Pose;
  throw DataError("unknown modality '" + s + "'");
}

inline Role parse_role(const std::string& s) {
  if (s == "observed") return Role::Observed;
  if (s == "controlled") return Role::Controlled;
  throw DataError("unknown role '" + s + "'");
}

struct ChannelSpec {
  std::string name;
  Modality modality = Modality::JointPosition;
  Role role = Role::Observed;
  std::optional<std::string> group_id;

  bool operator==(const ChannelSpec&) const = default;
};

/// Ordered channel metadata. Channel order is frozen at construction and is
/// the layout of every vector derived from an interaction (weights, ensemble
/// members, observations).
class SensorLayout {
 public:
  SensorLayout() = default;

  explicit SensorLayout(std::vector<ChannelSpec> channels) : channels_(std::move(channels)) {
    std::unordered_set<std::string> seen;
    bool any_observed = false, any_controlled = false;
    for (const auto& c : channels_) {
      if (c.name.empty()) throw DataError("layout: empty channel name");
      if (!seen.insert(c.name).second) throw DataError("layout: duplicate channel name '" + c.name + "'");
      if (c.group_id && c.modality != Modality::ContactForce)
        throw DataError("layout: channel '" + c.name + "' has a group but is not a force channel");
      any_observed |= c.role == Role::Observed;
      any_controlled |= c.role == Role::Controlled;
    }
    if (!any_observed || !any_controlled)
      throw DataError("layout: needs at least one observed and one controlled channel");
  }

  std::size_t size() const { return channels_.size(); }
  const ChannelSpec& operator[](std::size_t i) const { return channels_[i]; }
  const std::vector<ChannelSpec>& channels() const { return channels_; }
  auto begin() const { return channels_.begin(); }
  auto end() const { return channels_.end(); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (channels_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t require(const std::string& name) const {
    auto i = index_of(name);
    if (!i) throw DataError("unknown channel '" + name + "'");
    return *i;
  }

  std::vector<std::size_t> indices(Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (channels_[i].role == role) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> indices(Role role, Modality modality) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (channels_[i].role == role && channels_[i].modality == modality) out.push_back(i);
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(channels_.size());
    for (const auto& c : channels_) out.push_back(c.name);
    return out;
  }

  bool operator==(const SensorLayout&) const = default;

 private:
  std::vector<ChannelSpec> channels_;
};

/// A D x T multichannel time series. Column t is the sample at step t.
struct Interaction {
  SensorLayout layout;
  Eigen::MatrixXd samples;
  double timestep = 1.0 / 30.0;

  std::size_t channels() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t steps() const { return static_cast<std::size_t>(samples.cols()); }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string message() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < violations.size(); ++i) os << (i ? "; " : "") << violations[i];
    return os.str();
  }
};

/// Collects every structural violation rather than stopping at the first.
inline ValidationReport check_interaction(const Interaction& in) {
  ValidationReport r;
  if (in.samples.rows() != static_cast<Eigen::Index>(in.layout.size())) {
    std::ostringstream os;
    os << "channel count mismatch: layout has " << in.layout.size() << ", samples have "
       << in.samples.rows();
    r.violations.push_back(os.str());
  }
  if (in.samples.cols() < 2) r.violations.push_back("too short: T = " + std::to_string(in.samples.cols()) + " < 2");
  if (!(in.timestep > 0.0) || !std::isfinite(in.timestep)) r.violations.push_back("timestep must be positive");
  for (Eigen::Index t = 0; t < in.samples.cols(); ++t)
    for (Eigen::Index d = 0; d < in.samples.rows(); ++d)
      if (!std::isfinite(in.samples(d, t))) {
        std::ostringstream os;
        os << "non-finite value at (channel " << d;
        if (static_cast<std::size_t>(d) < in.layout.size()) os << " '" << in.layout[d].name << "'";
        os << ", step " << t << ")";
        r.violations.push_back(os.str());
      }
  return r;
}

/// Returns the interaction unchanged or throws DataError listing every violation.
inline const Interaction& validate_interaction(const Interaction& in) {
  auto r = check_interaction(in);
  if (!r.ok()) throw DataError("invalid interaction: " + r.message());
  return in;
}

/// Rejects an interaction whose channel order disagrees with `expected`.
inline void require_layout(const Interaction& in, const SensorLayout& expected, const char* where) {
  if (!(in.layout == expected)) throw DataError(std::string(where) + ": interaction layout does not match");
}

/// Linearly interpolated relative phase: t / (T - 1).
inline double phase_of(std::size_t t, std::size_t length) {
  if (length < 2) throw DataError("phase_of: length must be >= 2");
  if (t >= length) throw DataError("phase_of: step " + std::to_string(t) + " out of range");
  if (t == length - 1) return 1.0;
  return static_cast<double>(t) / static_cast<double>(length - 1);
}

inline double clamp_phase(double phi) { return phi < 0.0 ? 0.0 : (phi > 1.0 ? 1.0 : phi); }

struct Phase {
  double value = 0.0;
  double velocity = 0.0;
};

}  // namespace bip
