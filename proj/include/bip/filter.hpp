#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bip/basis.hpp"
#include "bip/model.hpp"

namespace bip {

using Rng = std::mt19937_64;

/// Diagonal process noise for the augmented state [phase, velocity, weights].
struct ProcessNoise {
  double phase = 0.0;
  double velocity = 0.0;
  double weight = 0.0;
};

/// E members of the augmented state [phase, phase velocity, weights], stored
/// as columns of `members`.
struct EnsembleState {
  Eigen::MatrixXd members;                 // (2 + B) x E
  Eigen::VectorXd process_noise;           // diagonal of Q, length 2 + B
  Eigen::VectorXd measurement_noise;       // per observed channel variance
  std::vector<std::size_t> observed;       // basis channel index of each observed channel
  std::shared_ptr<const BasisSpace> basis;

  Eigen::Index size() const { return members.cols(); }
  Eigen::Index dim() const { return members.rows(); }
  Eigen::VectorXd mean() const { return members.rowwise().mean(); }
};

/// Observation over the observed channels only; masked entries are ignored.
struct ObservationFrame {
  Eigen::VectorXd values;
  std::vector<bool> mask;
  double step_duration = 1.0 / 30.0;

  bool any() const {
    for (bool m : mask)
      if (m) return true;
    return false;
  }
};

struct InferenceOutput {
  double phase = 0.0;
  double phase_velocity = 0.0;
  Eigen::VectorXd decoded;  // all channels, at clamp(phase + look_ahead)
  double look_ahead = 0.0;
};

inline Eigen::VectorXd process_noise_vector(const ProcessNoise& q, std::size_t weights) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(2 + weights));
  v(0) = q.phase;
  v(1) = q.velocity;
  v.tail(static_cast<Eigen::Index>(weights)).setConstant(q.weight);
  return v;
}

/// Initial ensemble x_j = [0, 1/T_j, w_j], one member per demonstration.
inline EnsembleState init_ensemble(std::span<const LatentModel> demos, std::span<const std::size_t> lengths,
                                   std::vector<std::size_t> observed, const ProcessNoise& q,
                                   const Eigen::VectorXd& measurement_noise) {
  if (demos.size() < 2) throw DataError("init_ensemble: need at least 2 demonstrations");
  if (lengths.size() != demos.size()) throw DataError("init_ensemble: one length per demonstration required");
  const auto basis = demos.front().basis;
  if (!basis) throw DataError("init_ensemble: latent model without basis");
  for (const auto& d : demos)
    if (!d.basis || !(*d.basis == *basis)) throw DataError("init_ensemble: demonstrations use different basis spaces");
  if (static_cast<std::size_t>(measurement_noise.size()) != observed.size())
    throw DataError("init_ensemble: one measurement variance per observed channel required");
  if ((measurement_noise.array() < 0.0).any()) throw DataError("init_ensemble: negative measurement variance");
  if (q.phase < 0.0 || q.velocity < 0.0 || q.weight < 0.0) throw DataError("init_ensemble: negative process variance");
  for (auto o : observed)
    if (o >= basis->channels()) throw DataError("init_ensemble: observed channel index out of range");

  EnsembleState s;
  const auto B = static_cast<Eigen::Index>(basis->total());
  s.members.resize(2 + B, static_cast<Eigen::Index>(demos.size()));
  for (std::size_t j = 0; j < demos.size(); ++j) {
    if (lengths[j] < 2) throw DataError("init_ensemble: demonstration length must be >= 2");
    auto col = s.members.col(static_cast<Eigen::Index>(j));
    col(0) = 0.0;
    col(1) = 1.0 / static_cast<double>(lengths[j]);
    col.tail(B) = demos[j].weights;
  }
  s.process_noise = process_noise_vector(q, basis->total());
  s.measurement_noise = measurement_noise;
  s.observed = std::move(observed);
  s.basis = basis;
  return s;
}

namespace detail {

inline void clamp_members(Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    m(0, j) = clamp_phase(m(0, j));
    if (m(1, j) < 0.0) m(1, j) = 0.0;
  }
}

/// Predicted observations of every member on the active channels (rows).
inline Eigen::MatrixXd predict_observations(const EnsembleState& s, std::span<const std::size_t> active) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(active.size()), s.size());
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const auto w = s.members.col(j).tail(s.dim() - 2);
    const double phi = s.members(0, j);
    for (std::size_t r = 0; r < active.size(); ++r)
      y(static_cast<Eigen::Index>(r), j) = decode_channel(*s.basis, w, s.observed[active[r]], phi);
  }
  return y;
}

}  // namespace detail

/// Constant-velocity propagation with additive Gaussian process noise.
inline EnsembleState predict(const EnsembleState& s, Rng& rng) {
  EnsembleState out = s;
  auto& m = out.members;
  for (Eigen::Index j = 0; j < m.cols(); ++j) m(0, j) = clamp_phase(m(0, j) + m(1, j));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double var = out.process_noise(i);
    if (var <= 0.0) continue;
    const double sd = std::sqrt(var);
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += sd * normal(rng);
  }
  detail::clamp_members(m);
  return out;
}

struct UpdateDiagnostics {
  Eigen::VectorXd innovation;  // obs - mean predicted obs, NaN where masked
};

/// Stochastic ensemble update: every member is corrected against its own
/// perturbed copy of the observation, with gain K = Cxy (Cyy + R)^-1 computed
/// on the unmasked observed channels.
inline EnsembleState update(const EnsembleState& s, const ObservationFrame& obs, Rng& rng,
                            UpdateDiagnostics* diag = nullptr) {
  const std::size_t n_obs = s.observed.size();
  if (static_cast<std::size_t>(obs.values.size()) != n_obs || obs.mask.size() != n_obs)
    throw DataError("update: observation frame does not match the observed channel count");
  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < n_obs; ++r)
    if (obs.mask[r]) {
      if (!std::isfinite(obs.values(static_cast<Eigen::Index>(r)))) throw DataError("update: non-finite observation");
      active.push_back(r);
    }
  if (active.empty()) throw DataError("update: all channels masked; skip the update instead");

  const Eigen::Index E = s.size();
  const auto m = static_cast<Eigen::Index>(active.size());
  const Eigen::MatrixXd y = detail::predict_observations(s, active);
  const Eigen::VectorXd y_mean = y.rowwise().mean();
  const Eigen::MatrixXd y_dev = y.colwise() - y_mean;
  const Eigen::MatrixXd x_dev = s.members.colwise() - s.mean();
  const double norm = 1.0 / static_cast<double>(E - 1);

  const Eigen::MatrixXd cxy = norm * (x_dev * y_dev.transpose());
  Eigen::MatrixXd cyy = norm * (y_dev * y_dev.transpose());
  Eigen::VectorXd r(m), o(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    r(k) = s.measurement_noise(static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)]));
    o(k) = obs.values(static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)]));
  }
  cyy.diagonal() += r;

  if (diag) {
    diag->innovation = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_obs), std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index k = 0; k < m; ++k) diag->innovation(static_cast<Eigen::Index>(active[static_cast<std::size_t>(k)])) = o(k) - y_mean(k);
  }

  // Perturbed innovations, one column per member.
  Eigen::MatrixXd innov(m, E);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd r_sd = r.cwiseSqrt();
  for (Eigen::Index j = 0; j < E; ++j)
    for (Eigen::Index k = 0; k < m; ++k) innov(k, j) = o(k) + r_sd(k) * normal(rng) - y(k, j);

  EnsembleState out = s;
  if (cxy.isZero(0.0)) return out;  // no spread, no gain

  Eigen::LDLT<Eigen::MatrixXd> ldlt(cyy);
  const Eigen::VectorXd pivots = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-14 * pivots.cwiseAbs().maxCoeff()))
    throw NumericalError("update: innovation covariance is not invertible; set measurement noise R > 0");
  out.members += cxy * ldlt.solve(innov);
  detail::clamp_members(out.members);
  return out;
}

inline InferenceOutput infer(const EnsembleState& s, double look_ahead = 0.0) {
  if (look_ahead < 0.0) throw DataError("infer: look-ahead must be >= 0");
  const Eigen::VectorXd mean = s.mean();
  InferenceOutput out;
  out.phase = mean(0);
  out.phase_velocity = mean(1);
  out.look_ahead = look_ahead;
  out.decoded = decode_all(*s.basis, mean.tail(mean.size() - 2), clamp_phase(mean(0) + look_ahead));
  return out;
}

/// One filtering session. Not thread-safe; independent sessions are.
class Session {
 public:
  Session(EnsembleState initial, std::uint64_t seed) : state_(std::move(initial)), rng_(seed) {}

  /// Predict, then update unless the frame is fully masked.
  void step(const ObservationFrame& frame, UpdateDiagnostics* diag = nullptr) {
    state_ = predict(state_, rng_);
    if (frame.any()) {
      state_ = update(state_, frame, rng_, diag);
    } else if (diag) {
      diag->innovation = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(state_.observed.size()),
                                                   std::numeric_limits<double>::quiet_NaN());
    }
  }

  InferenceOutput infer(double look_ahead = 0.0) const { return bip::infer(state_, look_ahead); }
  const EnsembleState& state() const { return state_; }

 private:
  EnsembleState state_;
  Rng rng_;
};

inline std::vector<InferenceOutput> run_session(const EnsembleState& s, std::span<const ObservationFrame> frames,
                                                double look_ahead, std::uint64_t seed) {
  if (frames.empty()) throw DataError("run_session: no frames");
  Session session(s, seed);
  std::vector<InferenceOutput> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    session.step(f);
    out.push_back(session.infer(look_ahead));
  }
  return out;
}

}  // namespace bip
