#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bip/model.hpp"

namespace bip {

/// Gaussian radial functions over the phase domain for one channel.
struct ChannelBasis {
  std::vector<double> centers;  // ascending, within [0, 1]
  double width = 1.0;           // bandwidth in phase units

  std::size_t size() const { return centers.size(); }
  bool operator==(const ChannelBasis&) const = default;
};

class BasisSpace {
 public:
  BasisSpace() = default;
  explicit BasisSpace(std::vector<ChannelBasis> channels) : channels_(std::move(channels)) {
    offsets_.reserve(channels_.size() + 1);
    offsets_.push_back(0);
    for (std::size_t d = 0; d < channels_.size(); ++d) {
      const auto& c = channels_[d];
      if (c.centers.empty()) throw DataError("basis: channel " + std::to_string(d) + " has no centers");
      if (!(c.width > 0.0) || !std::isfinite(c.width))
        throw DataError("basis: channel " + std::to_string(d) + " has non-positive width");
      if (!std::is_sorted(c.centers.begin(), c.centers.end()))
        throw DataError("basis: channel " + std::to_string(d) + " centers not sorted");
      if (c.centers.front() < 0.0 || c.centers.back() > 1.0)
        throw DataError("basis: channel " + std::to_string(d) + " centers outside [0, 1]");
      offsets_.push_back(offsets_.back() + c.centers.size());
    }
  }

  std::size_t channels() const { return channels_.size(); }
  const ChannelBasis& channel(std::size_t d) const { return channels_.at(d); }
  const std::vector<ChannelBasis>& all() const { return channels_; }
  std::size_t offset(std::size_t d) const { return offsets_.at(d); }
  std::size_t size(std::size_t d) const { return channels_.at(d).size(); }
  std::size_t total() const { return offsets_.empty() ? 0 : offsets_.back(); }

  bool operator==(const BasisSpace& o) const { return channels_ == o.channels_; }

 private:
  std::vector<ChannelBasis> channels_;
  std::vector<std::size_t> offsets_;
};

/// Concatenated basis weights of one demonstration, in channel order.
struct LatentModel {
  Eigen::VectorXd weights;
  std::shared_ptr<const BasisSpace> basis;

  Eigen::Ref<const Eigen::VectorXd> segment(std::size_t d) const {
    return weights.segment(static_cast<Eigen::Index>(basis->offset(d)),
                           static_cast<Eigen::Index>(basis->size(d)));
  }
};

struct DecompositionResult {
  LatentModel model;
  std::vector<double> residual;  // per-channel RMS reconstruction error
};

inline double gaussian(double phase, double center, double width) {
  const double z = (phase - center) / width;
  return std::exp(-0.5 * z * z);
}

inline Eigen::VectorXd basis_row(const ChannelBasis& b, double phase) {
  Eigen::VectorXd row(static_cast<Eigen::Index>(b.size()));
  for (std::size_t k = 0; k < b.size(); ++k) row(static_cast<Eigen::Index>(k)) = gaussian(phase, b.centers[k], b.width);
  return row;
}

inline Eigen::VectorXd basis_row(const BasisSpace& b, std::size_t channel, double phase) {
  if (!(phase >= 0.0 && phase <= 1.0)) throw DataError("basis_row: phase outside [0, 1]");
  return basis_row(b.channel(channel), phase);
}

/// T x K matrix of Gaussian activations at the given phases.
inline Eigen::MatrixXd design_matrix(std::span<const double> phases, std::span<const double> centers, double width) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(phases.size()), static_cast<Eigen::Index>(centers.size()));
  for (std::size_t t = 0; t < phases.size(); ++t)
    for (std::size_t k = 0; k < centers.size(); ++k)
      m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = gaussian(phases[t], centers[k], width);
  return m;
}

inline std::vector<double> phase_grid(std::size_t length) {
  std::vector<double> g(length);
  for (std::size_t t = 0; t < length; ++t) g[t] = phase_of(t, length);
  return g;
}

inline std::vector<double> uniform_centers(std::size_t count) {
  if (count == 0) throw DataError("uniform basis needs at least one center");
  if (count == 1) return {0.5};
  std::vector<double> c(count);
  for (std::size_t k = 0; k < count; ++k) c[k] = static_cast<double>(k) / static_cast<double>(count - 1);
  c.back() = 1.0;
  return c;
}

/// Spacing of an evenly spaced grid; a single center counts as spacing 1.
inline double uniform_spacing(std::size_t count) {
  return count <= 1 ? 1.0 : 1.0 / static_cast<double>(count - 1);
}

inline ChannelBasis uniform_channel_basis(std::size_t per_channel, double width_factor) {
  return ChannelBasis{uniform_centers(per_channel), width_factor * uniform_spacing(per_channel)};
}

inline BasisSpace uniform_basis(std::size_t channels, std::size_t per_channel, double width_factor = 1.0) {
  if (per_channel < 1) throw DataError("uniform_basis: need at least one function per channel");
  return BasisSpace(std::vector<ChannelBasis>(channels, uniform_channel_basis(per_channel, width_factor)));
}

/// Ridge-regularised least squares y ~ Phi w, solved on the augmented system
/// [Phi; sqrt(ridge) I] to avoid squaring the condition number.
inline Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double ridge) {
  const Eigen::Index n = phi.rows(), k = phi.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  Eigen::VectorXd w;
  if (ridge > 0.0) {
    Eigen::MatrixXd a(n + k, k);
    a.topRows(n) = phi;
    a.bottomRows(k) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(k, k);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n + k);
    b.head(n) = y;
    qr.compute(a);
    w = qr.solve(b);
  } else {
    qr.setThreshold(1e-12);
    qr.compute(phi);
    if (qr.rank() < k) throw NumericalError("fit: singular normal equations (set ridge > 0)");
    w = qr.solve(y);
  }
  return w;
}

inline DecompositionResult fit(const Interaction& in, std::shared_ptr<const BasisSpace> basis, double ridge = 1e-6) {
  validate_interaction(in);
  if (!basis || basis->channels() != in.channels()) throw DataError("fit: basis channel count does not match interaction");
  if (ridge < 0.0) throw DataError("fit: ridge must be >= 0");
  const auto phases = phase_grid(in.steps());
  DecompositionResult out;
  out.model.basis = basis;
  out.model.weights.resize(static_cast<Eigen::Index>(basis->total()));
  out.residual.resize(in.channels());
  for (std::size_t d = 0; d < in.channels(); ++d) {
    const auto& cb = basis->channel(d);
    if (ridge == 0.0 && in.steps() < cb.size())
      throw NumericalError("fit: channel '" + in.layout[d].name + "' has fewer steps than basis functions and ridge = 0");
    const Eigen::MatrixXd phi = design_matrix(phases, cb.centers, cb.width);
    const Eigen::VectorXd y = in.samples.row(static_cast<Eigen::Index>(d)).transpose();
    Eigen::VectorXd w;
    try {
      w = solve_least_squares(phi, y, ridge);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " on channel '" + in.layout[d].name + "'");
    }
    out.model.weights.segment(static_cast<Eigen::Index>(basis->offset(d)), w.size()) = w;
    out.residual[d] = std::sqrt((phi * w - y).squaredNorm() / static_cast<double>(y.size()));
  }
  return out;
}

inline DecompositionResult fit(const Interaction& in, const BasisSpace& basis, double ridge = 1e-6) {
  return fit(in, std::make_shared<const BasisSpace>(basis), ridge);
}

/// Channel value at `phase` for a weight vector laid out on `basis`.
inline double decode_channel(const BasisSpace& basis, const Eigen::Ref<const Eigen::VectorXd>& weights,
                             std::size_t d, double phase) {
  const auto& cb = basis.channel(d);
  const auto off = static_cast<Eigen::Index>(basis.offset(d));
  double v = 0.0;
  for (std::size_t k = 0; k < cb.size(); ++k) v += gaussian(phase, cb.centers[k], cb.width) * weights(off + static_cast<Eigen::Index>(k));
  return v;
}

/// Decodes the requested channels. Phases outside [0, 1] are clamped.
inline Eigen::VectorXd decode(const BasisSpace& basis, const Eigen::Ref<const Eigen::VectorXd>& weights,
                              double phase, std::span<const std::size_t> channels) {
  const double p = clamp_phase(phase);
  Eigen::VectorXd out(static_cast<Eigen::Index>(channels.size()));
  for (std::size_t i = 0; i < channels.size(); ++i) out(static_cast<Eigen::Index>(i)) = decode_channel(basis, weights, channels[i], p);
  return out;
}

inline Eigen::VectorXd decode(const LatentModel& m, double phase, std::span<const std::size_t> channels) {
  return decode(*m.basis, m.weights, phase, channels);
}

inline Eigen::VectorXd decode_all(const BasisSpace& basis, const Eigen::Ref<const Eigen::VectorXd>& weights, double phase) {
  const double p = clamp_phase(phase);
  Eigen::VectorXd out(static_cast<Eigen::Index>(basis.channels()));
  for (std::size_t d = 0; d < basis.channels(); ++d) out(static_cast<Eigen::Index>(d)) = decode_channel(basis, weights, d, p);
  return out;
}

// ---------------------------------------------------------------------------
// Orthogonal least squares selection

struct OlsSelection {
  std::vector<double> centers;       // selected centers, ascending
  std::vector<std::size_t> order;    // candidate indices in selection order
  std::vector<double> ratios;        // error-reduction ratio of each pick, selection order
  bool degenerate = false;           // target had nothing to explain

  double explained() const {
    double s = 0.0;
    for (double r : ratios) s += r;
    return s;
  }
};

/// Greedy forward selection of Gaussian regressors by error-reduction ratio
/// on the Gram-Schmidt orthogonalised candidates. Each column of `targets` is
/// one signal sampled at `phases`; ratios are pooled over the columns. Stops
/// once the unexplained fraction 1 - sum(ratios) drops below `tolerance` or
/// candidates run out. Ties go to the lowest candidate index.
inline OlsSelection ols_select(std::span<const double> phases, const Eigen::MatrixXd& targets,
                               std::span<const double> candidates, double width, double tolerance) {
  if (candidates.empty()) throw DataError("ols_select: empty candidate set");
  if (!(tolerance > 0.0 && tolerance < 1.0)) throw DataError("ols_select: tolerance must be in (0, 1)");
  if (static_cast<Eigen::Index>(phases.size()) != targets.rows() || phases.empty() || targets.cols() == 0)
    throw DataError("ols_select: phase/value length mismatch");
  if (!targets.allFinite()) throw DataError("ols_select: non-finite target");

  OlsSelection out;
  const Eigen::MatrixXd& y = targets;
  const Eigen::RowVectorXd means = y.colwise().mean();
  if ((y.rowwise() - means).squaredNorm() == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double yy = y.squaredNorm();

  Eigen::MatrixXd w = design_matrix(phases, candidates, width);  // orthogonalised in place
  Eigen::VectorXd norms0 = w.colwise().squaredNorm().transpose();
  std::vector<bool> used(candidates.size(), false);
  std::vector<Eigen::VectorXd> basis;  // selected orthogonal columns
  double explained = 0.0;

  while (out.order.size() < candidates.size()) {
    Eigen::Index best = -1;
    double best_err = -1.0;
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double ww = w.col(i).squaredNorm();
      if (ww <= 1e-12 * norms0(i)) continue;  // numerically dependent on the selected set
      const double err = (w.col(i).transpose() * y).squaredNorm() / ww / yy;
      if (err > best_err) {
        best_err = err;
        best = i;
      }
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = true;
    out.order.push_back(static_cast<std::size_t>(best));
    out.ratios.push_back(best_err);
    explained += best_err;

    Eigen::VectorXd q = w.col(best);
    const double qq = q.squaredNorm();
    basis.push_back(q);
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      w.col(i) -= (q.dot(w.col(i)) / qq) * q;
    }
    if (1.0 - explained < tolerance) break;
  }
  for (auto i : out.order) out.centers.push_back(candidates[i]);
  std::sort(out.centers.begin(), out.centers.end());
  return out;
}

inline OlsSelection ols_select(std::span<const double> phases, std::span<const double> values,
                               std::span<const double> candidates, double width, double tolerance) {
  if (phases.size() != values.size() || phases.empty()) throw DataError("ols_select: phase/value length mismatch");
  const Eigen::Map<const Eigen::VectorXd> y(values.data(), static_cast<Eigen::Index>(values.size()));
  return ols_select(phases, Eigen::MatrixXd(y), candidates, width, tolerance);
}

inline OlsSelection ols_select(const Interaction& in, std::size_t channel, std::span<const double> candidates,
                               double width, double tolerance) {
  validate_interaction(in);
  if (channel >= in.channels()) throw DataError("ols_select: channel index out of range");
  const auto phases = phase_grid(in.steps());
  std::vector<double> values(in.steps());
  for (std::size_t t = 0; t < in.steps(); ++t) values[t] = in.samples(static_cast<Eigen::Index>(channel), static_cast<Eigen::Index>(t));
  return ols_select(phases, values, candidates, width, tolerance);
}

/// One channel of every demonstration resampled onto a common phase grid by
/// linear interpolation; column k is demonstration k.
inline Eigen::MatrixXd channel_profiles(std::span<const Interaction> demos, std::size_t channel, std::span<const double> grid) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(demos.size()));
  const auto c = static_cast<Eigen::Index>(channel);
  for (std::size_t k = 0; k < demos.size(); ++k) {
    const auto& in = demos[k];
    if (channel >= in.channels()) throw DataError("channel_profiles: channel index out of range");
    const std::size_t T = in.steps();
    if (T < 2) throw DataError("channel_profiles: demonstration too short");
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double pos = clamp_phase(grid[g]) * static_cast<double>(T - 1);
      const auto lo = std::min(static_cast<std::size_t>(pos), T - 2);
      const double f = pos - static_cast<double>(lo);
      out(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)) =
          (1.0 - f) * in.samples(c, static_cast<Eigen::Index>(lo)) + f * in.samples(c, static_cast<Eigen::Index>(lo + 1));
    }
  }
  return out;
}

}  // namespace bip
