#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bip/basis.hpp"
#include "bip/filter.hpp"
#include "bip/model.hpp"
#include "bip/sparsity.hpp"

namespace bip {

/// Which dimensionality reductions a model applies.
struct Variant {
  std::string name;  // All, MIFS, Group, Group+OLS
  bool uses_grouping = false;
  bool uses_mifs = false;
  bool uses_ols = false;

  static Variant all() { return {"All", false, false, false}; }
  static Variant mifs() { return {"MIFS", false, true, false}; }
  static Variant group() { return {"Group", true, false, false}; }
  static Variant group_ols() { return {"Group+OLS", true, false, true}; }

  /// Accepts both display names and the CLI spellings all/mifs/group/group-ols.
  static Variant parse(const std::string& s) {
    if (s == "all" || s == "All") return all();
    if (s == "mifs" || s == "MIFS") return mifs();
    if (s == "group" || s == "Group") return group();
    if (s == "group-ols" || s == "Group+OLS") return group_ols();
    throw DataError("unknown variant '" + s + "'");
  }

  std::string cli_name() const {
    if (name == "All") return "all";
    if (name == "MIFS") return "mifs";
    if (name == "Group") return "group";
    return "group-ols";
  }

  bool operator==(const Variant&) const = default;
};

struct TrainOptions {
  std::size_t basis_per_channel = 16;
  double width_factor = 1.0;
  double ridge = 1e-6;
  std::size_t ols_candidates = 64;
  double ols_tolerance = 0.001;
  std::size_t ols_grid = 101;
  SelectionOptions selection;
  double velocity_noise = 0.05;    // process sd of phase velocity, as a fraction of 1/mean(T)
  double measurement_floor = 1e-6;
  double measurement_scale = 3.0;
};

struct TrainedModel {
  Variant variant;
  SensorLayout source_layout;            // layout of the raw demonstrations
  std::optional<GroupMap> groups;
  std::optional<SelectionReport> selection;
  SensorLayout layout;                   // layout after reductions; defines every vector below
  std::shared_ptr<const BasisSpace> basis;
  std::vector<LatentModel> demos;
  std::vector<std::size_t> lengths;
  ProcessNoise process_noise;
  Eigen::VectorXd measurement_noise;     // per observed channel of `layout`

  std::size_t latent_dimension() const { return basis ? basis->total() : 0; }
  std::vector<std::size_t> observed() const { return layout.indices(Role::Observed); }

  /// Maps a raw demonstration onto this model's channel layout.
  Interaction reduce(const Interaction& raw) const {
    require_layout(raw, source_layout, "model");
    Interaction out = groups ? group_reduce(raw, *groups) : raw;
    if (!(out.layout == layout)) out = select_channels(out, layout.names());
    if (!(out.layout == layout)) throw DataError("model: reduced layout does not match the trained layout");
    return out;
  }

  EnsembleState initial_state() const {
    return init_ensemble(demos, lengths, observed(), process_noise, measurement_noise);
  }
};

inline TrainedModel train_model(std::span<const Interaction> raw, const Variant& variant, const TrainOptions& opt = {}) {
  if (raw.size() < 2) throw DataError("train: need at least 2 demonstrations");
  for (const auto& d : raw) {
    validate_interaction(d);
    require_layout(d, raw.front().layout, "train");
  }

  TrainedModel m;
  m.variant = variant;
  m.source_layout = raw.front().layout;

  std::vector<Interaction> work(raw.begin(), raw.end());
  if (variant.uses_grouping) {
    m.groups = group_map_from_layout(m.source_layout);
    for (auto& d : work) d = group_reduce(d, *m.groups);
  }
  SensorLayout layout = work.front().layout;

  if (variant.uses_mifs) {
    auto uniform = std::make_shared<const BasisSpace>(uniform_basis(layout.size(), opt.basis_per_channel, opt.width_factor));
    std::vector<LatentModel> latent;
    for (const auto& d : work) latent.push_back(fit(d, uniform, opt.ridge).model);
    const auto candidates = layout.indices(Role::Observed, Modality::ContactForce);
    const auto targets = layout.indices(Role::Controlled, Modality::ContactForce);
    m.selection = select_inputs(latent, layout, candidates, targets, opt.selection);
    std::vector<std::string> keep;
    for (const auto& c : layout) {
      const bool candidate = c.role == Role::Observed && c.modality == Modality::ContactForce;
      if (!candidate || std::find(m.selection->selected.begin(), m.selection->selected.end(), c.name) != m.selection->selected.end())
        keep.push_back(c.name);
    }
    for (auto& d : work) d = select_channels(d, keep);
    layout = work.front().layout;
  }
  m.layout = layout;

  // Basis: uniform everywhere; OLS-selected on force channels when requested.
  const auto uniform = uniform_channel_basis(opt.basis_per_channel, opt.width_factor);
  std::vector<ChannelBasis> channels(layout.size(), uniform);
  if (variant.uses_ols) {
    const auto candidates = uniform_centers(opt.ols_candidates);
    const auto grid = phase_grid(opt.ols_grid);
    for (std::size_t d = 0; d < layout.size(); ++d) {
      if (layout[d].modality != Modality::ContactForce) continue;
      const auto sel = ols_select(grid, channel_profiles(work, d, grid), candidates, uniform.width, opt.ols_tolerance);
      channels[d] = sel.centers.empty() ? ChannelBasis{{0.5}, uniform.width} : ChannelBasis{sel.centers, uniform.width};
    }
  }
  m.basis = std::make_shared<const BasisSpace>(std::move(channels));

  const auto observed = layout.indices(Role::Observed);
  Eigen::VectorXd resid2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(observed.size()));
  double mean_length = 0.0;
  for (const auto& d : work) {
    auto r = fit(d, m.basis, opt.ridge);
    for (std::size_t k = 0; k < observed.size(); ++k) resid2(static_cast<Eigen::Index>(k)) += r.residual[observed[k]] * r.residual[observed[k]];
    m.demos.push_back(std::move(r.model));
    m.lengths.push_back(d.steps());
    mean_length += static_cast<double>(d.steps());
  }
  mean_length /= static_cast<double>(work.size());
  m.measurement_noise = (opt.measurement_scale * resid2 / static_cast<double>(work.size())).cwiseMax(opt.measurement_floor);
  const double sd = opt.velocity_noise / mean_length;
  m.process_noise = ProcessNoise{0.0, sd * sd, 0.0};
  return m;
}

}  // namespace bip
