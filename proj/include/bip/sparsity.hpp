#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bip/basis.hpp"
#include "bip/model.hpp"

namespace bip {

// ---------------------------------------------------------------------------
// Max-over-group sensor aggregation

struct SensorGroup {
  std::string id;
  std::vector<std::string> members;
  std::string output;  // name of the aggregated channel
};

struct GroupMap {
  std::vector<SensorGroup> groups;  // kept sorted by id

  void normalize() {
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }
};

/// Groups built from the layout's group_id tags; output channel named after the group.
inline GroupMap group_map_from_layout(const SensorLayout& layout) {
  std::map<std::string, SensorGroup> by_id;
  for (const auto& c : layout) {
    if (!c.group_id) continue;
    auto& g = by_id[*c.group_id];
    g.id = *c.group_id;
    g.output = *c.group_id;
    g.members.push_back(c.name);
  }
  GroupMap out;
  for (auto& [id, g] : by_id) out.groups.push_back(std::move(g));
  return out;
}

/// Checks `g` against the layout; returns, per group, member indices in layout order.
inline std::vector<std::vector<std::size_t>> resolve_groups(const SensorLayout& layout, const GroupMap& g) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<bool> taken(layout.size(), false);
  for (const auto& grp : g.groups) {
    if (grp.members.empty()) throw DataError("group '" + grp.id + "' is empty");
    std::vector<std::size_t> idx;
    for (const auto& m : grp.members) {
      auto i = layout.index_of(m);
      if (!i) throw DataError("group '" + grp.id + "': unknown member channel '" + m + "'");
      if (taken[*i]) throw DataError("group '" + grp.id + "': channel '" + m + "' belongs to more than one group");
      if (layout[*i].modality != Modality::ContactForce)
        throw DataError("group '" + grp.id + "': channel '" + m + "' is not a force channel");
      if (layout[*i].role != layout[idx.empty() ? *i : idx.front()].role)
        throw DataError("group '" + grp.id + "': members mix observed and controlled roles");
      taken[*i] = true;
      idx.push_back(*i);
    }
    std::sort(idx.begin(), idx.end());
    out.push_back(std::move(idx));
  }
  return out;
}

/// Layout after grouping: ungrouped channels in original order, then one
/// channel per group in group id order.
inline SensorLayout grouped_layout(const SensorLayout& layout, const GroupMap& g) {
  GroupMap sorted = g;
  sorted.normalize();
  const auto members = resolve_groups(layout, sorted);
  std::vector<bool> grouped(layout.size(), false);
  for (const auto& m : members)
    for (auto i : m) grouped[i] = true;
  std::vector<ChannelSpec> specs;
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (!grouped[i]) specs.push_back(layout[i]);
  for (std::size_t k = 0; k < sorted.groups.size(); ++k)
    specs.push_back(ChannelSpec{sorted.groups[k].output, Modality::ContactForce, layout[members[k].front()].role,
                                sorted.groups[k].id});
  return SensorLayout(std::move(specs));
}

inline Interaction group_reduce(const Interaction& in, const GroupMap& g) {
  validate_interaction(in);
  GroupMap sorted = g;
  sorted.normalize();
  const auto members = resolve_groups(in.layout, sorted);
  Interaction out;
  out.layout = grouped_layout(in.layout, sorted);
  out.timestep = in.timestep;
  out.samples.resize(static_cast<Eigen::Index>(out.layout.size()), in.samples.cols());
  std::vector<bool> grouped(in.layout.size(), false);
  for (const auto& m : members)
    for (auto i : m) grouped[i] = true;
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < in.layout.size(); ++i)
    if (!grouped[i]) out.samples.row(row++) = in.samples.row(static_cast<Eigen::Index>(i));
  for (const auto& m : members) {
    auto r = out.samples.row(row++);
    r = in.samples.row(static_cast<Eigen::Index>(m.front()));
    for (std::size_t k = 1; k < m.size(); ++k) r = r.cwiseMax(in.samples.row(static_cast<Eigen::Index>(m[k])));
  }
  return out;
}

/// Keeps only the listed channels, in layout order.
inline Interaction select_channels(const Interaction& in, const std::vector<std::string>& keep) {
  std::vector<std::size_t> idx;
  for (const auto& k : keep) idx.push_back(in.layout.require(k));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  std::vector<ChannelSpec> specs;
  for (auto i : idx) specs.push_back(in.layout[i]);
  Interaction out;
  out.layout = SensorLayout(std::move(specs));
  out.timestep = in.timestep;
  out.samples.resize(static_cast<Eigen::Index>(idx.size()), in.samples.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.samples.row(static_cast<Eigen::Index>(r)) = in.samples.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

// ---------------------------------------------------------------------------
// Binned mutual information

/// Equal-width bin index of every sample over the observed range. A constant
/// input maps to bin 0 throughout.
inline std::vector<int> bin_indices(std::span<const double> x, int bins) {
  std::vector<int> out(x.size(), 0);
  if (x.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (std::size_t i = 0; i < x.size(); ++i) {
    int b = static_cast<int>(std::floor((x[i] - lo) * scale));
    out[i] = std::clamp(b, 0, bins - 1);
  }
  return out;
}

/// Plug-in mutual information (bits) between two label sequences.
inline double mi_labels(std::span<const int> a, int a_bins, std::span<const int> b, int b_bins) {
  const std::size_t n = a.size();
  std::vector<int> joint(static_cast<std::size_t>(a_bins * b_bins), 0), pa(static_cast<std::size_t>(a_bins), 0),
      pb(static_cast<std::size_t>(b_bins), 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++joint[static_cast<std::size_t>(a[i] * b_bins + b[i])];
    ++pa[static_cast<std::size_t>(a[i])];
    ++pb[static_cast<std::size_t>(b[i])];
  }
  const double nn = static_cast<double>(n);
  double mi = 0.0;
  for (int i = 0; i < a_bins; ++i)
    for (int j = 0; j < b_bins; ++j) {
      const int c = joint[static_cast<std::size_t>(i * b_bins + j)];
      if (c == 0) continue;
      mi += c / nn * std::log2(c * nn / (static_cast<double>(pa[static_cast<std::size_t>(i)]) * pb[static_cast<std::size_t>(j)]));
    }
  return std::max(0.0, mi);
}

struct MiResult {
  double bits = 0.0;
  bool degenerate = false;  // one of the inputs had zero variance
};

inline MiResult mi_binned(std::span<const double> x, std::span<const double> y, int bins) {
  if (x.size() != y.size()) throw DataError("mi_binned: length mismatch");
  if (x.size() < 2) throw DataError("mi_binned: need at least 2 samples");
  if (bins < 2) throw DataError("mi_binned: need at least 2 bins");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) return {0.0, true};
  const auto bx = bin_indices(x, bins), by = bin_indices(y, bins);
  return {mi_labels(bx, bins, by, bins), false};
}

// ---------------------------------------------------------------------------
// Greedy mutual-information feature selection

struct SelectionReport {
  std::vector<std::string> selected;
  std::vector<double> increments;  // gain of each accepted pick
  std::vector<double> mi_trace;    // cumulative score after each pick
  double threshold = 0.07;
  int bins = 0;
  double stop_increment = 0.0;     // best rejected increment, if selection stopped on threshold
  bool stopped_on_threshold = false;

  std::string to_table() const {
    std::ostringstream os;
    os.precision(6);
    os << "# mutual-information input selection\n"
       << "# estimator=equal-width-binning bins=" << bins << " summary=mean-abs-coefficient"
       << " composite=sum-of-zscores correction=shuffle-mean,max-over-candidates\n"
       << "# threshold=" << threshold << " applied-to=per-step-increment\n"
       << "channel,increment,cumulative_mi\n";
    for (std::size_t i = 0; i < selected.size(); ++i)
      os << selected[i] << ',' << increments[i] << ',' << mi_trace[i] << '\n';
    if (stopped_on_threshold) os << "# stopped: best remaining increment " << stop_increment << " < threshold\n";
    return os.str();
  }
};

struct SelectionOptions {
  int bins = 0;               // 0 -> ceil(sqrt(N))
  double threshold = 0.07;
  int permutations = 32;      // shuffles used for the chance-level correction
};

inline int default_bins(std::size_t n_demos) {
  return std::max(2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_demos)))));
}

/// Per-demonstration scalar summary of one channel: mean absolute coefficient.
inline double coefficient_summary(const LatentModel& m, std::size_t channel) {
  return m.segment(channel).cwiseAbs().mean();
}

namespace detail {

inline std::vector<double> zscore(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  const double sd = std::sqrt(var / n);
  for (auto& e : v) e = sd > 0.0 ? (e - mean) / sd : 0.0;
  return v;
}

}  // namespace detail

/// Greedy forward selection of input channels. The selected set is summarised
/// per demonstration by the sum of its members' z-scored coefficient
/// summaries; the score of a set is its chance-corrected binned MI with each
/// target summary, averaged over targets. The chance level is the mean MI
/// against fixed shuffles of the target, so a duplicate of a selected channel
/// contributes exactly zero. The best increment is then reduced by the mean,
/// over shuffles, of the best increment any remaining candidate reaches on
/// shuffled targets; selection stops when that gain < threshold.
inline SelectionReport select_inputs(std::span<const LatentModel> demos, const SensorLayout& layout,
                                     std::span<const std::size_t> candidates, std::span<const std::size_t> targets,
                                     const SelectionOptions& opt = {}) {
  const std::size_t n = demos.size();
  if (n < 2) throw DataError("select_inputs: need at least 2 demonstrations");
  if (targets.empty()) throw DataError("select_inputs: no target channels");
  for (auto c : candidates)
    for (auto t : targets)
      if (c == t) throw DataError("select_inputs: candidate and target sets overlap at '" + layout[c].name + "'");
  for (const auto& d : demos)
    if (!d.basis || d.basis->channels() != layout.size()) throw DataError("select_inputs: latent model does not match layout");
  const int bins = opt.bins > 0 ? opt.bins : default_bins(n);
  if (bins < 2) throw DataError("select_inputs: need at least 2 bins");
  if (n < static_cast<std::size_t>(bins))
    throw DataError("select_inputs: " + std::to_string(n) + " demonstrations < " + std::to_string(bins) + " bins; lower --bins");

  SelectionReport rep;
  rep.threshold = opt.threshold;
  rep.bins = bins;

  const auto summaries = [&](std::size_t channel) {
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = coefficient_summary(demos[j], channel);
    return v;
  };

  // Target labels and their fixed shuffles.
  struct Target {
    std::vector<int> labels;
    std::vector<std::vector<int>> shuffled;
  };
  std::vector<Target> tgt;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    Target t;
    t.labels = bin_indices(summaries(targets[ti]), bins);
    std::mt19937_64 rng(0x9E3779B97F4A7C15ULL + ti);
    for (int p = 0; p < opt.permutations; ++p) {
      auto s = t.labels;
      std::shuffle(s.begin(), s.end(), rng);
      t.shuffled.push_back(std::move(s));
    }
    tgt.push_back(std::move(t));
  }

  std::vector<std::vector<double>> z;
  for (auto c : candidates) z.push_back(detail::zscore(summaries(c)));

  // Chance-corrected score of a composite, plus the same quantity against
  // each target shuffle (the null distribution of the score).
  struct Score {
    double value = 0.0;
    std::vector<double> null;
  };
  const std::size_t P = static_cast<std::size_t>(std::max(0, opt.permutations));
  const auto score = [&](const std::vector<double>& composite) {
    const auto lab = bin_indices(composite, bins);
    Score out;
    out.null.assign(P, 0.0);
    std::vector<double> raw(P);
    for (const auto& t : tgt) {
      double chance = 0.0;
      for (std::size_t p = 0; p < P; ++p) chance += raw[p] = mi_labels(lab, bins, t.shuffled[p], bins);
      if (P) chance /= static_cast<double>(P);
      out.value += mi_labels(lab, bins, t.labels, bins) - chance;
      for (std::size_t p = 0; p < P; ++p) out.null[p] += raw[p] - chance;
    }
    const double nt = static_cast<double>(tgt.size());
    out.value /= nt;
    for (auto& v : out.null) v /= nt;
    return out;
  };

  std::vector<double> composite(n, 0.0);
  std::vector<bool> used(candidates.size(), false);
  Score current{0.0, std::vector<double>(P, 0.0)};
  for (;;) {
    std::size_t best = candidates.size();
    double best_inc = 0.0;
    Score best_score;
    // Best increment any remaining candidate reaches against each shuffle; its
    // mean is what picking the maximum gains by chance alone.
    std::vector<double> null_best(P, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      std::vector<double> trial(n);
      for (std::size_t j = 0; j < n; ++j) trial[j] = composite[j] + z[i][j];
      auto s = score(trial);
      const double inc = s.value - current.value;
      for (std::size_t p = 0; p < P; ++p) null_best[p] = std::max(null_best[p], s.null[p] - current.null[p]);
      if (best == candidates.size() || inc > best_inc) {
        best = i;
        best_inc = inc;
        best_score = std::move(s);
      }
    }
    if (best == candidates.size()) break;
    const double selection_bias = P ? std::accumulate(null_best.begin(), null_best.end(), 0.0) / static_cast<double>(P) : 0.0;
    const double gain = best_inc - std::max(0.0, selection_bias);
    if (gain < opt.threshold) {
      rep.stop_increment = gain;
      rep.stopped_on_threshold = true;
      break;
    }
    used[best] = true;
    for (std::size_t j = 0; j < n; ++j) composite[j] += z[best][j];
    current = std::move(best_score);
    rep.selected.push_back(layout[candidates[best]].name);
    rep.increments.push_back(gain);
    rep.mi_trace.push_back(current.value);
  }
  return rep;
}

}  // namespace bip
