#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bip/filter.hpp"
#include "bip/model.hpp"
#include "bip/synth.hpp"
#include "bip/train.hpp"

namespace bip {

// ---------------------------------------------------------------------------
// Metrics

/// Mean over steps and the listed channels of |predicted - actual|.
/// Series are channels x steps.
inline double mae(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual, std::span<const std::size_t> channels) {
  if (predicted.cols() != actual.cols()) throw DataError("mae: series lengths differ");
  if (predicted.rows() != actual.rows()) throw DataError("mae: channel sets differ");
  if (channels.empty() || predicted.cols() == 0) throw DataError("mae: nothing to compare");
  double s = 0.0;
  for (auto c : channels) {
    if (c >= static_cast<std::size_t>(predicted.rows())) throw DataError("mae: channel index out of range");
    s += (predicted.row(static_cast<Eigen::Index>(c)) - actual.row(static_cast<Eigen::Index>(c))).cwiseAbs().sum();
  }
  return s / (static_cast<double>(channels.size()) * static_cast<double>(predicted.cols()));
}

struct MannWhitney {
  double u = 0.0;   // U of the first sample
  double p = 1.0;   // two-sided
  bool exact = false;
};

/// Midranks (1-based) of the pooled samples, pooled order = a then b.
inline std::vector<double> midranks(std::span<const double> pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return pooled[i] < pooled[j]; });
  std::vector<double> rank(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && pooled[order[j]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  return rank;
}

/// Mann-Whitney U with midrank ties. Exact permutation p-value (counting
/// subsets of the pooled midranks by rank sum) for n + m <= 16, normal
/// approximation with tie and continuity correction otherwise.
inline MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("mann_whitney_u: both samples must be non-empty");
  const std::size_t n = a.size(), m = b.size(), N = n + m;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto rank = midranks(pooled);
  const double ra = std::accumulate(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  MannWhitney out;
  out.u = ra - nn * (nn + 1.0) / 2.0;
  const double centre = nn * mm / 2.0;
  const double dev = std::abs(out.u - centre);

  if (N <= 16) {
    // Doubled midranks are integers.
    std::vector<int> r2(N);
    int total = 0;
    for (std::size_t i = 0; i < N; ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * rank[i]));
      total += r2[i];
    }
    std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = std::min(i + 1, n); k >= 1; --k)
        for (int s = total; s >= r2[i]; --s) ways[k][static_cast<std::size_t>(s)] += ways[k - 1][static_cast<std::size_t>(s - r2[i])];
    double extreme = 0.0, all = 0.0;
    for (int s = 0; s <= total; ++s) {
      const double w = ways[n][static_cast<std::size_t>(s)];
      if (w == 0.0) continue;
      all += w;
      const double u = s / 2.0 - nn * (nn + 1.0) / 2.0;
      if (std::abs(u - centre) >= dev - 1e-9) extreme += w;
    }
    out.p = std::min(1.0, extreme / all);
    out.exact = true;
    return out;
  }

  std::map<double, int> ties;
  for (double v : pooled) ++ties[v];
  double tie_sum = 0.0;
  for (const auto& [v, t] : ties) tie_sum += static_cast<double>(t) * t * t - t;
  const double Nd = static_cast<double>(N);
  const double var = nn * mm / 12.0 * ((Nd + 1.0) - tie_sum / (Nd * (Nd - 1.0)));
  if (var <= 0.0) {
    out.p = 1.0;
    return out;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  out.p = std::clamp(std::erfc(z / std::sqrt(2.0)), std::numeric_limits<double>::min(), 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Cross validation

/// Channels scored by each metric group, named in the raw dataset layout.
/// Force metrics score the per-step maximum over each listed group so that
/// grouped and ungrouped variants are compared on the same quantity.
struct MetricGroups {
  std::vector<std::string> joints;
  std::map<std::string, std::vector<std::string>> force_groups;  // metric name -> group ids

  static MetricGroups from_layout(const SensorLayout& layout, const std::string& left_tag = "left",
                                  const std::string& right_tag = "right") {
    MetricGroups g;
    for (const auto& c : layout) {
      if (c.role != Role::Controlled) continue;
      if (c.modality == Modality::JointPosition) g.joints.push_back(c.name);
      if (c.modality == Modality::ContactForce && c.group_id) {
        for (const auto& [metric, tag] : {std::pair{std::string("left"), left_tag}, std::pair{std::string("right"), right_tag}}) {
          auto& ids = g.force_groups[metric];
          if (c.group_id->find(tag) != std::string::npos && std::find(ids.begin(), ids.end(), *c.group_id) == ids.end())
            ids.push_back(*c.group_id);
        }
      }
    }
    return g;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out{"joints"};
    for (const auto& [k, v] : force_groups) out.push_back(k);
    return out;
  }
};

struct EvalOptions {
  std::size_t folds = 10;
  std::vector<double> look_aheads{0.0, 0.05, 0.1};
  std::uint64_t seed = 1;
  TrainOptions train;
  std::size_t threads = 0;  // 0 -> hardware concurrency
};

struct VariantResult {
  Variant variant;
  std::size_t dimension = 0;  // mean latent dimension over folds, rounded
  std::vector<std::size_t> fold_dimensions;
  // mae[look-ahead index][metric name] -> per-demo MAE, dataset order
  std::vector<std::map<std::string, std::vector<double>>> mae;

  double mean(std::size_t la, const std::string& metric) const {
    const auto& v = mae.at(la).at(metric);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

struct EvalReport {
  std::vector<double> look_aheads;
  std::vector<std::string> metrics;
  std::vector<VariantResult> variants;
  std::uint64_t seed = 0;
  std::size_t folds = 0;
  // significance[look-ahead][metric][i][j]: variant i against variant j
  std::vector<std::map<std::string, std::vector<std::vector<MannWhitney>>>> significance;

  const VariantResult& variant(const std::string& name) const {
    for (const auto& v : variants)
      if (v.variant.name == name) return v;
    throw DataError("report has no variant '" + name + "'");
  }
};

/// Seeded shuffle, then round-robin: fold of the i-th shuffled demo is i mod folds.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw DataError("cross_validate: need at least 2 folds");
  if (n < folds) throw DataError("cross_validate: fewer demonstrations than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % folds;
  return fold;
}

inline std::uint64_t session_seed(std::uint64_t seed, std::size_t demo) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (demo + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

/// Per-step metric values (rows) of a decoded or raw sample, computed on
/// raw-layout channel names.
struct MetricProjector {
  std::vector<std::string> metrics;
  // per metric: list of outputs; each output = list of source indices whose max is taken
  std::vector<std::vector<std::vector<std::size_t>>> model_sources, raw_sources;

  MetricProjector(const MetricGroups& g, const SensorLayout& raw, const SensorLayout& model) {
    metrics = g.names();
    const auto add_metric = [&](const std::vector<std::vector<std::string>>& raw_names,
                                const std::vector<std::vector<std::string>>& model_names) {
      std::vector<std::vector<std::size_t>> rs, ms;
      for (std::size_t o = 0; o < raw_names.size(); ++o) {
        std::vector<std::size_t> r, mo;
        for (const auto& nm : raw_names[o]) r.push_back(raw.require(nm));
        for (const auto& nm : model_names[o]) mo.push_back(model.require(nm));
        rs.push_back(std::move(r));
        ms.push_back(std::move(mo));
      }
      raw_sources.push_back(std::move(rs));
      model_sources.push_back(std::move(ms));
    };
    {
      std::vector<std::vector<std::string>> names;
      for (const auto& j : g.joints) names.push_back({j});
      add_metric(names, names);
    }
    for (const auto& [metric, ids] : g.force_groups) {
      std::vector<std::vector<std::string>> raw_names, model_names;
      for (const auto& id : ids) {
        std::vector<std::string> members;
        for (const auto& c : raw)
          if (c.group_id == id) members.push_back(c.name);
        raw_names.push_back(members);
        if (auto direct = model.index_of(id); direct && model[*direct].group_id == id) model_names.push_back({id});
        else model_names.push_back(members);
      }
      add_metric(raw_names, model_names);
    }
  }

  static double project(const std::vector<std::size_t>& src, const Eigen::Ref<const Eigen::VectorXd>& v) {
    double m = v(static_cast<Eigen::Index>(src.front()));
    for (auto i : src) m = std::max(m, v(static_cast<Eigen::Index>(i)));
    return m;
  }
};

struct FoldOutput {
  std::size_t dimension = 0;
  // [demo position in test list][look-ahead][metric]
  std::vector<std::vector<std::vector<double>>> mae;
};

inline FoldOutput run_fold(const std::vector<Interaction>& demos, const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& test_idx, const Variant& variant, const MetricGroups& groups,
                           const EvalOptions& opt) {
  std::vector<Interaction> train;
  for (auto i : train_idx) train.push_back(demos[i]);
  const auto model = train_model(train, variant, opt.train);
  const auto initial = model.initial_state();
  const auto observed = model.observed();
  const MetricProjector proj(groups, model.source_layout, model.layout);

  FoldOutput out;
  out.dimension = model.latent_dimension();
  for (auto di : test_idx) {
    const auto& raw = demos[di];
    const auto reduced = model.reduce(raw);
    Session session(initial, session_seed(opt.seed, di));
    const auto L = opt.look_aheads.size();
    std::vector<std::vector<double>> err(L, std::vector<double>(proj.metrics.size(), 0.0));
    for (Eigen::Index t = 0; t < raw.samples.cols(); ++t) {
      session.step(synth::observed_frame(reduced, observed, t));
      for (std::size_t l = 0; l < L; ++l) {
        const auto inf = session.infer(opt.look_aheads[l]);
        for (std::size_t k = 0; k < proj.metrics.size(); ++k) {
          double e = 0.0;
          for (std::size_t o = 0; o < proj.raw_sources[k].size(); ++o)
            e += std::abs(MetricProjector::project(proj.model_sources[k][o], inf.decoded) -
                          MetricProjector::project(proj.raw_sources[k][o], raw.samples.col(t)));
          err[l][k] += e / static_cast<double>(proj.raw_sources[k].size());
        }
      }
    }
    for (auto& row : err)
      for (auto& e : row) e /= static_cast<double>(raw.samples.cols());
    out.mae.push_back(std::move(err));
  }
  return out;
}

}  // namespace detail

/// k-fold cross validation of one variant. Each held-out demonstration is
/// replayed through a filtering session on its observed channels; controlled
/// channels are scored per demonstration, then folds are pooled.
inline EvalReport cross_validate(const std::vector<Interaction>& demos, const Variant& variant, const EvalOptions& opt,
                                 const MetricGroups* metric_groups = nullptr) {
  if (demos.empty()) throw DataError("cross_validate: empty dataset");
  for (double la : opt.look_aheads)
    if (la < 0.0) throw DataError("cross_validate: look-ahead must be >= 0");
  const auto fold = fold_assignment(demos.size(), opt.folds, opt.seed);
  const MetricGroups groups = metric_groups ? *metric_groups : MetricGroups::from_layout(demos.front().layout);

  std::vector<std::vector<std::size_t>> train(opt.folds), test(opt.folds);
  for (std::size_t i = 0; i < demos.size(); ++i)
    for (std::size_t f = 0; f < opt.folds; ++f) (fold[i] == f ? test : train)[f].push_back(i);

  std::vector<detail::FoldOutput> outputs(opt.folds);
  std::size_t threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, opt.folds);
  for (std::size_t begin = 0; begin < opt.folds; begin += threads) {
    std::vector<std::future<detail::FoldOutput>> jobs;
    for (std::size_t f = begin; f < std::min(begin + threads, opt.folds); ++f) {
      auto run = [&, f] {
        try {
          return detail::run_fold(demos, train[f], test[f], variant, groups, opt);
        } catch (const DataError& e) {
          throw DataError(variant.name + " fold " + std::to_string(f) + ": " + e.what());
        } catch (const NumericalError& e) {
          throw NumericalError(variant.name + " fold " + std::to_string(f) + ": " + e.what());
        }
      };
      jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, run));
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) outputs[begin + k] = jobs[k].get();
  }

  EvalReport rep;
  rep.look_aheads = opt.look_aheads;
  rep.metrics = groups.names();
  rep.seed = opt.seed;
  rep.folds = opt.folds;
  VariantResult vr;
  vr.variant = variant;
  vr.mae.resize(opt.look_aheads.size());
  for (std::size_t l = 0; l < opt.look_aheads.size(); ++l)
    for (const auto& m : rep.metrics) vr.mae[l][m].assign(demos.size(), 0.0);
  double dim = 0.0;
  for (std::size_t f = 0; f < opt.folds; ++f) {
    vr.fold_dimensions.push_back(outputs[f].dimension);
    dim += static_cast<double>(outputs[f].dimension);
    for (std::size_t k = 0; k < test[f].size(); ++k)
      for (std::size_t l = 0; l < opt.look_aheads.size(); ++l)
        for (std::size_t mi = 0; mi < rep.metrics.size(); ++mi) vr.mae[l][rep.metrics[mi]][test[f][k]] = outputs[f].mae[k][l][mi];
  }
  vr.dimension = static_cast<std::size_t>(std::lround(dim / static_cast<double>(opt.folds)));
  rep.variants.push_back(std::move(vr));
  return rep;
}

/// Merges single-variant reports and fills the pairwise significance tables.
inline EvalReport combine(const std::vector<EvalReport>& parts) {
  if (parts.empty()) throw DataError("combine: no reports");
  EvalReport rep;
  rep.look_aheads = parts.front().look_aheads;
  rep.metrics = parts.front().metrics;
  rep.seed = parts.front().seed;
  rep.folds = parts.front().folds;
  for (const auto& p : parts) {
    if (p.look_aheads != rep.look_aheads || p.metrics != rep.metrics) throw DataError("combine: reports disagree on shape");
    for (const auto& v : p.variants) rep.variants.push_back(v);
  }
  if (rep.variants.size() < 2) return rep;
  rep.significance.resize(rep.look_aheads.size());
  for (std::size_t l = 0; l < rep.look_aheads.size(); ++l)
    for (const auto& m : rep.metrics) {
      auto& mat = rep.significance[l][m];
      mat.assign(rep.variants.size(), std::vector<MannWhitney>(rep.variants.size()));
      for (std::size_t i = 0; i < rep.variants.size(); ++i)
        for (std::size_t j = 0; j < rep.variants.size(); ++j)
          mat[i][j] = mann_whitney_u(rep.variants[i].mae[l].at(m), rep.variants[j].mae[l].at(m));
    }
  return rep;
}

inline EvalReport evaluate(const std::vector<Interaction>& demos, const std::vector<Variant>& variants, const EvalOptions& opt,
                           const MetricGroups* groups = nullptr) {
  std::vector<EvalReport> parts;
  for (const auto& v : variants) parts.push_back(cross_validate(demos, v, opt, groups));
  return combine(parts);
}

constexpr double kSignificance = 0.05;

/// True when variant i is significantly worse (higher MAE) than variant j.
inline bool significantly_worse(const EvalReport& r, std::size_t la, const std::string& metric, std::size_t i, std::size_t j) {
  if (r.significance.empty()) return false;
  return r.significance[la].at(metric)[i][j].p < kSignificance &&
         r.variants[i].mean(la, metric) > r.variants[j].mean(la, metric);
}

/// Table shaped like the usual comparison grid: a dimension row, then one row
/// per (look-ahead, metric) with one column per variant.
inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "# folds=" << r.folds << " seed=" << r.seed << "\n";
  os << "look_ahead,metric";
  for (const auto& v : r.variants) os << ',' << v.variant.name;
  os << "\n,dimension";
  for (const auto& v : r.variants) os << ',' << v.dimension;
  os << '\n';
  os << std::setprecision(6);
  for (std::size_t l = 0; l < r.look_aheads.size(); ++l)
    for (const auto& m : r.metrics) {
      os << std::fixed << std::setprecision(2) << r.look_aheads[l] << std::defaultfloat << std::setprecision(6) << ',' << m;
      for (const auto& v : r.variants) os << ',' << v.mean(l, m);
      os << '\n';
    }
  return os.str();
}

/// Pairwise Mann-Whitney table: one row per (look-ahead, metric, a, b).
inline std::string significance_table(const EvalReport& r) {
  std::ostringstream os;
  os << "look_ahead,metric,variant_a,variant_b,U,p\n" << std::setprecision(6);
  for (std::size_t l = 0; l < r.significance.size(); ++l)
    for (const auto& m : r.metrics) {
      const auto& mat = r.significance[l].at(m);
      for (std::size_t i = 0; i < mat.size(); ++i)
        for (std::size_t j = i + 1; j < mat.size(); ++j)
          os << r.look_aheads[l] << ',' << m << ',' << r.variants[i].variant.name << ',' << r.variants[j].variant.name << ','
             << mat[i][j].u << ',' << mat[i][j].p << '\n';
    }
  return os.str();
}

/// Plain-text summary: best (lowest mean MAE) marked [*], variants
/// significantly worse than the best marked [!].
inline std::string report_summary(const EvalReport& r) {
  std::ostringstream os;
  os << "Cross-validated MAE (" << r.folds << " folds, seed " << r.seed << ")\n";
  os << std::left << std::setw(10) << "lookahead" << std::setw(8) << "metric";
  for (const auto& v : r.variants) os << std::setw(16) << v.variant.name;
  os << '\n' << std::setw(18) << "dimension";
  for (const auto& v : r.variants) os << std::setw(16) << v.dimension;
  os << '\n';
  for (std::size_t l = 0; l < r.look_aheads.size(); ++l)
    for (const auto& m : r.metrics) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < r.variants.size(); ++i)
        if (r.variants[i].mean(l, m) < r.variants[best].mean(l, m)) best = i;
      std::ostringstream la;
      la << std::fixed << std::setprecision(2) << r.look_aheads[l];
      os << std::setw(10) << la.str() << std::setw(8) << m;
      for (std::size_t i = 0; i < r.variants.size(); ++i) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(4) << r.variants[i].mean(l, m);
        if (r.variants.size() > 1 && i == best) cell << " [*]";
        else if (significantly_worse(r, l, m, i, best)) cell << " [!]";
        os << std::setw(16) << cell.str();
      }
      os << '\n';
    }
  if (r.variants.size() > 1) os << "[*] best  [!] significantly worse than best (Mann-Whitney U, p < 0.05)\n";
  return os.str();
}

}  // namespace bip
