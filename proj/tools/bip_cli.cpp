#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bip/eval.hpp"
#include "bip/io.hpp"
#include "bip/synth.hpp"
#include "bip/train.hpp"

namespace {

using namespace bip;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3, kHalted = 4 };

constexpr double kCompletedPhase = 0.95;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> bins;
  std::optional<double> mi_threshold;
  std::optional<double> ols_tolerance;
};

/// Defaults, then the config file, then explicit flags.
io::PipelineConfig resolve(const Common& c) {
  io::PipelineConfig cfg;
  if (!c.config.empty()) cfg = io::load_config(c.config);
  if (c.seed) {
    cfg.scenario.seed = *c.seed;
    cfg.eval.seed = *c.seed;
  }
  if (c.bins) cfg.train.selection.bins = *c.bins;
  if (c.mi_threshold) cfg.train.selection.threshold = *c.mi_threshold;
  if (c.ols_tolerance) cfg.train.ols_tolerance = *c.ols_tolerance;
  return cfg;
}

io::Provenance provenance(const io::PipelineConfig& cfg, std::uint64_t seed) {
  return {seed, io::config_hash(io::to_json(cfg))};
}

void add_common(CLI::App* app, Common& c, bool selection_flags) {
  app->add_option("--config", c.config, "JSON config file with optional scenario/train/eval sections")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "random seed (default 1)");
  if (!selection_flags) return;
  app->add_option("--bins", c.bins, "MI histogram bins (default ceil(sqrt(N)))")->check(CLI::Range(2, 1000));
  app->add_option("--mi-threshold", c.mi_threshold, "MI selection stopping increment (default 0.07)");
  app->add_option("--ols-tolerance", c.ols_tolerance, "OLS unexplained-energy tolerance (default 0.001)");
}

int cmd_synth(const Common& c, std::optional<std::size_t> demos, const std::string& out) {
  auto cfg = resolve(c);
  if (demos) cfg.scenario.n_demos = *demos;
  cfg.scenario.validate();
  const auto p = provenance(cfg, cfg.scenario.seed);
  const auto ds = synth::generate_dataset(cfg.scenario);
  io::write_files(out, io::dataset_files(ds, p));
  const auto& L = ds.hug.layout;
  std::cout << ds.demos.size() << " demos written to " << out << "\n"
            << "channels: " << L.size() << " (" << ds.hug.arm_forces.size() + ds.hug.torso_forces.size() << " force, "
            << ds.hug.joints.size() << " joint, " << ds.hug.pose.size() << " pose)\n"
            << "observed: " << L.indices(Role::Observed).size() << ", controlled: " << L.indices(Role::Controlled).size() << "\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& dataset, const std::string& variant, const std::string& out) {
  auto cfg = resolve(c);
  const auto v = Variant::parse(variant);
  const auto data = io::read_dataset(dataset);
  const auto p = provenance(cfg, c.seed.value_or(data.provenance.seed));
  const auto model = train_model(data.demos, v, cfg.train);
  io::write_file(out, io::write_model(model, cfg.train, p));
  std::cout << "variant " << v.name << ": latent dimension " << model.latent_dimension() << " over "
            << model.layout.size() << " channels, " << model.demos.size() << " demonstrations\n";
  if (model.selection) std::cout << "selected inputs: " << model.selection->selected.size() << "\n";
  return kOk;
}

int cmd_infer(const Common& c, const std::string& model_path, const std::string& frames_path, const std::string& edge_case,
              double look_ahead, const std::string& out) {
  if (frames_path.empty() == edge_case.empty()) throw CLI::ValidationError("infer", "give exactly one of --frames or --edge-case");
  if (look_ahead < 0.0) throw CLI::ValidationError("--look-ahead", "must be >= 0");
  auto cfg = resolve(c);
  const auto file = io::read_model(model_path);
  const auto& model = file.model;

  std::vector<ObservationFrame> frames;
  if (!frames_path.empty()) {
    frames = io::frames_for_model(model, io::read_frames(frames_path, model.source_layout), cfg.scenario.timestep);
  } else {
    const auto e = synth::generate_edge_case(synth::parse_edge_case(edge_case), cfg.scenario);
    if (!(e.input.layout == model.source_layout))
      throw DataError("layout mismatch: the edge-case scenario does not produce the model's channel layout");
    frames = io::frames_for_model(model, e.input.samples, e.input.timestep);
  }

  const std::uint64_t seed = c.seed.value_or(1);
  Session session(model.initial_state(), seed);
  std::vector<io::TraceRow> rows;
  rows.reserve(frames.size());
  for (const auto& f : frames) {
    UpdateDiagnostics diag;
    session.step(f, &diag);
    rows.push_back({session.infer(look_ahead), diag.innovation});
  }
  io::write_file(out, io::write_trace(model, rows, provenance(cfg, seed)));

  const auto& last = rows.back().output;
  const bool completed = last.phase >= kCompletedPhase;
  std::cout << frames.size() << " steps, final phase " << last.phase << ", velocity " << last.phase_velocity << ": "
            << (completed ? "completed" : "halted") << "\n";
  return completed ? kOk : kHalted;
}

int cmd_eval(const Common& c, const std::string& dataset, const std::vector<std::string>& variants,
             std::optional<std::size_t> folds, const std::vector<double>& look_aheads, std::optional<unsigned> threads,
             const std::string& out) {
  auto cfg = resolve(c);
  if (folds) cfg.eval.folds = *folds;
  if (!look_aheads.empty()) cfg.eval.look_aheads = look_aheads;
  if (threads) cfg.eval.threads = *threads;
  cfg.eval.train = cfg.train;
  std::vector<Variant> vs;
  for (const auto& v : variants) vs.push_back(Variant::parse(v));
  if (vs.empty()) vs = {Variant::all(), Variant::mifs(), Variant::group(), Variant::group_ols()};
  const auto data = io::read_dataset(dataset);

  EvalReport report;
  try {
    report = evaluate(data.demos, vs, cfg.eval);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("eval: ") + e.what());
  }
  const auto p = provenance(cfg, cfg.eval.seed);
  const auto head = io::provenance_lines(p);
  std::vector<std::pair<std::string, std::string>> files = {{"report.csv", head + report_table(report)},
                                                            {"summary.txt", head + report_summary(report)}};
  if (vs.size() > 1) files.emplace_back("significance.csv", head + significance_table(report));
  io::write_files(out, files);
  std::cout << report_summary(report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Bayesian Interaction Primitives with sparse force channels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic hug dataset");
  std::optional<std::size_t> demos;
  std::string synth_out;
  add_common(synth, common, false);
  synth->add_option("--demos", demos, "number of demonstrations (default 121)")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "fit a model variant to a dataset");
  std::string dataset, variant = "group-ols", model_out;
  add_common(train, common, true);
  train->add_option("--dataset", dataset, "dataset directory or manifest")->required();
  train->add_option("--variant", variant, "all, mifs, group or group-ols")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "mifs", "group", "group-ols"}));
  train->add_option("--out", model_out, "output model file")->required();

  auto* infer = app.add_subcommand("infer", "run one filtering session and write its trace");
  std::string model_path, frames_path, edge_case, trace_out;
  double look_ahead = 0.0;
  add_common(infer, common, false);
  infer->add_option("--model", model_path, "trained model file")->required();
  auto* frames_opt = infer->add_option("--frames", frames_path, "observation table; absent columns and empty cells are masked");
  auto* edge_opt = infer->add_option("--edge-case", edge_case, "scripted scenario instead of a frames table")
                       ->check(CLI::IsMember({"do-nothing", "delay-before-hug", "delay-after-raise", "hug-air", "hug-no-contact"}));
  frames_opt->excludes(edge_opt);
  infer->add_option("--look-ahead", look_ahead, "phase offset for decoding")->capture_default_str();
  infer->add_option("--out", trace_out, "output trace table")->required();

  auto* eval = app.add_subcommand("eval", "cross-validate model variants");
  std::vector<std::string> variants;
  std::optional<std::size_t> folds;
  std::vector<double> look_aheads;
  std::optional<unsigned> threads;
  std::string eval_out;
  add_common(eval, common, true);
  eval->add_option("--dataset", dataset, "dataset directory or manifest")->required();
  eval->add_option("--variant", variants, "variants to compare (default: all four)")
      ->delimiter(',')
      ->check(CLI::IsMember({"all", "mifs", "group", "group-ols"}));
  eval->add_option("--folds", folds, "cross-validation folds (default 10)")->check(CLI::Range(2, 1000));
  eval->add_option("--look-ahead", look_aheads, "look-ahead values (default 0,0.05,0.1)")->delimiter(',');
  eval->add_option("--threads", threads, "worker threads, 0 = hardware (default 0)");
  eval->add_option("--out", eval_out, "output report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(common, demos, synth_out);
    if (*train) return cmd_train(common, dataset, variant, model_out);
    if (*infer) return cmd_infer(common, model_path, frames_path, edge_case, look_ahead, trace_out);
    if (*eval) return cmd_eval(common, dataset, variants, folds, look_aheads, threads, eval_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
