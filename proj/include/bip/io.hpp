#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bip/eval.hpp"
#include "bip/model.hpp"
#include "bip/synth.hpp"
#include "bip/train.hpp"

namespace bip::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kModelVersion = "bip-model/1";
inline constexpr const char* kDatasetVersion = "bip-dataset/1";

// ---------------------------------------------------------------------------
// Numbers

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

/// FNV-1a, used to fingerprint configurations.
inline std::string hash_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Identifies where an artifact came from; written into every output file.
struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Writes a set of files into `dir` so that either all of them appear or none
/// do. Each file goes to a temporary name first and is renamed into place;
/// on failure everything written so far, and the directory if this call
/// created it, is removed.
inline void write_files(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  std::error_code ec;
  const bool existed = fs::exists(dir, ec);
  std::vector<fs::path> done;
  std::vector<fs::path> temps;
  const auto cleanup = [&] {
    std::error_code ignore;
    for (const auto& p : temps) fs::remove(p, ignore);
    for (const auto& p : done) fs::remove(p, ignore);
    if (!existed) fs::remove(dir, ignore);
  };
  try {
    if (!existed && !fs::create_directories(dir, ec))
      throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    for (const auto& [name, content] : files) {
      const fs::path tmp = dir / ("." + name + ".tmp");
      temps.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      out.close();
      if (!out) throw IoError("write failed for '" + (dir / name).string() + "'");
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      const fs::path dst = dir / files[i].first;
      fs::rename(temps[i], dst, ec);
      if (ec) throw IoError("cannot write '" + dst.string() + "': " + ec.message());
      done.push_back(dst);
    }
    temps.clear();
  } catch (...) {
    cleanup();
    throw;
  }
}

/// Single-file variant of write_files.
inline void write_file(const fs::path& path, const std::string& content) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("directory '" + dir.string() + "' does not exist");
  write_files(dir, {{path.filename().string(), content}});
}

// ---------------------------------------------------------------------------
// Tables

inline std::string provenance_lines(const Provenance& p) {
  return "# seed=" + std::to_string(p.seed) + "\n# config=" + p.config_hash + "\n";
}

/// Rows are timesteps, columns are channels in layout order.
inline std::string write_table(const Interaction& in, const Provenance& p) {
  std::string s = provenance_lines(p);
  const auto names = in.layout.names();
  for (std::size_t d = 0; d < names.size(); ++d) s += (d ? "," : "") + names[d];
  s += '\n';
  for (Eigen::Index t = 0; t < in.samples.cols(); ++t) {
    for (Eigen::Index d = 0; d < in.samples.rows(); ++d) {
      if (d) s += ',';
      s += format_double(in.samples(d, t));
    }
    s += '\n';
  }
  return s;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

/// Header plus rows of optional values (empty cell = missing).
struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<double>>> rows;
};

inline RawTable parse_table(const std::string& text, const std::string& where) {
  RawTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto cells = split(line);
    if (!have_header) {
      t.header = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw DataError(where + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                      " values, found " + std::to_string(cells.size()));
    std::vector<std::optional<double>> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        row.push_back(parse_double(cells[c]));
      } catch (const DataError& e) {
        throw DataError(where + ":" + std::to_string(lineno) + ": column '" + t.header[c] + "': " + e.what());
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw DataError(where + ": missing header row");
  return t;
}

inline Interaction read_table(const fs::path& path, const SensorLayout& layout, double timestep) {
  const auto where = path.string();
  const auto t = parse_table(read_text(path), where);
  if (t.header != layout.names()) throw DataError(where + ": header does not match the manifest channel order");
  Interaction in;
  in.layout = layout;
  in.timestep = timestep;
  in.samples.resize(static_cast<Eigen::Index>(layout.size()), static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < layout.size(); ++c) {
      if (!t.rows[r][c]) throw DataError(where + ": empty cell in row " + std::to_string(r) + ", column '" + layout[c].name + "'");
      in.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = *t.rows[r][c];
    }
  auto report = check_interaction(in);
  if (!report.ok()) throw DataError(where + ": " + report.message());
  return in;
}

// ---------------------------------------------------------------------------
// Layouts and configs as JSON

inline json to_json(const SensorLayout& l) {
  json a = json::array();
  for (const auto& c : l) {
    json o = {{"name", c.name}, {"modality", to_string(c.modality)}, {"role", to_string(c.role)}};
    o["group"] = c.group_id ? json(*c.group_id) : json(nullptr);
    a.push_back(std::move(o));
  }
  return a;
}

inline SensorLayout layout_from_json(const json& a) {
  if (!a.is_array()) throw DataError("layout: expected an array of channels");
  std::vector<ChannelSpec> specs;
  for (const auto& o : a) {
    ChannelSpec c;
    c.name = o.at("name").get<std::string>();
    c.modality = parse_modality(o.at("modality").get<std::string>());
    c.role = parse_role(o.at("role").get<std::string>());
    if (o.contains("group") && !o["group"].is_null()) c.group_id = o["group"].get<std::string>();
    specs.push_back(std::move(c));
  }
  return SensorLayout(std::move(specs));
}

/// Every tunable of the pipeline, loadable from one JSON config file.
struct PipelineConfig {
  synth::ScenarioConfig scenario;
  TrainOptions train;
  EvalOptions eval;
};

inline json to_json(const synth::ScenarioConfig& c) {
  return {{"n_joints", c.n_joints},           {"n_force_sensors", c.n_force_sensors},
          {"n_groups", c.n_groups},           {"n_pose", c.n_pose},
          {"n_informative", c.n_informative}, {"n_demos", c.n_demos},
          {"duration_min", c.duration_min},   {"duration_max", c.duration_max},
          {"contact_begin", c.contact_begin}, {"contact_end", c.contact_end},
          {"amplitude_min", c.amplitude_min}, {"amplitude_max", c.amplitude_max},
          {"warp", c.warp},                   {"active_probability", c.active_probability},
          {"peak_force", c.peak_force},       {"noise", c.noise},
          {"timestep", c.timestep},
          {"seed", c.seed}};
}

inline json to_json(const TrainOptions& o) {
  return {{"basis_per_channel", o.basis_per_channel},
          {"width_factor", o.width_factor},
          {"ridge", o.ridge},
          {"ols_candidates", o.ols_candidates},
          {"ols_tolerance", o.ols_tolerance},
          {"ols_grid", o.ols_grid},
          {"mi_bins", o.selection.bins},
          {"mi_threshold", o.selection.threshold},
          {"mi_permutations", o.selection.permutations},
          {"velocity_noise", o.velocity_noise},
          {"measurement_floor", o.measurement_floor},
          {"measurement_scale", o.measurement_scale}};
}

inline json to_json(const EvalOptions& o) {
  return {{"folds", o.folds}, {"look_aheads", o.look_aheads}, {"seed", o.seed}, {"threads", o.threads}};
}

inline json to_json(const PipelineConfig& c) {
  return {{"scenario", to_json(c.scenario)}, {"train", to_json(c.train)}, {"eval", to_json(c.eval)}};
}

namespace detail {

template <class T>
void assign(const json& section, const std::string& path, const char* key, T& dst) {
  if (!section.contains(key)) return;
  try {
    dst = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError("config: '" + path + "." + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& section, const json& known, const std::string& path) {
  if (!section.is_object()) throw DataError("config: '" + path + "' must be an object");
  for (const auto& [k, v] : section.items())
    if (!known.contains(k)) throw DataError("config: unknown key '" + path + "." + k + "'");
}

}  // namespace detail

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline PipelineConfig config_from_json(const json& j, PipelineConfig base = {}) {
  const json defaults = to_json(base);
  detail::reject_unknown(j, defaults, "config");
  using detail::assign;
  if (j.contains("scenario")) {
    const auto& s = j["scenario"];
    detail::reject_unknown(s, defaults["scenario"], "scenario");
    auto& c = base.scenario;
    assign(s, "scenario", "n_joints", c.n_joints);
    assign(s, "scenario", "n_force_sensors", c.n_force_sensors);
    assign(s, "scenario", "n_groups", c.n_groups);
    assign(s, "scenario", "n_pose", c.n_pose);
    assign(s, "scenario", "n_informative", c.n_informative);
    assign(s, "scenario", "n_demos", c.n_demos);
    assign(s, "scenario", "duration_min", c.duration_min);
    assign(s, "scenario", "duration_max", c.duration_max);
    assign(s, "scenario", "contact_begin", c.contact_begin);
    assign(s, "scenario", "contact_end", c.contact_end);
    assign(s, "scenario", "amplitude_min", c.amplitude_min);
    assign(s, "scenario", "amplitude_max", c.amplitude_max);
    assign(s, "scenario", "warp", c.warp);
    assign(s, "scenario", "active_probability", c.active_probability);
    assign(s, "scenario", "peak_force", c.peak_force);
    assign(s, "scenario", "noise", c.noise);
    assign(s, "scenario", "timestep", c.timestep);
    assign(s, "scenario", "seed", c.seed);
    c.validate();
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    detail::reject_unknown(s, defaults["train"], "train");
    auto& o = base.train;
    assign(s, "train", "basis_per_channel", o.basis_per_channel);
    assign(s, "train", "width_factor", o.width_factor);
    assign(s, "train", "ridge", o.ridge);
    assign(s, "train", "ols_candidates", o.ols_candidates);
    assign(s, "train", "ols_tolerance", o.ols_tolerance);
    assign(s, "train", "ols_grid", o.ols_grid);
    assign(s, "train", "mi_bins", o.selection.bins);
    assign(s, "train", "mi_threshold", o.selection.threshold);
    assign(s, "train", "mi_permutations", o.selection.permutations);
    assign(s, "train", "velocity_noise", o.velocity_noise);
    assign(s, "train", "measurement_floor", o.measurement_floor);
    assign(s, "train", "measurement_scale", o.measurement_scale);
  }
  if (j.contains("eval")) {
    const auto& s = j["eval"];
    detail::reject_unknown(s, defaults["eval"], "eval");
    auto& o = base.eval;
    assign(s, "eval", "folds", o.folds);
    assign(s, "eval", "look_aheads", o.look_aheads);
    assign(s, "eval", "seed", o.seed);
    assign(s, "eval", "threads", o.threads);
  }
  return base;
}

/// Parse errors carry the line and column of the offending character.
inline PipelineConfig load_config(const fs::path& path, PipelineConfig base = {}) {
  const auto text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw DataError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": config parse error");
  }
  return config_from_json(j, base);
}

inline std::string config_hash(const json& j) { return hash_hex(j.dump()); }

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  SensorLayout layout;
  double timestep = 1.0 / 30.0;
  std::vector<std::string> files;
  std::vector<Interaction> demos;
  Provenance provenance;
};

inline std::string demo_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "demo_%03zu.csv", i);
  return buf;
}

inline json ground_truth(const synth::Dataset& d) {
  const auto& h = d.hug;
  const auto& L = h.layout;
  json j;
  j["informative"] = json::array();
  for (auto ch : h.informative) j["informative"].push_back(L[ch].name);
  j["arm_drivers"] = json::array();
  for (std::size_t a = 0; a < h.arm_forces.size(); ++a) {
    j["arm_drivers"].push_back({{"channel", L[h.arm_forces[a]].name},
                                {"drivers", {L[h.drivers[a][0]].name, L[h.drivers[a][1]].name}},
                                {"coefficients", h.coefficients[a]}});
  }
  j["contact_window"] = {d.config.contact_begin, d.config.contact_end};
  j["demos"] = json::array();
  for (std::size_t i = 0; i < d.params.size(); ++i) {
    const auto& p = d.params[i];
    // Step range where the warped phase lies inside the contact window.
    std::size_t first = p.length, last = 0;
    for (std::size_t t = 0; t < p.length; ++t) {
      const double phi = synth::warp_phase(phase_of(t, p.length), p.warp_alpha);
      if (phi >= d.config.contact_begin && phi <= d.config.contact_end) {
        first = std::min(first, t);
        last = t;
      }
    }
    json demo = {{"file", demo_file_name(i)},
                 {"length", p.length},
                 {"amplitude", p.amplitude},
                 {"warp_alpha", p.warp_alpha},
                 {"height", p.height}};
    demo["contact_steps"] = first <= last ? json{first, last} : json(nullptr);
    j["demos"].push_back(std::move(demo));
  }
  return j;
}

/// Manifest, one table per demo and the ground-truth sidecar, as name/content pairs.
inline std::vector<std::pair<std::string, std::string>> dataset_files(const synth::Dataset& d, const Provenance& p) {
  std::vector<std::pair<std::string, std::string>> files;
  json m;
  m["format"] = kDatasetVersion;
  m["seed"] = p.seed;
  m["config_hash"] = p.config_hash;
  m["timestep"] = d.config.timestep;
  m["channels"] = to_json(d.hug.layout);
  m["demos"] = json::array();
  for (std::size_t i = 0; i < d.demos.size(); ++i) {
    m["demos"].push_back(demo_file_name(i));
    files.emplace_back(demo_file_name(i), write_table(d.demos[i], p));
  }
  json gt = ground_truth(d);
  gt["seed"] = p.seed;
  gt["config_hash"] = p.config_hash;
  files.emplace_back("ground_truth.json", gt.dump(2) + "\n");
  files.emplace_back("manifest.json", m.dump(2) + "\n");
  return files;
}

inline Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest = fs::is_directory(dir) ? dir / "manifest.json" : dir;
  const fs::path root = manifest.parent_path();
  json m;
  try {
    m = json::parse(read_text(manifest));
  } catch (const json::parse_error& e) {
    throw DataError(manifest.string() + ": malformed manifest: " + e.what());
  }
  Dataset d;
  try {
    if (m.value("format", std::string()) != kDatasetVersion)
      throw DataError("unsupported dataset format '" + m.value("format", std::string()) + "'");
    d.layout = layout_from_json(m.at("channels"));
    d.timestep = m.value("timestep", 1.0 / 30.0);
    d.provenance.seed = m.value("seed", std::uint64_t{0});
    d.provenance.config_hash = m.value("config_hash", std::string());
    for (const auto& f : m.at("demos")) d.files.push_back(f.get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  for (const auto& f : d.files) d.demos.push_back(read_table(root / f, d.layout, d.timestep));
  return d;
}

// ---------------------------------------------------------------------------
// Model files

inline json to_json(const BasisSpace& b) {
  json a = json::array();
  for (std::size_t d = 0; d < b.channels(); ++d) a.push_back({{"centers", b.channel(d).centers}, {"width", b.channel(d).width}});
  return a;
}

inline json to_json(const GroupMap& g) {
  json a = json::array();
  for (const auto& s : g.groups) a.push_back({{"id", s.id}, {"members", s.members}, {"output", s.output}});
  return a;
}

inline json to_json(const SelectionReport& r) {
  return {{"selected", r.selected},   {"increments", r.increments},       {"mi_trace", r.mi_trace},
          {"threshold", r.threshold}, {"bins", r.bins},                   {"stop_increment", r.stop_increment},
          {"stopped_on_threshold", r.stopped_on_threshold}};
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline std::string write_model(const TrainedModel& m, const TrainOptions& opt, const Provenance& p) {
  json j;
  j["version"] = kModelVersion;
  j["seed"] = p.seed;
  j["config_hash"] = p.config_hash;
  j["variant"] = m.variant.name;
  j["train_options"] = to_json(opt);
  j["source_layout"] = to_json(m.source_layout);
  j["groups"] = m.groups ? to_json(*m.groups) : json(nullptr);
  j["selection"] = m.selection ? to_json(*m.selection) : json(nullptr);
  j["layout"] = to_json(m.layout);
  j["basis"] = to_json(*m.basis);
  j["process_noise"] = {{"phase", m.process_noise.phase}, {"velocity", m.process_noise.velocity}, {"weight", m.process_noise.weight}};
  j["measurement_noise"] = to_vector(m.measurement_noise);
  j["lengths"] = m.lengths;
  j["weights"] = json::array();
  for (const auto& d : m.demos) j["weights"].push_back(to_vector(d.weights));
  return j.dump(1) + "\n";
}

struct ModelFile {
  TrainedModel model;
  Provenance provenance;
};

inline ModelFile read_model(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed model file: " + e.what());
  }
  const auto where = path.string() + ": ";
  if (!j.is_object() || !j.contains("version")) throw DataError(where + "missing format version");
  if (j["version"] != kModelVersion)
    throw DataError(where + "unsupported model version '" + j["version"].dump() + "', expected " + kModelVersion);
  ModelFile f;
  auto& m = f.model;
  try {
    f.provenance.seed = j.at("seed").get<std::uint64_t>();
    f.provenance.config_hash = j.at("config_hash").get<std::string>();
    m.variant = Variant::parse(j.at("variant").get<std::string>());
    m.source_layout = layout_from_json(j.at("source_layout"));
    m.layout = layout_from_json(j.at("layout"));
    if (!j.at("groups").is_null()) {
      GroupMap g;
      for (const auto& s : j["groups"])
        g.groups.push_back({s.at("id").get<std::string>(), s.at("members").get<std::vector<std::string>>(), s.at("output").get<std::string>()});
      resolve_groups(m.source_layout, g);
      m.groups = std::move(g);
    }
    if (!j.at("selection").is_null()) {
      const auto& s = j["selection"];
      SelectionReport r;
      r.selected = s.at("selected").get<std::vector<std::string>>();
      r.increments = s.at("increments").get<std::vector<double>>();
      r.mi_trace = s.at("mi_trace").get<std::vector<double>>();
      r.threshold = s.at("threshold").get<double>();
      r.bins = s.at("bins").get<int>();
      r.stop_increment = s.at("stop_increment").get<double>();
      r.stopped_on_threshold = s.at("stopped_on_threshold").get<bool>();
      for (const auto& name : r.selected)
        if (!m.layout.index_of(name)) throw DataError("selected channel '" + name + "' is not in the layout");
      m.selection = std::move(r);
    }
    std::vector<ChannelBasis> channels;
    for (const auto& c : j.at("basis")) channels.push_back({c.at("centers").get<std::vector<double>>(), c.at("width").get<double>()});
    if (channels.size() != m.layout.size()) throw DataError("basis has " + std::to_string(channels.size()) + " channels, layout has " + std::to_string(m.layout.size()));
    m.basis = std::make_shared<const BasisSpace>(std::move(channels));
    const auto& q = j.at("process_noise");
    m.process_noise = {q.at("phase").get<double>(), q.at("velocity").get<double>(), q.at("weight").get<double>()};
    const auto r = j.at("measurement_noise").get<std::vector<double>>();
    m.measurement_noise = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    if (r.size() != m.observed().size()) throw DataError("measurement noise does not match the observed channel count");
    m.lengths = j.at("lengths").get<std::vector<std::size_t>>();
    for (const auto& w : j.at("weights")) {
      const auto v = w.get<std::vector<double>>();
      if (v.size() != m.basis->total())
        throw DataError("weight vector of length " + std::to_string(v.size()) + " does not match basis total " + std::to_string(m.basis->total()));
      LatentModel lm;
      lm.weights = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      lm.basis = m.basis;
      m.demos.push_back(std::move(lm));
    }
    if (m.demos.size() != m.lengths.size()) throw DataError("one length per demonstration required");
  } catch (const json::exception& e) {
    throw DataError(where + e.what());
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// Runtime frames

/// Maps observations recorded in the model's source layout onto the model's
/// observed channels. Missing values are NaN in `samples` (D_source x T).
inline std::vector<ObservationFrame> frames_for_model(const TrainedModel& m, const Eigen::MatrixXd& samples, double timestep) {
  if (samples.rows() != static_cast<Eigen::Index>(m.source_layout.size()))
    throw DataError("frames: channel count does not match the model's source layout");
  const auto observed = m.observed();
  // Source rows feeding each observed model channel; grouped channels take the max of present members.
  std::vector<std::vector<std::size_t>> sources(observed.size());
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const auto& name = m.layout[observed[k]].name;
    bool found = false;
    if (m.groups)
      for (const auto& g : m.groups->groups)
        if (g.output == name) {
          for (const auto& member : g.members) sources[k].push_back(m.source_layout.require(member));
          found = true;
        }
    if (!found) sources[k].push_back(m.source_layout.require(name));
  }
  std::vector<ObservationFrame> frames;
  for (Eigen::Index t = 0; t < samples.cols(); ++t) {
    ObservationFrame f;
    f.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(observed.size()));
    f.mask.assign(observed.size(), false);
    f.step_duration = timestep;
    for (std::size_t k = 0; k < observed.size(); ++k)
      for (auto s : sources[k]) {
        const double v = samples(static_cast<Eigen::Index>(s), t);
        if (std::isnan(v)) continue;
        auto& dst = f.values(static_cast<Eigen::Index>(k));
        dst = f.mask[k] ? std::max(dst, v) : v;
        f.mask[k] = true;
      }
    frames.push_back(std::move(f));
  }
  return frames;
}

/// Frames table: header of source-layout channel names (any subset, any
/// order); absent columns and empty cells are masked.
inline Eigen::MatrixXd read_frames(const fs::path& path, const SensorLayout& source) {
  const auto where = path.string();
  const auto t = parse_table(read_text(path), where);
  std::vector<std::size_t> column_channel;
  std::vector<bool> seen(source.size(), false);
  for (const auto& name : t.header) {
    const auto idx = source.index_of(name);
    if (!idx) throw DataError(where + ": layout mismatch: channel '" + name + "' is not in the model layout");
    if (seen[*idx]) throw DataError(where + ": duplicate column '" + name + "'");
    seen[*idx] = true;
    column_channel.push_back(*idx);
  }
  if (t.rows.empty()) throw DataError(where + ": no frames");
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(source.size()), static_cast<Eigen::Index>(t.rows.size()),
                                                std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (!t.rows[r][c]) continue;
      const double v = *t.rows[r][c];
      if (!std::isfinite(v)) throw DataError(where + ": non-finite value in row " + std::to_string(r) + ", column '" + t.header[c] + "'");
      s(static_cast<Eigen::Index>(column_channel[c]), static_cast<Eigen::Index>(r)) = v;
    }
  return s;
}

// ---------------------------------------------------------------------------
// Traces

struct TraceRow {
  InferenceOutput output;
  Eigen::VectorXd innovation;  // per observed channel, NaN where masked
};

inline std::string write_trace(const TrainedModel& m, const std::vector<TraceRow>& rows, const Provenance& p) {
  std::string s = provenance_lines(p);
  s += "step,phase,phase_velocity,look_ahead";
  for (const auto& c : m.layout) s += "," + c.name;
  for (auto o : m.observed()) s += ",innov_" + m.layout[o].name;
  s += '\n';
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const auto& r = rows[t];
    s += std::to_string(t) + "," + format_double(r.output.phase) + "," + format_double(r.output.phase_velocity) + "," +
         format_double(r.output.look_ahead);
    for (Eigen::Index d = 0; d < r.output.decoded.size(); ++d) s += "," + format_double(r.output.decoded(d));
    for (Eigen::Index k = 0; k < r.innovation.size(); ++k) {
      s += ',';
      if (!std::isnan(r.innovation(k))) s += format_double(r.innovation(k));
    }
    s += '\n';
  }
  return s;
}

}  // namespace bip::io
