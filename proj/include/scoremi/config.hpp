#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoremi/channels.hpp"
#include "scoremi/dsm.hpp"
#include "scoremi/error.hpp"
#include "scoremi/rng.hpp"

namespace scoremi {

// Experiment configuration, read from a JSON document with the sections
//   channel, grid, network, train, fisher, baseline, output, tail.
// Only channel and grid are mandatory; everything else has defaults matching
// the reference Gaussian setup (3x128 SiLU, 300 iterations of 4096 samples,
// lr 1e-3, clip 1.0, 100000 Monte Carlo samples).
struct ExperimentConfig {
  struct Channel {
    int n = 4;
    PriorKind prior = PriorKind::gaussian_iso;
    double power = 1.0;
    FrontEndKind frontend = FrontEndKind::identity;
    std::optional<std::uint64_t> matrix_seed;
    std::string matrix_file;
  } channel;

  struct Grid {
    double t_min = 0.005;
    double t_max = 200.0;
    int points = 10;
  } grid;

  ArchConfig network;

  enum class Scheme { per_t, conditional };
  enum class Weight { t, none };
  struct Train {
    Scheme scheme = Scheme::per_t;
    long iterations = 300;
    long steps = 20000;
    long batch_size = 4096;
    double lr = 1e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::optional<double> t_lo;
    std::optional<double> t_hi;
    Weight weight = Weight::t;
  } train;

  struct Fisher {
    long mc_samples = 100000;
  } fisher;

  struct Baseline {
    bool kde = false;
    long kde_n = 20000;
  } baseline;

  struct Output {
    std::string directory = "out";
    std::string cache_dir;  // empty: <directory>/checkpoints
    bool verbose = false;
  } output;

  enum class TraceSource { automatic, explicit_value, cov_w, cov_x };
  struct Tail {
    bool enabled = true;
    TraceSource source = TraceSource::automatic;
    std::optional<double> value;
    long samples = 100000;
  } tail;

  std::string cache_directory() const {
    return output.cache_dir.empty() ? output.directory + "/checkpoints" : output.cache_dir;
  }
};

namespace detail {

inline const char* to_string(PriorKind k) { return k == PriorKind::bpsk ? "bpsk" : "gaussian_iso"; }

inline const char* to_string(FrontEndKind k) {
  switch (k) {
    case FrontEndKind::linear: return "linear";
    case FrontEndKind::tanh_linear: return "tanh_linear";
    default: return "identity";
  }
}

inline const char* to_string(ExperimentConfig::TraceSource s) {
  switch (s) {
    case ExperimentConfig::TraceSource::explicit_value: return "explicit";
    case ExperimentConfig::TraceSource::cov_w: return "cov_w";
    case ExperimentConfig::TraceSource::cov_x: return "cov_x";
    default: return "auto";
  }
}

// Reads one section with strict key checking.
class SectionReader {
public:
  SectionReader(const nlohmann::json& root, const std::string& name, bool required) : name_(name) {
    if (!root.contains(name)) {
      if (required) throw ConfigError("config: missing section '" + name + "'");
      return;
    }
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError("config: section '" + name + "' must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: field '" + field(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key) || node_->at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  template <typename Fn>
  void read_enum(const std::string& key, Fn&& parse) {
    std::string s;
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    read(key, s);
    if (!parse(s)) throw ConfigError("config: field '" + field(key) + "' has invalid value '" + s + "'");
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [k, v] : node_->items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + field(k) + "'");
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

private:
  std::string name_;
  const nlohmann::json* node_ = nullptr;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("config: field '" + field + "' " + what);
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  using detail::require;
  require(c.channel.n >= 1, "channel.n", "must be positive");
  require(c.channel.power > 0.0, "channel.power", "must be positive");
  require(c.grid.t_min > 0.0, "grid.t_min", "must be positive");
  require(c.grid.t_max > c.grid.t_min, "grid.t_max", "must exceed grid.t_min");
  require(c.grid.points >= 2, "grid.points", "must be at least 2");
  require(!c.network.hidden.empty(), "network.hidden", "must list at least one layer");
  for (int h : c.network.hidden) require(h >= 1, "network.hidden", "widths must be positive");
  require(c.network.embed_frequencies >= 1, "network.embed_frequencies", "must be positive");
  require(c.network.embed_scale > 0.0, "network.embed_scale", "must be positive");
  require(c.train.iterations >= 0, "train.iterations", "must be non-negative");
  require(c.train.steps >= 0, "train.steps", "must be non-negative");
  require(c.train.batch_size >= 1, "train.batch_size", "must be positive");
  require(c.train.lr > 0.0, "train.lr", "must be positive");
  require(c.train.clip_norm > 0.0, "train.clip_norm", "must be positive");
  if (c.train.t_lo) require(*c.train.t_lo > 0.0, "train.t_lo", "must be positive");
  if (c.train.t_lo && c.train.t_hi) require(*c.train.t_hi > *c.train.t_lo, "train.t_hi", "must exceed train.t_lo");
  require(c.fisher.mc_samples >= 2, "fisher.mc_samples", "must be at least 2");
  require(c.baseline.kde_n >= 2, "baseline.kde_n", "must be at least 2");
  require(!c.output.directory.empty(), "output.directory", "must not be empty");
  require(c.tail.samples >= 2, "tail.samples", "must be at least 2");
  if (c.tail.source == ExperimentConfig::TraceSource::explicit_value)
    require(c.tail.value.has_value() && *c.tail.value >= 0.0, "tail.value",
            "must be a nonnegative number when tail.source is 'explicit'");
  if (c.tail.value) require(*c.tail.value >= 0.0, "tail.value", "must be nonnegative");
}

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> sections{"channel", "grid",     "network", "train",
                                              "fisher",  "baseline", "output",  "tail"};
  for (const auto& [k, v] : root.items())
    if (!sections.count(k)) throw ConfigError("config: unknown key '" + k + "'");

  ExperimentConfig c;
  {
    detail::SectionReader r(root, "channel", true);
    r.read("n", c.channel.n);
    r.read("power", c.channel.power);
    r.read_enum("prior", [&](const std::string& s) {
      if (s == "gaussian_iso") c.channel.prior = PriorKind::gaussian_iso;
      else if (s == "bpsk") c.channel.prior = PriorKind::bpsk;
      else return false;
      return true;
    });
    r.read_enum("frontend", [&](const std::string& s) {
      if (s == "identity") c.channel.frontend = FrontEndKind::identity;
      else if (s == "linear") c.channel.frontend = FrontEndKind::linear;
      else if (s == "tanh_linear") c.channel.frontend = FrontEndKind::tanh_linear;
      else return false;
      return true;
    });
    r.read("matrix_seed", c.channel.matrix_seed);
    r.read("matrix_file", c.channel.matrix_file);
    r.finish();
  }
  {
    detail::SectionReader r(root, "grid", true);
    r.read("t_min", c.grid.t_min);
    r.read("t_max", c.grid.t_max);
    r.read("points", c.grid.points);
    r.finish();
  }
  {
    detail::SectionReader r(root, "network", false);
    r.read("hidden", c.network.hidden);
    r.read("embed_frequencies", c.network.embed_frequencies);
    r.read("embed_scale", c.network.embed_scale);
    r.finish();
  }
  {
    detail::SectionReader r(root, "train", false);
    r.read_enum("scheme", [&](const std::string& s) {
      if (s == "per_t") c.train.scheme = ExperimentConfig::Scheme::per_t;
      else if (s == "conditional") c.train.scheme = ExperimentConfig::Scheme::conditional;
      else return false;
      return true;
    });
    r.read("iterations", c.train.iterations);
    r.read("steps", c.train.steps);
    r.read("batch_size", c.train.batch_size);
    r.read("lr", c.train.lr);
    r.read("clip_norm", c.train.clip_norm);
    r.read("seed", c.train.seed);
    r.read("t_lo", c.train.t_lo);
    r.read("t_hi", c.train.t_hi);
    r.read_enum("weight", [&](const std::string& s) {
      if (s == "t") c.train.weight = ExperimentConfig::Weight::t;
      else if (s == "none") c.train.weight = ExperimentConfig::Weight::none;
      else return false;
      return true;
    });
    r.finish();
  }
  {
    detail::SectionReader r(root, "fisher", false);
    r.read("mc_samples", c.fisher.mc_samples);
    r.finish();
  }
  {
    detail::SectionReader r(root, "baseline", false);
    r.read("kde", c.baseline.kde);
    r.read("kde_n", c.baseline.kde_n);
    r.finish();
  }
  {
    detail::SectionReader r(root, "output", false);
    r.read("directory", c.output.directory);
    r.read("cache_dir", c.output.cache_dir);
    r.read("verbose", c.output.verbose);
    r.finish();
  }
  {
    detail::SectionReader r(root, "tail", false);
    r.read("enabled", c.tail.enabled);
    r.read_enum("source", [&](const std::string& s) {
      using S = ExperimentConfig::TraceSource;
      if (s == "auto") c.tail.source = S::automatic;
      else if (s == "explicit") c.tail.source = S::explicit_value;
      else if (s == "cov_w") c.tail.source = S::cov_w;
      else if (s == "cov_x") c.tail.source = S::cov_x;
      else return false;
      return true;
    });
    r.read("value", c.tail.value);
    r.read("samples", c.tail.samples);
    r.finish();
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(root);
}

// The fully-defaulted configuration; parse_config(to_json(c)) == c.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["channel"] = {{"n", c.channel.n},
                  {"prior", detail::to_string(c.channel.prior)},
                  {"power", c.channel.power},
                  {"frontend", detail::to_string(c.channel.frontend)},
                  {"matrix_file", c.channel.matrix_file}};
  j["channel"]["matrix_seed"] = c.channel.matrix_seed ? nlohmann::json(*c.channel.matrix_seed) : nlohmann::json();
  j["grid"] = {{"t_min", c.grid.t_min}, {"t_max", c.grid.t_max}, {"points", c.grid.points}};
  j["network"] = {{"hidden", c.network.hidden},
                  {"embed_frequencies", c.network.embed_frequencies},
                  {"embed_scale", c.network.embed_scale}};
  j["train"] = {{"scheme", c.train.scheme == ExperimentConfig::Scheme::per_t ? "per_t" : "conditional"},
                {"iterations", c.train.iterations},
                {"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"clip_norm", c.train.clip_norm},
                {"seed", c.train.seed},
                {"weight", c.train.weight == ExperimentConfig::Weight::t ? "t" : "none"}};
  j["train"]["t_lo"] = c.train.t_lo ? nlohmann::json(*c.train.t_lo) : nlohmann::json();
  j["train"]["t_hi"] = c.train.t_hi ? nlohmann::json(*c.train.t_hi) : nlohmann::json();
  j["fisher"] = {{"mc_samples", c.fisher.mc_samples}};
  j["baseline"] = {{"kde", c.baseline.kde}, {"kde_n", c.baseline.kde_n}};
  j["output"] = {{"directory", c.output.directory}, {"cache_dir", c.output.cache_dir}, {"verbose", c.output.verbose}};
  j["tail"] = {{"enabled", c.tail.enabled}, {"source", detail::to_string(c.tail.source)}, {"samples", c.tail.samples}};
  j["tail"]["value"] = c.tail.value ? nlohmann::json(*c.tail.value) : nlohmann::json();
  return j;
}

inline std::string hex_digest(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

// Digest of everything that affects results; output locations are excluded.
inline std::string config_digest(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output");
  return hex_digest(j.dump());
}

}  // namespace scoremi
