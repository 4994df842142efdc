// scoremi: score-based mutual information estimation for Gaussian channels.
//
//   scoremi estimate     --config cfg.json [--seed N] [--out DIR] [--no-tail] [--verbose]
//   scoremi validate     ...   (adds closed-form / quadrature reference columns)
//   scoremi fisher       ...   (Fisher information curve only)
//   scoremi kde-baseline ...   (KDE leave-one-out MI only)
//
// Exit codes: 0 success, 1 configuration error, 2 numeric/training error, 3 IO error.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "scoremi/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_tail = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment configuration (JSON)")->required();
  cmd->add_option("--seed", f.seed, "master seed, overrides train.seed");
  cmd->add_option("--out", f.out, "output directory, overrides output.directory");
  cmd->add_flag("--no-tail", f.no_tail, "disable the tail correction beyond t_max");
  cmd->add_flag("--verbose", f.verbose, "write loss_trace.csv and progress to stderr");
}

void print_summary(const scoremi::ExperimentReport& r, const std::string& dir) {
  std::cout << r.command << ": " << r.rows.size() << " grid points written to " << dir << "\n";
  for (const char* key : {"fisher_rel_err", "mi_rel_err", "mi_vs_kde_rel_dev", "kde_rel_err"}) {
    if (!r.summary.contains(key) || r.summary[key].is_null()) continue;
    std::printf("  %-18s median %.4f  p90 %.4f\n", key, r.summary[key]["median"].get<double>(),
                r.summary[key]["p90"].get<double>());
  }
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates multi-megabyte activations every step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Score-based mutual information estimation for Gaussian-noise channels"};
  app.require_subcommand(1);

  using Runner = std::function<scoremi::ExperimentReport(const scoremi::ExperimentConfig&)>;
  const std::map<std::string, std::pair<std::string, Runner>> commands{
      {"estimate", {"train, estimate Fisher information and integrate MI", scoremi::run_estimate}},
      {"validate", {"estimate and compare against the channel's reference values", scoremi::run_validate}},
      {"fisher", {"Fisher information curve only", scoremi::run_fisher}},
      {"kde-baseline", {"KDE leave-one-out MI baseline only", scoremi::run_kde_baseline}},
  };
  std::map<std::string, CommonFlags> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    subs[name] = app.add_subcommand(name, entry.first);
    add_common(subs[name], flags[name]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    const CommonFlags& f = flags[name];
    try {
      scoremi::ExperimentConfig cfg = scoremi::load_config(f.config);
      if (f.seed) cfg.train.seed = *f.seed;
      if (!f.out.empty()) cfg.output.directory = f.out;
      if (f.no_tail) cfg.tail.enabled = false;
      if (f.verbose) cfg.output.verbose = true;
      const scoremi::ExperimentReport report = commands.at(name).second(cfg);
      scoremi::write_report(report, cfg.output.directory);
      print_summary(report, cfg.output.directory);
      return 0;
    } catch (const scoremi::Error& e) {
      std::cerr << "scoremi " << name << ": " << e.what() << "\n";
      return scoremi::exit_code(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "scoremi " << name << ": " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
