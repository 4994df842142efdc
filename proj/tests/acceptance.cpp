// Acceptance suite. One line per criterion:
//
//   [PASS] criterion N: <what> | <measured> (<threshold>)
//
// Usage: scoremi_acceptance [--criterion N]... [--workdir DIR]
// Without --criterion every criterion runs in order. Trained networks are
// cached under DIR/cache (criterion 10 uses its own fresh caches), so a
// rerun only repeats the evaluation. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "scoremi/pipeline.hpp"

using namespace scoremi;
namespace fs = std::filesystem;

namespace {

// Tolerances, fixed here and nowhere else.
constexpr double kC1PointTol = 0.005;
constexpr double kC1Seconds = 5.0;
constexpr double kC2MedianTol = 0.03;
constexpr double kC3MedianTol = 0.02;
constexpr double kC3NoTailP90Min = 0.10;
constexpr double kC4LowNoiseTol = 0.02;
constexpr double kC4MidNoiseTol = 0.05;
constexpr double kC5MedianTol = 0.03;
constexpr double kC6MedianTol = 0.07;
constexpr double kC7MedianTol = 0.10;
constexpr double kC8Tol = 0.03;
constexpr double kC9Seconds = 60.0;
constexpr double kC9GradTol = 1e-4;
constexpr double kC9LossFormTol = 1e-12;
constexpr double kC9RatioTol = 1e-12;
constexpr double kC9IdentityTol = 1e-10;
constexpr double kC9ReductionTol = 1e-12;
constexpr double kC9DerivativeTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string what;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.3f%%", 100.0 * v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_workdir = "acceptance";

ExperimentConfig base_config(int n, double t_min, double t_max, int points) {
  ExperimentConfig c;
  c.channel.n = n;
  c.grid = {t_min, t_max, points};
  c.output.directory = (g_workdir / "runs").string();
  c.output.cache_dir = (g_workdir / "cache").string();
  return c;
}

void save(const std::string& name, const ExperimentReport& r) {
  write_report(r, (g_workdir / "runs" / name).string());
}

std::vector<double> mi_errors(const ExperimentReport& r) {
  std::vector<double> e;
  for (const auto& row : r.rows) e.push_back(*row.mi_rel_err);
  return e;
}

// 1. Trapezoid + tail with the analytic Gaussian score, Fisher by Monte Carlo.
Outcome criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = base_config(4, 0.005, 200.0, 10);
  const ChannelModel model = build_channel(cfg);
  const NoiseGrid grid = make_grid(0.005, 200.0, 10);
  const FisherCurve curve = fisher_curve(cfg, model, grid, [](std::size_t) { return gaussian_score(1.0); });
  const MICurve mi = integrate_mi(curve, 4, tail_correction(4.0 * 1.0, grid.t_max));
  const double elapsed = seconds_since(t0);
  std::vector<double> err;
  for (std::size_t k = 0; k < grid.size(); ++k)
    err.push_back(relative_error(mi.mi_hat[k], gaussian_closed_forms(4, 1.0, grid[k]).mi));
  const double worst = *std::max_element(err.begin(), err.end());
  std::size_t over = 0;
  for (double e : err) over += e > kC1PointTol;
  return {worst <= kC1PointTol && elapsed < kC1Seconds,
          "integrator isolation, analytic score, n=4, M=10 on [0.005, 200]",
          "max " + pct(worst) + ", median " + pct(median(err)) + ", " + std::to_string(over) +
              "/10 points over (each <= " + pct(kC1PointTol) + "); " + fmt("%.2f s", elapsed) + " (< 5 s)"};
}

// 2. Fisher information from Scheme A networks, n = 4, 8, 16.
Outcome criterion_2() {
  bool pass = true;
  std::string detail;
  for (int n : {4, 8, 16}) {
    ExperimentConfig cfg = base_config(n, 0.005, 200.0, 10);
    const ExperimentReport r = run_fisher(cfg);
    save("c2_n" + std::to_string(n), r);
    const double med = r.summary["fisher_rel_err"]["median"].get<double>();
    pass = pass && med <= kC2MedianTol;
    detail += (detail.empty() ? "" : ", ") + std::string("n=") + std::to_string(n) + " median " + pct(med);
  }
  return {pass, "Fisher via DSM (Scheme A), Gaussian n=4,8,16", detail + " (each <= " + pct(kC2MedianTol) + ")"};
}

// 3. MI from Scheme A, Gaussian n=4, with and without the tail term.
Outcome criterion_3() {
  ExperimentConfig cfg = base_config(4, 0.005, 200.0, 10);
  const ExperimentReport with_tail = run_validate(cfg);
  save("c3_tail", with_tail);
  cfg.tail.enabled = false;
  const ExperimentReport no_tail = run_validate(cfg);
  save("c3_no_tail", no_tail);
  const double med = median(mi_errors(with_tail));
  const double p90 = percentile(mi_errors(no_tail), 90.0);
  return {med <= kC3MedianTol && p90 > kC3NoTailP90Min, "MI via DSM, Gaussian n=4, tail on/off",
          "median with tail " + pct(med) + " (<= " + pct(kC3MedianTol) + "); p90 without tail " + pct(p90) + " (> " +
              pct(kC3NoTailP90Min) + ")"};
}

// 4. BPSK against the quadrature oracle.
Outcome criterion_4() {
  ExperimentConfig cfg = base_config(1, 0.005, 50.0, 12);
  cfg.channel.prior = PriorKind::bpsk;
  cfg.train.iterations = 1000;
  cfg.fisher.mc_samples = 200000;
  const ExperimentReport r = run_validate(cfg);
  save("c4_bpsk", r);
  std::vector<double> low, mid;
  for (const auto& row : r.rows) {
    if (row.t < 0.1) low.push_back(*row.mi_rel_err);
    else if (row.t < 5.0) mid.push_back(*row.mi_rel_err);
  }
  const double ml = median(low), mm = median(mid);
  return {ml <= kC4LowNoiseTol && mm <= kC4MidNoiseTol, "BPSK n=1, M=12 on [0.005, 50], vs quadrature",
          "t<0.1 median " + pct(ml) + " (<= " + pct(kC4LowNoiseTol) + ", " + std::to_string(low.size()) +
              " pts); 0.1<=t<5 median " + pct(mm) + " (<= " + pct(kC4MidNoiseTol) + ", " + std::to_string(mid.size()) +
              " pts)"};
}

// 5. Linear Gaussian channel with a random orthogonal front-end.
Outcome criterion_5() {
  ExperimentConfig cfg = base_config(4, 0.005, 50.0, 10);
  cfg.channel.frontend = FrontEndKind::linear;
  cfg.train.batch_size = 8192;
  const ExperimentReport r = run_validate(cfg);
  save("c5_linear", r);
  const double med = median(mi_errors(r));
  return {med <= kC5MedianTol, "linear orthogonal front-end, n=4, M=10 on [0.005, 50]",
          "median " + pct(med) + " (<= " + pct(kC5MedianTol) + ")"};
}

// 6. tanh front-end against the KDE-LOO baseline.
Outcome criterion_6() {
  ExperimentConfig cfg = base_config(4, 0.005, 50.0, 12);
  cfg.channel.frontend = FrontEndKind::tanh_linear;
  cfg.train.iterations = 400;
  cfg.train.batch_size = 8192;
  cfg.baseline.kde = true;
  cfg.baseline.kde_n = 20000;
  const ExperimentReport r = run_estimate(cfg);
  save("c6_tanh", r);
  const double med = r.summary["mi_vs_kde_rel_dev"]["median"].get<double>();
  return {med <= kC6MedianTol, "tanh(A x) front-end, n=4, M=12, vs KDE-LOO N=20000",
          "median deviation " + pct(med) + " (<= " + pct(kC6MedianTol) + ")"};
}

// 7. One noise-conditional network (Scheme B).
Outcome criterion_7() {
  ExperimentConfig cfg = base_config(4, 0.005, 50.0, 12);
  cfg.train.scheme = ExperimentConfig::Scheme::conditional;
  cfg.train.steps = 20000;
  const ExperimentReport r = run_validate(cfg);
  save("c7_conditional", r);
  const double med = median(mi_errors(r));
  return {med <= kC7MedianTol, "Scheme B, Gaussian n=4, 20000 steps, 12 points on [0.005, 50]",
          "median " + pct(med) + " (<= " + pct(kC7MedianTol) + ")"};
}

// 8. KDE-LOO on the scalar Gaussian channel.
Outcome criterion_8() {
  ExperimentConfig cfg = base_config(1, 0.1, 10.0, 3);
  cfg.baseline.kde_n = 20000;
  const ExperimentReport r = run_kde_baseline(cfg);
  save("c8_kde", r);
  bool pass = true;
  std::string detail;
  for (const auto& row : r.rows) {
    const double e = relative_error(*row.kde_mi, 0.5 * std::log1p(1.0 / row.t));
    pass = pass && e <= kC8Tol;
    detail += (detail.empty() ? "" : ", ") + fmt("t=%g ", row.t) + pct(e);
  }
  return {pass, "KDE-LOO, Gaussian n=1, N=20000", detail + " (each <= " + pct(kC8Tol) + ")"};
}

// 9. Property checks.
Outcome criterion_9() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  std::string detail;
  auto check = [&](const std::string& name, double value, double tol) {
    const bool ok = value <= tol;
    if (!ok) failed.push_back(name);
    detail += (detail.empty() ? "" : ", ") + name + fmt(" %.1e", value);
  };

  ChannelModel g4;
  g4.prior = {PriorKind::gaussian_iso, 1.0, 4};
  ChannelModel g2;
  g2.prior = {PriorKind::gaussian_iso, 1.0, 2};

  {  // analytic gradient vs central differences, 2-8-8-2 net (122 parameters)
    Rng rng(1);
    ScoreNetwork net = ScoreNetwork::initialized({2, 8, 8, 2}, rng);
    const SampleBatch b = forward_channel(g2, 0.5, 32, rng);
    const Matrix residual = (b.y - b.w) / b.t;
    BatchLoss loss = [&](const Matrix& out, Matrix& d) {
      d = (2.0 / static_cast<double>(out.rows())) * (out + residual);
      return (out + residual).rowwise().squaredNorm().mean();
    };
    const auto analytic = loss_gradients(net, b.y, std::nullopt, loss).grads.flatten();
    auto theta = net.params().flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double keep = theta[i], h = 1e-5;
      auto eval = [&](double v) {
        theta[i] = v;
        net.params().assign(theta);
        return (net.forward_batch(b.y) + residual).rowwise().squaredNorm().mean();
      };
      const double fd = (eval(keep + h) - eval(keep - h)) / (2.0 * h);
      theta[i] = keep;
      worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6}));
    }
    net.params().assign(theta);
    check("gradient", worst, kC9GradTol);
  }
  {  // residual vs epsilon form of the DSM loss
    Rng rng(2);
    const auto net = std::make_shared<const ScoreNetwork>(ScoreNetwork::initialized({4, 32, 32, 4}, rng));
    double worst = 0.0;
    for (double t : {0.005, 1.0, 200.0}) {
      const SampleBatch b = forward_channel(g4, t, 4096, rng);
      const double r = dsm_loss(network_score(net), b), e = dsm_loss_eps_form(network_score(net), b);
      worst = std::max(worst, std::abs(r - e) / std::abs(r));
    }
    check("loss-forms", worst, kC9LossFormTol);
  }
  {  // geometric grid: exact ends, constant ratio
    const NoiseGrid g = make_grid(0.005, 200.0, 10);
    double dev = (g[0] == 0.005 && g[9] == 200.0) ? 0.0 : 1.0;
    const double ratio = std::pow(40000.0, 1.0 / 9.0);
    for (std::size_t k = 0; k + 1 < g.size(); ++k) dev = std::max(dev, std::abs(g[k + 1] / g[k] - ratio) / ratio);
    check("grid", dev, kC9RatioTol);
  }
  {  // mmse + t^2 J = n t
    double worst = 0.0;
    for (double t : make_grid(0.005, 200.0, 10).points) {
      const auto f = gaussian_closed_forms(4, 1.0, t);
      worst = std::max(worst, std::abs(f.mmse + t * t * f.fisher - 4.0 * t) / (4.0 * t));
    }
    check("mmse-identity", worst, kC9IdentityTol);
  }
  {  // Tweedie with the analytic score at P = t = 1 is y / 2
    Rng rng(3);
    const SampleBatch b = forward_channel(g4, 1.0, 1000, rng);
    check("tweedie", (tweedie_posterior_mean(gaussian_score(1.0), b.y, 1.0) - 0.5 * b.y).cwiseAbs().maxCoeff(), 1e-15);
  }
  {  // MI nonincreasing along the grid, with a noisy (Monte Carlo) Fisher curve
    ExperimentConfig cfg = base_config(4, 0.005, 200.0, 10);
    cfg.fisher.mc_samples = 2000;
    const NoiseGrid g = make_grid(0.005, 200.0, 10);
    const FisherCurve c = fisher_curve(cfg, g4, g, [](std::size_t) { return gaussian_score(1.0); });
    const MICurve mi = integrate_mi(c, 4, 0.01);
    double rise = 0.0;
    for (std::size_t k = 0; k + 1 < g.size(); ++k) rise = std::max(rise, mi.mi_hat[k + 1] - mi.mi_hat[k]);
    check("monotone", rise, 0.0);
  }
  {  // orthogonal A: linear closed form equals the isotropic one
    Rng rng(4);
    const Matrix a = random_orthogonal(4, rng);
    double worst = 0.0;
    for (double t : make_grid(0.005, 200.0, 10).points)
      worst = std::max(worst, relative_error(linear_closed_forms(a, 1.0, t).mi, gaussian_closed_forms(4, 1.0, t).mi));
    check("orthogonal-reduction", worst, kC9ReductionTol);
  }
  {  // dI/dt = J/2 - n/(2t) by central differences
    double worst = 0.0;
    for (double t : make_grid(0.005, 200.0, 10).points) {
      const double h = 1e-4 * t;
      const double d = (gaussian_closed_forms(4, 1.0, t + h).mi - gaussian_closed_forms(4, 1.0, t - h).mi) / (2 * h);
      const double expected = 0.5 * gaussian_closed_forms(4, 1.0, t).fisher - 2.0 / t;
      worst = std::max(worst, std::abs(d - expected) / std::abs(expected));
    }
    check("dI/dt", worst, kC9DerivativeTol);
  }
  const double elapsed = seconds_since(t0);
  std::string bad;
  for (const auto& f : failed) bad += " " + f;
  return {failed.empty() && elapsed < kC9Seconds, "property suite",
          detail + fmt("; %.1f s (< 60 s)", elapsed) + (bad.empty() ? "" : "; failed:" + bad)};
}

// 10. Two complete runs from scratch give the same curve.csv bytes.
Outcome criterion_10() {
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = g_workdir / ("c10_run" + std::to_string(i));
    fs::remove_all(dir);
    ExperimentConfig cfg = base_config(4, 0.005, 200.0, 10);
    cfg.output.directory = dir.string();
    cfg.output.cache_dir.clear();  // fresh cache inside the run directory
    cfg.train.iterations = 60;
    cfg.train.batch_size = 1024;
    cfg.fisher.mc_samples = 20000;
    cfg.baseline.kde = true;
    cfg.baseline.kde_n = 1000;
    write_report(run_validate(cfg), dir.string());
    std::ifstream in(dir / "curve.csv", std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[i] = s.str();
  }
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, "reproducibility, two fresh runs of the same config and seed",
          same ? "curve.csv identical (" + std::to_string(files[0].size()) + " bytes)" : "curve.csv differs"};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  const std::map<int, std::function<Outcome()>> all{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4}, {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) {
      selected.insert(std::atoi(argv[++i]));
    } else if (!std::strcmp(argv[i], "--workdir") && i + 1 < argc) {
      g_workdir = argv[++i];
    } else {
      std::cerr << "usage: scoremi_acceptance [--criterion N]... [--workdir DIR]\n";
      return 64;
    }
  }
  if (selected.empty())
    for (const auto& [k, fn] : all) selected.insert(k);

  int failures = 0;
  for (int k : selected) {
    const auto it = all.find(k);
    if (it == all.end()) {
      std::cerr << "no criterion " << k << "\n";
      return 64;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, "error", e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] criterion %d: %s | %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", k, o.what.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures;
}
