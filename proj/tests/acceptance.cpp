// Acceptance suite: one PASS/FAIL line per criterion A1-A9.
//
//   acceptance [--only A1,A3] [--known-failure A3]
//
// Exits 0 when every failing criterion is listed as a known failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "grad_cases.hpp"
#include "metric_fixtures.hpp"
#include "olva/experiment.hpp"
#include "olva/metrics.hpp"
#include "olva/ot.hpp"
#include "oracles.hpp"

using namespace olva;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// ---------------------------------------------------------------- A1

Verdict autodiff() {
  CounterRng rng(1001);
  double worst = 0.0;
  std::string where = "none";
  std::size_t instances = 0;
  for (const auto& c : oracle::op_gradient_cases()) {
    for (int i = 0; i < 20; ++i, ++instances) {
      const auto r = oracle::check_instance(c, rng);
      if (r.worst > worst) {
        worst = r.worst;
        where = c.name + " " + r.worst_input;
      }
    }
  }
  // The composed graph is checked at a 1e-6 step: at 1e-3 perturbations push
  // pre-activations across the lrelu kink and the difference quotient is no
  // longer a derivative.
  double composed = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto g = oracle::make_composed_graph(rng);
    composed = std::max(composed, oracle::check_composed(g, rng, 6, 1e-6).worst);
  }
  const bool pass = worst <= 1e-3 && composed <= 1e-3;
  return {pass, fmt("%zu op instances, worst rel err %.2e (%s); composed graph x20 worst %.2e", instances, worst,
                    where.c_str(), composed)};
}

// ---------------------------------------------------------------- A2

Verdict kl_oracle() {
  using TensorD = BasicTensor<double>;
  const BasicLatentCode<double> standard{TensorD::zeros({1, 3}), TensorD::zeros({1, 3}), TensorD::zeros({1, 3})};
  const bool exact_zero = kl_divergence(standard).item() == 0.0;

  CounterRng rng(2002);
  double worst = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    const double mu = rng.uniform(-2.0, 2.0), sigma = rng.uniform(0.3, 2.0);
    const double log_var = 2.0 * std::log(sigma);
    const BasicLatentCode<double> code{TensorD::from({1, 1}, {mu}), TensorD::from({1, 1}, {log_var}),
                                       TensorD::from({1, 1}, {mu})};
    const double closed = kl_divergence(code).item();
    // E_q[log q(z) - log p(z)] over 1e6 draws z ~ N(mu, sigma^2).
    double sum = 0.0;
    constexpr int kDraws = 1'000'000;
    for (int k = 0; k < kDraws; ++k) {
      const double eps = rng.normal();
      const double z = mu + sigma * eps;
      sum += -std::log(sigma) - 0.5 * eps * eps + 0.5 * z * z;
    }
    worst = std::max(worst, std::abs(sum / kDraws - closed));
  }
  return {exact_zero && worst <= 1e-2,
          fmt("kl(0,1) %s 0; 10 pairs x 1e6 draws, worst |closed - MC| %.2e", exact_zero ? "==" : "!=", worst)};
}

// ---------------------------------------------------------------- A3

Verdict ot_suite() {
  CounterRng rng(3003);
  auto random_cost = [&](std::size_t m, std::size_t n) {
    std::vector<double> v(m * n);
    for (double& x : v) x = rng.uniform();
    return ot::make_cost(m, n, std::move(v));
  };

  double exact_gap = 0.0, marginal = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t m = 1 + rng.below(4), n = 1 + rng.below(4);
    const auto cost = random_cost(m, n);
    const auto a = ot::uniform_marginal(m), b = ot::uniform_marginal(n);
    const auto plan = ot::solve_exact(cost, a, b);
    exact_gap = std::max(exact_gap, std::abs(plan.objective - oracle::brute_force_transport(m, n, cost.values, a, b).objective));
    if (m == n) exact_gap = std::max(exact_gap, std::abs(plan.objective - oracle::best_permutation_cost(n, cost.values)));
    marginal = std::max(marginal, ot::marginal_violation(plan));
  }

  const auto u = ot::uniform_marginal(8);
  int within = 0, monotone = 0;
  double worst_gap = 0.0;
  constexpr int kInstances = 20;
  for (int i = 0; i < kInstances; ++i) {
    const auto cost = random_cost(8, 8);
    const auto exact = ot::solve_exact(cost, u, u);
    marginal = std::max(marginal, ot::marginal_violation(exact));
    double previous = std::numeric_limits<double>::infinity();
    bool ordered = true;
    double gap = 0.0;
    for (double eps : {1.0, 0.1, 0.01}) {
      const auto plan = ot::solve_sinkhorn(cost, u, u, {.epsilon = eps});
      marginal = std::max(marginal, ot::marginal_violation(plan));
      ordered = ordered && plan.objective <= previous;
      previous = plan.objective;
      gap = std::abs(plan.objective - exact.objective);
    }
    within += gap <= 1e-3;
    monotone += ordered;
    worst_gap = std::max(worst_gap, gap);
  }
  const bool a = exact_gap <= 1e-9, b = marginal <= 1e-6, c = within == kInstances && monotone == kInstances;
  return {a && b && c,
          fmt("(a) 20 instances, worst |exact - enumeration| %.1e %s; (b) worst marginal violation %.1e %s; "
              "(c) eps=0.01 within 1e-3 on %d/%d, worst gap %.2e, monotone %d/%d %s",
              exact_gap, a ? "ok" : "FAIL", marginal, b ? "ok" : "FAIL", within, kInstances, worst_gap, monotone,
              kInstances, c ? "ok" : "FAIL")};
}

// ---------------------------------------------------------------- A4-A6, A9

struct SeedRun {
  std::uint64_t seed = 0;
  metrics::EvalReport oracle, oracle_train, no_adapt, olva, adapt_few;
  bool frozen_unchanged = false;
  std::size_t ot_checked = 0;
  std::size_t ot_violations = 0;
  double ot_worst_excess = -std::numeric_limits<double>::infinity();
  double seconds = 0.0;
};

experiment::ExperimentConfig desk_config(std::uint64_t seed) {
  experiment::ExperimentConfig c;
  c.train.learning_rate = 1e-3;
  c.train.seed = seed;
  return c;
}

bool same_except_head(const SegVae& a, const SegVae& b) {
  const auto sa = a.state(), sb = b.state();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].name.starts_with("enc.fc.")) continue;
    if (!std::ranges::equal(sa[i].tensor.data(), sb[i].tensor.data())) return false;
  }
  return sa.size() == sb.size();
}

SeedRun run_seed(std::uint64_t seed, const experiment::Splits& splits) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedRun r;
  r.seed = seed;
  auto c = desk_config(seed);
  auto eval = [&](const train::TrainState& st, const synth::Dataset& d) {
    return experiment::evaluate_model(st.model, d, c.eval.batch_size);
  };

  c.regime = experiment::Regime::oracle;
  const auto oracle = experiment::run_regime(c, splits);
  r.oracle = eval(oracle.state, splits.target_eval);
  r.oracle_train = eval(oracle.state, splits.target_train);

  c.regime = experiment::Regime::no_adapt;
  const auto no_adapt = experiment::run_regime(c, splits);
  r.no_adapt = eval(no_adapt.state, splits.target_eval);

  c.regime = experiment::Regime::olva;
  const auto olva = experiment::run_regime(c, splits);
  r.olva = eval(olva.state, splits.target_eval);
  for (const auto& b : olva.trace) {
    ++r.ot_checked;
    r.ot_violations += b.ot_plan > b.ot_uniform;
    r.ot_worst_excess = std::max(r.ot_worst_excess, b.ot_plan - b.ot_uniform);
  }

  c.regime = experiment::Regime::adapt_few;
  const auto few = experiment::run_regime(c, splits, &no_adapt.state);
  r.adapt_few = eval(few.state, splits.target_eval);
  r.frozen_unchanged = same_except_head(few.state.model, no_adapt.state.model);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<SeedRun> desk_runs() {
  const auto splits = experiment::make_splits(desk_config(0));
  std::vector<SeedRun> runs(3);
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) runs[i] = run_seed(i, splits);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& r : runs) {
    std::cout << fmt("   seed %llu: oracle %.3f (train %.3f, assd %.2f)  no_adapt %.3f  olva %.3f  adapt_few %.3f  [%.0f s]",
                     static_cast<unsigned long long>(r.seed), r.oracle.mean_dsc, r.oracle_train.mean_dsc,
                     r.oracle.mean_assd.value_or(NAN), r.no_adapt.mean_dsc, r.olva.mean_dsc, r.adapt_few.mean_dsc,
                     r.seconds)
              << std::endl;
  }
  return runs;
}

double mean_of(const std::vector<SeedRun>& runs, const std::function<double(const SeedRun&)>& f) {
  double s = 0.0;
  for (const auto& r : runs) s += f(r);
  return s / static_cast<double>(runs.size());
}

Verdict oracle_regime(const std::vector<SeedRun>& runs) {
  const double dsc = mean_of(runs, [](const SeedRun& r) { return r.oracle.mean_dsc; });
  const double assd = mean_of(runs, [](const SeedRun& r) { return r.oracle.mean_assd.value_or(INFINITY); });
  return {dsc >= 0.90 && assd <= 1.5, fmt("mean target DSC %.3f (>= 0.90), mean ASSD %.3f px (<= 1.5)", dsc, assd)};
}

Verdict adaptation_gap(const std::vector<SeedRun>& runs) {
  const double oracle = mean_of(runs, [](const SeedRun& r) { return r.oracle.mean_dsc; });
  const double none = mean_of(runs, [](const SeedRun& r) { return r.no_adapt.mean_dsc; });
  const double olva = mean_of(runs, [](const SeedRun& r) { return r.olva.mean_dsc; });
  const double gap = oracle - none;
  const double recovered = gap > 0 ? (olva - none) / gap : 0.0;
  const bool pass = gap >= 0.15 && olva - none >= 0.10 && recovered >= 0.5;
  return {pass, fmt("oracle %.3f, no_adapt %.3f (gap %.3f >= 0.15), olva %.3f (+%.3f >= 0.10, recovers %.0f%% >= 50%%)",
                    oracle, none, gap, olva, olva - none, 100.0 * recovered)};
}

Verdict few_target(const std::vector<SeedRun>& runs) {
  bool pass = true;
  std::string detail;
  for (const auto& r : runs) {
    const bool ok = r.adapt_few.mean_dsc >= r.no_adapt.mean_dsc && r.frozen_unchanged;
    pass = pass && ok;
    detail += fmt("seed %llu: %.3f vs %.3f, frozen %s; ", static_cast<unsigned long long>(r.seed),
                  r.adapt_few.mean_dsc, r.no_adapt.mean_dsc, r.frozen_unchanged ? "bitwise equal" : "CHANGED");
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Verdict plan_optimality(const std::vector<SeedRun>& runs) {
  std::size_t checked = 0, violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& r : runs) {
    checked += r.ot_checked;
    violations += r.ot_violations;
    worst = std::max(worst, r.ot_worst_excess);
  }
  return {checked >= 100 && violations == 0,
          fmt("%zu iterations, %zu with plan term > uniform term, max(plan - uniform) %.3e", checked, violations, worst)};
}

// ---------------------------------------------------------------- A7

Verdict metric_fixtures() {
  std::size_t checked = 0, mismatches = 0;
  for (const auto& f : oracle::mask_fixtures()) {
    const metrics::MaskView p{f.pred, static_cast<std::size_t>(f.height), static_cast<std::size_t>(f.width)};
    const metrics::MaskView g{f.truth, static_cast<std::size_t>(f.height), static_cast<std::size_t>(f.width)};
    mismatches += metrics::dsc(p, g) != f.dsc || metrics::dsc(p, g) != oracle::dice(f.pred, f.truth);
    const auto a = metrics::assd(p, g);
    if (a.has_value() != f.assd.has_value()) {
      ++mismatches;
    } else if (a) {
      mismatches += *a != *f.assd || *a != oracle::assd(f.pred, f.truth, f.height, f.width);
    }
    ++checked;
  }
  CounterRng rng(7007);
  std::size_t random = 0;
  for (int rep = 0; rep < 200; ++rep, ++random) {
    const int h = 6 + static_cast<int>(rng.below(11)), w = 6 + static_cast<int>(rng.below(11));
    std::vector<std::uint8_t> a(h * w), b(h * w);
    const double density = rng.uniform(0.05, 0.6);
    for (auto& v : a) v = rng.uniform() < density;
    for (auto& v : b) v = rng.uniform() < density;
    const metrics::MaskView pa{a, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
    const metrics::MaskView pb{b, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
    mismatches += metrics::dsc(pa, pb) != oracle::dice(a, b);
    if (const auto got = metrics::assd(pa, pb)) mismatches += *got != oracle::assd(a, b, h, w);
  }
  return {mismatches == 0,
          fmt("%zu hand fixtures + %zu random mask pairs vs brute force, %zu mismatches (exact equality)", checked,
              random, mismatches)};
}

// ---------------------------------------------------------------- A8

using Snapshot = std::map<std::string, std::string>;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every file under `dir` by relative path. The ablation table's wall-time
// column is the only non-deterministic output and is blanked.
Snapshot snapshot(const fs::path& dir) {
  Snapshot s;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string bytes = read_file(e.path());
    if (e.path().filename() == "ablation.csv") {
      std::istringstream in(bytes);
      std::string out;
      for (std::string line; std::getline(in, line);) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
        if (f.size() > 9) f[9].clear();
        for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
        out += '\n';
      }
      bytes = out;
    }
    s[fs::relative(e.path(), dir).string()] = bytes;
  }
  return s;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "olva_acceptance_a8";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "config.json");
    cfg << R"({"data": {"dir": ")" << (root / "data").string()
        << R"(", "scans": 6, "slices_per_scan": 4},
  "model": {"encoder_channels": [8, 8, 16, 16, 16], "latent_dim": 8},
  "train": {"iterations": 25, "source_batch": 8, "target_batch": 8, "adapt_iterations": 10, "learning_rate": 0.001},
  "regime": "olva"})";
  }
  auto options = [&](const std::string& out) {
    experiment::CommandOptions o;
    o.config = root / "config.json";
    o.out = root / out;
    o.quiet = true;
    return o;
  };
  // Runs every command; a second pass writes into the same directories.
  int failures = 0;
  auto run_all = [&] {
    failures += experiment::cmd_gen_data(options("data")) != 0;
    for (const char* regime : {"oracle", "no_adapt", "olva"}) {
      auto o = options(regime);
      o.regime = regime;
      failures += experiment::cmd_train(o) != 0;
      failures += experiment::cmd_eval(o) != 0;
      failures += experiment::cmd_export_latents(o) != 0;
    }
    auto few = options("adapt_few");
    few.regime = "adapt_few";
    few.checkpoint = root / "no_adapt" / "model.ckpt";
    failures += experiment::cmd_train(few) != 0;
    few.checkpoint = root / "adapt_few" / "model.ckpt";
    failures += experiment::cmd_eval(few) != 0;
    auto grid = options("ablate");
    grid.grid = R"({"latent_dim": [4, 8], "alpha": [0, 10]})";
    failures += experiment::cmd_ablate(grid) != 0;
    return snapshot(root);
  };
  const Snapshot first = run_all();
  const Snapshot second = run_all();

  std::size_t differing = 0;
  std::string first_diff;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      if (first_diff.empty()) first_diff = name;
    }
  }
  differing += second.size() > first.size() ? second.size() - first.size() : 0;
  const std::size_t files = first.size();
  fs::remove_all(root);
  std::string detail = fmt("%zu output files compared across two runs, %zu differ, %d command failures", files,
                           differing, failures);
  if (!first_diff.empty()) detail += " (first: " + first_diff + ")";
  return {failures == 0 && differing == 0 && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria A1-A9"};
  std::vector<std::string> only, known;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--known-failure", known, "Criteria whose failure does not fail the run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> selected(only.begin(), only.end()), expected(known.begin(), known.end());
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id) > 0; };

  int unexpected = 0;
  auto report = [&](const std::string& id, const std::string& title, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    const Verdict v = fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << title << ": " << v.detail
              << fmt("  [%.1f s]", s);
    if (!v.pass && expected.count(id)) std::cout << "  (known failure)";
    std::cout << std::endl;
    unexpected += !v.pass && !expected.count(id);
  };

  report("A1", "autodiff vs finite differences", autodiff);
  report("A2", "KL closed form vs Monte Carlo", kl_oracle);
  report("A3", "optimal transport solvers", ot_suite);

  if (wanted("A4") || wanted("A5") || wanted("A6") || wanted("A9")) {
    std::cout << "   desk benchmark: 40 scans x 16 slices, 2000 iterations, lr 1e-3, seeds 0-2" << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    const auto runs = desk_runs();
    std::cout << fmt("   desk benchmark finished in %.0f s",
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
              << std::endl;
    report("A4", "oracle regime", [&] { return oracle_regime(runs); });
    report("A5", "adaptation gap", [&] { return adaptation_gap(runs); });
    report("A6", "few-target regime", [&] { return few_target(runs); });
    report("A9", "per-step plan optimality", [&] { return plan_optimality(runs); });
    const double train_dsc = mean_of(runs, [](const SeedRun& r) { return r.oracle_train.mean_dsc; });
    const double eval_dsc = mean_of(runs, [](const SeedRun& r) { return r.oracle.mean_dsc; });
    std::cout << fmt("   info: oracle DSC on its training split %.3f vs eval split %.3f (%s)", train_dsc, eval_dsc,
                     train_dsc > eval_dsc || std::abs(train_dsc - eval_dsc) <= 0.05 ? "consistent" : "inconsistent")
              << std::endl;
  }

  report("A7", "metric fixtures", metric_fixtures);
  report("A8", "command determinism", determinism);

  std::cout << (unexpected == 0 ? "acceptance: all criteria met or known failures"
                                : fmt("acceptance: %d unexpected failure(s)", unexpected))
            << std::endl;
  return unexpected == 0 ? 0 : 1;
}
