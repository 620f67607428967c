#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>
#include <openssl/evp.h>

#include "olva/checkpoint.hpp"
#include "olva/errors.hpp"
#include "olva/experiment.hpp"

namespace olva::experiment {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr std::uint64_t kFewScanTag = 0x66657773;  // "fews"

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string sha256_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

// Applies command-line overrides on top of the config file.
ExperimentConfig resolve(const CommandOptions& o) {
  ExperimentConfig c = load_config(o.config);
  if (o.out) c.eval.output_dir = *o.out;
  if (o.seed) c.train.seed = *o.seed;
  if (o.checkpoint) c.init_checkpoint = *o.checkpoint;
  if (!o.regime.empty()) c.regime = regime_from_string(o.regime);
  return c;
}

void check_compatible(const ExperimentConfig& c, const synth::Dataset& d, const std::string& name) {
  if (d.empty()) return;
  const auto& img = d.front().image;
  if (img.dim(0) != c.model.in_channels || img.dim(1) != c.model.extent || img.dim(2) != c.model.extent) {
    throw ConfigError("dataset " + name + " has images " + shape_str(img.shape()) + " but the model expects extent " +
                      std::to_string(c.model.extent));
  }
}

SegVae load_model(const ExperimentConfig& c, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  SegVae model(c.model, 0);
  model.load_state(load_checkpoint(checkpoint));
  return model;
}

fs::path checkpoint_for(const CommandOptions& o, const ExperimentConfig& c) {
  if (o.checkpoint) return *o.checkpoint;
  return c.eval.output_dir / "model.ckpt";
}

std::vector<std::string> split_names(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <typename Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << ": internal error: " << e.what() << '\n';
    return 1;
  }
}

std::size_t worker_cap() {
  const char* env = std::getenv("OLVA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0' || v == 0) throw ConfigError(std::string("OLVA_THREADS must be a positive integer, got '") + env + "'");
  return v;
}

}  // namespace

Splits make_splits(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto source = synth::generate_dataset(d.scans, d.slices_per_scan, synth::Domain::source, d.source_seed, d.synth);
  const auto target = synth::generate_dataset(d.scans, d.slices_per_scan, synth::Domain::target, d.target_seed, d.synth);
  Splits s;
  std::tie(s.source_train, s.source_eval) = synth::split(source, c.eval.split_fraction, d.split_seed);
  std::tie(s.target_train, s.target_eval) =
      synth::split(target, c.eval.split_fraction, hash_seed({d.split_seed, 1}));
  return s;
}

Splits load_splits(const fs::path& dir) {
  Splits s;
  auto read = [&](const char* name, synth::Dataset& out) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) throw ConfigError("dataset file " + p.string() + " not found (run gen-data first)");
    out = synth::load_dataset(p);
  };
  read(kSourceTrain, s.source_train);
  read(kSourceEval, s.source_eval);
  read(kTargetTrain, s.target_train);
  read(kTargetEval, s.target_eval);
  return s;
}

const synth::Dataset& named_split(const Splits& s, const std::string& name) {
  if (name == "source_train") return s.source_train;
  if (name == "source_eval") return s.source_eval;
  if (name == "target_train") return s.target_train;
  if (name == "target_eval") return s.target_eval;
  throw ConfigError("unknown dataset '" + name + "' (expected source_train, source_eval, target_train or target_eval)");
}

synth::Dataset few_target_scans(const synth::Dataset& target_train, std::size_t count, std::uint64_t seed) {
  auto ids = synth::scan_ids(target_train);
  if (count > ids.size()) {
    throw ConfigError("adapt_scans (" + std::to_string(count) + ") exceeds the " + std::to_string(ids.size()) +
                      " target training scans");
  }
  CounterRng rng(hash_seed({seed, kFewScanTag}));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  ids.resize(count);
  return synth::select_scans(target_train, ids);
}

RunResult run_regime(const ExperimentConfig& c, const Splits& s, const train::TrainState* base,
                     const train::Callbacks& extra) {
  std::vector<train::LossBreakdown> trace;
  train::Callbacks cb;
  cb.on_step = [&](const train::LossBreakdown& b) {
    trace.push_back(b);
    if (extra.on_step) extra.on_step(b);
  };
  cb.on_checkpoint = extra.on_checkpoint;

  switch (c.regime) {
    case Regime::oracle: {
      auto st = train::train(c.model, c.train, train::Mode::supervised, s.target_train, {}, cb);
      return {std::move(st), std::move(trace)};
    }
    case Regime::no_adapt: {
      auto st = train::train(c.model, c.train, train::Mode::supervised, s.source_train, {}, cb);
      return {std::move(st), std::move(trace)};
    }
    case Regime::olva: {
      auto st = train::train(c.model, c.train, train::Mode::olva, s.source_train, s.target_train, cb);
      return {std::move(st), std::move(trace)};
    }
    case Regime::adapt_few: {
      if (base == nullptr) throw ContractError("adapt_few needs a trained no-adaptation state");
      const auto scans = few_target_scans(s.target_train, c.adapt_scans, c.train.seed);
      auto st = train::adapt_few(*base, s.source_train, scans, c.train, cb);
      return {std::move(st), std::move(trace)};
    }
  }
  throw ContractError("run_regime: unhandled regime");
}

metrics::EvalReport evaluate_model(const SegVae& model, const synth::Dataset& dataset, std::size_t batch_size) {
  const metrics::Predictor predict = [&](const Tensor& x) { return train::predict(model, x); };
  return metrics::evaluate(predict, dataset, model.config().classes, batch_size);
}

std::string loss_csv(const std::vector<train::LossBreakdown>& trace) {
  std::string out = "iteration,dice,recon,kl_s,kl_t,ot,total\n";
  for (const auto& b : trace) {
    out += std::to_string(b.iteration) + ',' + num(b.dice) + ',' + num(b.recon) + ',' + num(b.kl_s) + ',' +
           num(b.kl_t) + ',' + num(b.ot) + ',' + num(b.total) + '\n';
  }
  return out;
}

std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& points) {
  if (points.size() < 3) throw ConfigError("PCA needs at least 3 samples, got " + std::to_string(points.size()));
  const std::size_t n = points.size(), k = points.front().size();
  if (k < 2) throw ConfigError("PCA needs at least 2 latent dimensions");
  Eigen::MatrixXd x(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != k) throw DimensionError("pca2: row " + std::to_string(i) + " has a different width");
    for (std::size_t j = 0; j < k; ++j) x(i, j) = points[i][j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues ascend; the last two columns are the leading components.
  Eigen::MatrixXd basis(k, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(k) - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
  }
  const Eigen::MatrixXd proj = x * basis;
  std::vector<std::array<double, 2>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {proj(i, 0), proj(i, 1)};
  return out;
}

int cmd_gen_data(const CommandOptions& o) {
  return guarded("gen-data", [&] {
    ExperimentConfig c = resolve(o);
    if (o.out) c.data.dir = *o.out;
    make_dir(c.data.dir);
    const Splits s = make_splits(c);

    json files = json::object();
    const std::pair<const char*, const synth::Dataset*> parts[] = {{kSourceTrain, &s.source_train},
                                                                   {kSourceEval, &s.source_eval},
                                                                   {kTargetTrain, &s.target_train},
                                                                   {kTargetEval, &s.target_eval}};
    for (const auto& [name, data] : parts) {
      const fs::path p = c.data.dir / name;
      synth::save_dataset(p, *data);
      json entry;
      entry["samples"] = data->size();
      entry["scan_ids"] = synth::scan_ids(*data);
      entry["sha256"] = sha256_hex(p);
      files[name] = entry;
    }
    json manifest;
    manifest["extent"] = c.data.synth.extent;
    manifest["scans"] = c.data.scans;
    manifest["slices_per_scan"] = c.data.slices_per_scan;
    manifest["samples_per_domain"] = c.data.scans * c.data.slices_per_scan;
    manifest["seeds"] = {{"source", c.data.source_seed}, {"target", c.data.target_seed}, {"split", c.data.split_seed}};
    manifest["split_fraction"] = c.eval.split_fraction;
    manifest["intensities"] = {{"source", c.data.synth.source_intensities},
                               {"target", c.data.synth.target_intensities}};
    manifest["files"] = files;
    write_text(c.data.dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(c.data.dir / kResolvedConfig, dump_config(c));
    if (!o.quiet) std::cerr << "gen-data: wrote 4 splits to " << c.data.dir.string() << '\n';
  });
}

int cmd_train(const CommandOptions& o) {
  return guarded("train", [&] {
    const ExperimentConfig c = resolve(o);
    std::optional<train::TrainState> base;
    if (c.regime == Regime::adapt_few) {
      if (!c.init_checkpoint) throw ConfigError("regime adapt_few needs --checkpoint (a no_adapt model)");
      base.emplace(c.model, c.train);
      base->model = load_model(c, *c.init_checkpoint);
    }
    const Splits s = load_splits(c.data.dir);
    check_compatible(c, s.source_train, kSourceTrain);
    check_compatible(c, s.target_train, kTargetTrain);
    const fs::path out = c.eval.output_dir;
    make_dir(out);
    write_text(out / kResolvedConfig, dump_config(c));

    train::Callbacks cb;
    if (!o.quiet) {
      cb.on_step = [&](const train::LossBreakdown& b) {
        if (b.iteration % 100 == 0) {
          std::cerr << "train[" << to_string(c.regime) << "] it " << b.iteration << " total " << num(b.total)
                    << " dice " << num(b.dice) << " ot " << num(b.ot) << '\n';
        }
      };
    }
    cb.on_checkpoint = [&](const train::TrainState& st) {
      make_dir(out / "checkpoints");
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06zu.ckpt", st.iteration);
      save_checkpoint(out / "checkpoints" / name, st.model.state());
    };
    const RunResult r = run_regime(c, s, base ? &*base : nullptr, cb);
    save_checkpoint(out / "model.ckpt", r.state.model.state());
    write_text(out / "loss.csv", loss_csv(r.trace));
    if (!o.quiet) std::cerr << "train: wrote " << (out / "model.ckpt").string() << '\n';
  });
}

int cmd_eval(const CommandOptions& o) {
  return guarded("eval", [&] {
    const ExperimentConfig c = resolve(o);
    const std::string dataset = o.dataset.empty() ? "target_eval" : o.dataset;
    const SegVae model = load_model(c, checkpoint_for(o, c));
    const Splits s = load_splits(c.data.dir);
    const auto& data = named_split(s, dataset);
    check_compatible(c, data, dataset);
    if (data.empty()) throw ConfigError("dataset " + dataset + " is empty");
    const metrics::EvalReport report = evaluate_model(model, data, c.eval.batch_size);
    const fs::path out = c.eval.output_dir;
    make_dir(out);
    write_text(out / ("eval_" + dataset + ".json"), metrics::report_json(report));
    const std::string table = metrics::report_table(report, to_string(c.regime));
    write_text(out / ("eval_" + dataset + ".txt"), table);
    write_text(out / kResolvedConfig, dump_config(c));
    if (!o.quiet) std::cout << table;
  });
}

int cmd_export_latents(const CommandOptions& o) {
  return guarded("export-latents", [&] {
    const ExperimentConfig c = resolve(o);
    const SegVae model = load_model(c, checkpoint_for(o, c));
    const Splits s = load_splits(c.data.dir);
    const auto names = split_names(o.dataset.empty() ? "source_eval,target_eval" : o.dataset);

    std::vector<std::vector<double>> points;
    std::vector<const synth::SamplePair*> samples;
    for (const auto& name : names) {
      const auto& data = named_split(s, name);
      check_compatible(c, data, name);
      for (std::size_t start = 0; start < data.size(); start += c.eval.batch_size) {
        const std::size_t count = std::min(c.eval.batch_size, data.size() - start);
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor mu = train::encode_means(model, synth::stack_images(data, idx));
        const std::size_t k = mu.dim(1);
        for (std::size_t i = 0; i < count; ++i) {
          auto row = mu.data().subspan(i * k, k);
          points.emplace_back(row.begin(), row.end());
          samples.push_back(&data[start + i]);
        }
      }
    }
    const auto proj = pca2(points);
    std::string csv = "sample,domain,scan,slice,pc1,pc2\n";
    for (std::size_t i = 0; i < proj.size(); ++i) {
      csv += std::to_string(i) + ',' + synth::to_string(samples[i]->domain) + ',' +
             std::to_string(samples[i]->scan_id) + ',' + std::to_string(samples[i]->slice) + ',' + num(proj[i][0]) +
             ',' + num(proj[i][1]) + '\n';
    }
    const fs::path out = c.eval.output_dir;
    make_dir(out);
    write_text(out / "latents.csv", csv);
    write_text(out / kResolvedConfig, dump_config(c));
  });
}

namespace {

struct GridPoint {
  std::size_t latent_dim;
  double alpha;
  double beta;
  train::OtSolver solver;
  std::uint64_t seed;
};

std::vector<GridPoint> expand_grid(const std::string& spec, const ExperimentConfig& c) {
  std::string text = spec;
  if (!spec.empty() && fs::exists(spec)) {
    std::ifstream in(spec);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  if (text.empty()) throw ConfigError("ablate needs --grid (a JSON object or a path to one)");
  json g;
  try {
    g = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed grid JSON: ") + e.what());
  }
  if (!g.is_object()) throw ConfigError("grid must be a JSON object of value lists");
  std::vector<std::size_t> ks{c.model.latent_dim};
  std::vector<double> alphas{c.train.alpha}, betas{c.train.beta};
  std::vector<std::string> solvers{train::to_string(c.train.ot_solver)};
  std::vector<std::uint64_t> seeds{c.train.seed};
  for (auto it = g.begin(); it != g.end(); ++it) {
    if (!it->is_array() || it->empty()) throw ConfigError("grid." + it.key() + ": expected a non-empty list");
    try {
      if (it.key() == "latent_dim") ks = it->get<std::vector<std::size_t>>();
      else if (it.key() == "alpha") alphas = it->get<std::vector<double>>();
      else if (it.key() == "beta") betas = it->get<std::vector<double>>();
      else if (it.key() == "ot_solver") solvers = it->get<std::vector<std::string>>();
      else if (it.key() == "seed") seeds = it->get<std::vector<std::uint64_t>>();
      else throw ConfigError("unknown grid key '" + it.key() + "' (latent_dim, alpha, beta, ot_solver, seed)");
    } catch (const json::exception&) {
      throw ConfigError("grid." + it.key() + ": ill-typed values " + it->dump());
    }
  }
  std::vector<GridPoint> out;
  for (auto k : ks)
    for (double a : alphas)
      for (double b : betas)
        for (const auto& s : solvers)
          for (auto seed : seeds) out.push_back({k, a, b, train::ot_solver_from_string(s), seed});
  return out;
}

struct GridRow {
  double mean_dsc = 0.0;
  std::optional<double> mean_assd;
  double seconds = 0.0;
  std::string status = "ok";
  Regime regime = Regime::olva;
};

}  // namespace

int cmd_ablate(const CommandOptions& o) {
  return guarded("ablate", [&] {
    const ExperimentConfig base = resolve(o);
    if (base.regime == Regime::adapt_few) throw ConfigError("ablate supports the oracle, no_adapt and olva regimes");
    const auto grid = expand_grid(o.grid, base);
    const Splits s = load_splits(base.data.dir);
    const fs::path out = base.eval.output_dir;
    make_dir(out);
    write_text(out / kResolvedConfig, dump_config(base));

    std::vector<GridRow> rows(grid.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < grid.size(); i = next++) {
        const GridPoint& p = grid[i];
        GridRow& row = rows[i];
        const auto t0 = std::chrono::steady_clock::now();
        try {
          ExperimentConfig c = base;
          c.model.latent_dim = p.latent_dim;
          c.train.beta = p.beta;
          c.train.ot_solver = p.solver;
          c.train.seed = p.seed;
          // A zero alignment weight is the no-adaptation path.
          if (p.alpha == 0.0 && c.regime == Regime::olva) {
            c.regime = Regime::no_adapt;
          } else {
            c.train.alpha = p.alpha;
          }
          row.regime = c.regime;
          char dir[32];
          std::snprintf(dir, sizeof dir, "point_%03zu", i);
          c.eval.output_dir = out / dir;
          c.validate();
          make_dir(c.eval.output_dir);
          write_text(c.eval.output_dir / kResolvedConfig, dump_config(c));
          const RunResult r = run_regime(c, s);
          save_checkpoint(c.eval.output_dir / "model.ckpt", r.state.model.state());
          write_text(c.eval.output_dir / "loss.csv", loss_csv(r.trace));
          const auto report = evaluate_model(r.state.model, s.target_eval, c.eval.batch_size);
          write_text(c.eval.output_dir / "eval_target_eval.json", metrics::report_json(report));
          row.mean_dsc = report.mean_dsc;
          row.mean_assd = report.mean_assd;
        } catch (const std::exception& e) {
          std::string msg = e.what();
          std::replace(msg.begin(), msg.end(), '"', '\'');
          row.status = "\"error: " + msg + "\"";
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.quiet) {
          std::lock_guard lock(log_mutex);
          std::cerr << "ablate: point " << i + 1 << "/" << grid.size() << " " << row.status << '\n';
        }
      }
    };
    const std::size_t workers = std::min(worker_cap(), grid.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::string csv = "point,latent_dim,alpha,beta,ot_solver,seed,regime,mean_dsc,mean_assd,wall_time_s,status\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& p = grid[i];
      const auto& r = rows[i];
      csv += std::to_string(i) + ',' + std::to_string(p.latent_dim) + ',' + num(p.alpha) + ',' + num(p.beta) + ',' +
             train::to_string(p.solver) + ',' + std::to_string(p.seed) + ',' + to_string(r.regime) + ',' +
             (r.status == "ok" ? num(r.mean_dsc) : "") + ',' + (r.mean_assd ? num(*r.mean_assd) : "") + ',' +
             num(r.seconds) + ',' + r.status + '\n';
    }
    write_text(out / "ablation.csv", csv);
  });
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Latent-space domain adaptation experiments on synthetic segmentation data"};
  app.require_subcommand(1);
  CommandOptions o;
  std::string out, checkpoint;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides the config)");
    sub->add_option("--seed", seed, "Training seed (overrides the config)");
    sub->add_flag("--quiet", o.quiet, "Suppress progress output");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate and split the synthetic source/target datasets");
  common(gen);
  auto* tr = app.add_subcommand("train", "Train one regime: oracle, no_adapt, olva or adapt_few");
  common(tr);
  tr->add_option("--checkpoint", checkpoint, "No-adaptation checkpoint for adapt_few");
  tr->add_option("--regime", o.regime, "Override the configured regime");
  auto* ev = app.add_subcommand("eval", "Score a checkpoint (DSC / ASSD per structure)");
  common(ev);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint (default: <out>/model.ckpt)");
  ev->add_option("--dataset", o.dataset, "Split to score (default target_eval)");
  ev->add_option("--regime", o.regime, "Row label of the text table (default: the configured regime)");
  auto* ex = app.add_subcommand("export-latents", "Write 2-D PCA projections of latent means");
  common(ex);
  ex->add_option("--checkpoint", checkpoint, "Model checkpoint (default: <out>/model.ckpt)");
  ex->add_option("--dataset", o.dataset, "Comma-separated splits (default source_eval,target_eval)");
  auto* ab = app.add_subcommand("ablate", "Train and score every point of a parameter grid");
  common(ab);
  ab->add_option("--grid", o.grid, "Grid JSON or a path to it, e.g. {\"latent_dim\": [8, 16, 32]}")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (!out.empty()) o.out = out;
  if (!checkpoint.empty()) o.checkpoint = checkpoint;
  for (auto* sub : {gen, tr, ev, ex, ab}) {
    if (sub->count("--seed") > 0) o.seed = seed;
  }

  if (gen->parsed()) return cmd_gen_data(o);
  if (tr->parsed()) return cmd_train(o);
  if (ev->parsed()) return cmd_eval(o);
  if (ex->parsed()) return cmd_export_latents(o);
  return cmd_ablate(o);
}

}  // namespace olva::experiment
