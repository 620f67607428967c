#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "olva/checkpoint.hpp"
#include "olva/errors.hpp"
#include "olva/experiment.hpp"

using namespace olva;
using namespace olva::experiment;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

// Scratch directory holding a small experiment: 4 scans x 2 slices, a narrow
// model and a few training steps.
struct Workspace {
  fs::path root;

  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("olva_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }

  fs::path config(const json& overrides = json::object(), const std::string& name = "config.json") const {
    json c = {
        {"data", {{"dir", (root / "data").string()}, {"scans", 4}, {"slices_per_scan", 2}}},
        {"model", {{"encoder_channels", {4, 4, 8, 8, 8}}, {"latent_dim", 4}}},
        {"train",
         {{"iterations", 2}, {"source_batch", 4}, {"target_batch", 4}, {"adapt_iterations", 2}, {"seed", 3}}},
        {"eval", {{"output_dir", (root / "run").string()}, {"split_fraction", 0.75}}},
        {"regime", "olva"},
    };
    c.merge_patch(overrides);
    const fs::path p = root / name;
    write_file(p, c.dump(2));
    return p;
  }

  CommandOptions options(const fs::path& cfg, const std::string& out = "run") const {
    CommandOptions o;
    o.config = cfg;
    o.out = root / out;
    o.quiet = true;
    return o;
  }
};

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "olva");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and ill-typed values") {
  CHECK_NOTHROW(parse_config("{}"));
  try {
    parse_config(R"({"train": {"alpah": 10}})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.alpah") != std::string::npos);
  }
  try {
    parse_config(R"({"model": {"latent_dim": "big"}})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.latent_dim") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"regime": "magic"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"alpha": -1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"ot_solver": "greedy"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"data": {"geometry": {"ring_outer": [9, 3]}}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/olva.json"), ConfigError);
}

TEST_CASE("the resolved config round-trips and expands every default") {
  const auto c = parse_config(R"({"model": {"latent_dim": 8}, "train": {"ot_solver": "sinkhorn"}})");
  const std::string dumped = dump_config(c);
  CHECK(dump_config(parse_config(dumped)) == dumped);
  const auto j = json::parse(dumped);
  CHECK(j["model"]["latent_dim"] == 8);
  CHECK(j["train"]["alpha"] == 10.0);
  CHECK(j["train"]["ot_solver"] == "sinkhorn");
  CHECK(j["regime"] == "olva");
  CHECK(j["data"].contains("geometry"));
}

TEST_CASE("gen-data writes four splits and a manifest, reproducibly") {
  Workspace ws("gen");
  const auto cfg = ws.config();
  REQUIRE(cli({"gen-data", "--config", cfg.string(), "--quiet"}) == 0);
  const fs::path data = ws.root / "data";
  for (const char* f : {kSourceTrain, kSourceEval, kTargetTrain, kTargetEval, "manifest.json", kResolvedConfig})
    CHECK(fs::exists(data / f));
  const auto manifest = json::parse(read_file(data / "manifest.json"));
  CHECK(manifest["samples_per_domain"] == 8);
  const auto& files = manifest["files"];
  CHECK(files[kSourceTrain]["samples"].get<int>() + files[kSourceEval]["samples"].get<int>() == 8);
  CHECK(files[kTargetTrain]["samples"].get<int>() + files[kTargetEval]["samples"].get<int>() == 8);
  CHECK(files[kSourceTrain]["samples"] == 6);

  const std::string first = read_file(data / "manifest.json");
  const std::string first_split = read_file(data / kTargetEval);
  REQUIRE(cli({"gen-data", "--config", cfg.string(), "--quiet"}) == 0);
  CHECK(read_file(data / "manifest.json") == first);
  CHECK(read_file(data / kTargetEval) == first_split);

  const auto splits = load_splits(data);
  CHECK(splits.source_train.size() == 6);
  CHECK(named_split(splits, "target_eval").size() == 2);
  CHECK_THROWS_AS(named_split(splits, "validation"), ConfigError);
}

TEST_CASE("gen-data reports unwritable paths and malformed configs with exit code 2") {
  Workspace ws("gen_err");
  write_file(ws.root / "blocker", "x");
  const auto cfg = ws.config({{"data", {{"dir", (ws.root / "blocker" / "data").string()}}}});
  CHECK(cli({"gen-data", "--config", cfg.string(), "--quiet"}) == 2);
  write_file(ws.root / "bad.json", "{\"data\": {\"scans\": }");
  CHECK(cli({"gen-data", "--config", (ws.root / "bad.json").string(), "--quiet"}) == 2);
  CHECK(cli({"gen-data", "--config", (ws.root / "missing.json").string()}) == 2);
  CHECK(cli({"frobnicate"}) == 2);
}

TEST_CASE("train writes a checkpoint, a loss CSV and the resolved config") {
  Workspace ws("train");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  auto cfg = ws.config({{"train", {{"iterations", 1}}}});
  REQUIRE(cmd_train(ws.options(cfg)) == 0);
  const fs::path run = ws.root / "run";
  CHECK(fs::exists(run / "model.ckpt"));
  CHECK(fs::exists(run / kResolvedConfig));
  const auto csv = lines(read_file(run / "loss.csv"));
  REQUIRE(csv.size() == 2);
  CHECK(csv[0] == "iteration,dice,recon,kl_s,kl_t,ot,total");
  const auto row = fields(csv[1]);
  REQUIRE(row.size() == 7);
  CHECK(row[0] == "0");
  for (std::size_t i = 1; i < row.size(); ++i) CHECK(std::isfinite(std::stod(row[i])));
  // The resolved config alone reproduces the run.
  const auto resolved = load_config(run / kResolvedConfig);
  CHECK(resolved.train.iterations == 1);
  CHECK(resolved.regime == Regime::olva);
}

TEST_CASE("no_adapt training is byte-for-byte repeatable") {
  Workspace ws("repeat");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  const auto cfg = ws.config({{"regime", "no_adapt"}});
  REQUIRE(cmd_train(ws.options(cfg, "a")) == 0);
  REQUIRE(cmd_train(ws.options(cfg, "b")) == 0);
  CHECK(read_file(ws.root / "a" / "loss.csv") == read_file(ws.root / "b" / "loss.csv"));
  CHECK(read_file(ws.root / "a" / "model.ckpt") == read_file(ws.root / "b" / "model.ckpt"));
  auto reseeded = ws.options(cfg, "c");
  reseeded.seed = 4;
  REQUIRE(cmd_train(reseeded) == 0);
  CHECK(read_file(ws.root / "a" / "loss.csv") != read_file(ws.root / "c" / "loss.csv"));
  CHECK(load_config(ws.root / "c" / kResolvedConfig).train.seed == 4);
}

TEST_CASE("train handles missing inputs and intermediate checkpoints") {
  Workspace ws("train_err");
  const auto cfg = ws.config({{"train", {{"checkpoint_every", 1}}}});
  // Datasets not generated yet.
  CHECK(cmd_train(ws.options(cfg)) == 2);
  REQUIRE(cmd_gen_data(ws.options(cfg, "data")) == 0);
  auto few = ws.options(cfg);
  few.regime = "adapt_few";
  CHECK(cmd_train(few) == 2);
  few.checkpoint = ws.root / "nowhere.ckpt";
  CHECK(cmd_train(few) == 2);

  REQUIRE(cmd_train(ws.options(cfg)) == 0);
  CHECK(fs::exists(ws.root / "run" / "checkpoints" / "iter_000001.ckpt"));
  CHECK(fs::exists(ws.root / "run" / "checkpoints" / "iter_000002.ckpt"));
  few.checkpoint = ws.root / "run" / "model.ckpt";
  few.out = ws.root / "few";
  CHECK(cmd_train(few) == 0);
  CHECK(lines(read_file(ws.root / "few" / "loss.csv")).size() == 3);
}

TEST_CASE("eval is repeatable and emits both report formats") {
  Workspace ws("eval");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  const auto cfg = ws.config();
  REQUIRE(cmd_train(ws.options(cfg)) == 0);
  REQUIRE(cli({"eval", "--config", cfg.string(), "--out", (ws.root / "run").string(), "--quiet"}) == 0);
  const fs::path json_path = ws.root / "run" / "eval_target_eval.json";
  const fs::path text_path = ws.root / "run" / "eval_target_eval.txt";
  const std::string report = read_file(json_path), table = read_file(text_path);
  REQUIRE(cli({"eval", "--config", cfg.string(), "--out", (ws.root / "run").string(), "--quiet"}) == 0);
  CHECK(read_file(json_path) == report);
  CHECK(read_file(text_path) == table);
  for (const char* col : {"LV-M", "LA-B", "LV-B", "A-A", "avg"}) CHECK(table.find(col) != std::string::npos);
  const auto parsed = json::parse(report);
  CHECK(parsed["samples"] == 2);
  CHECK(parsed.contains("mean_dsc"));

  auto source = ws.options(cfg);
  source.dataset = "source_train";
  CHECK(cmd_eval(source) == 0);
  CHECK(fs::exists(ws.root / "run" / "eval_source_train.json"));
  source.dataset = "nope";
  CHECK(cmd_eval(source) == 2);
}

TEST_CASE("eval rejects a shape-incompatible checkpoint naming the tensor") {
  Workspace ws("eval_err");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  REQUIRE(cmd_train(ws.options(ws.config())) == 0);
  const auto wide = ws.config({{"model", {{"latent_dim", 6}}}}, "wide.json");
  auto o = ws.options(wide);
  o.checkpoint = ws.root / "run" / "model.ckpt";

  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const int code = cmd_eval(o);
  std::cerr.rdbuf(old);
  CHECK(code == 2);
  CHECK(captured.str().find("enc.fc.w") != std::string::npos);

  o.checkpoint = ws.root / "run" / "missing.ckpt";
  CHECK(cmd_eval(o) == 2);
}

TEST_CASE("export-latents writes centered projections for every sample") {
  Workspace ws("latents");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  const auto cfg = ws.config();
  REQUIRE(cmd_train(ws.options(cfg)) == 0);
  REQUIRE(cmd_export_latents(ws.options(cfg)) == 0);
  const auto csv = lines(read_file(ws.root / "run" / "latents.csv"));
  REQUIRE(csv.size() == 1 + 4);  // source_eval + target_eval, 2 slices each
  CHECK(csv[0] == "sample,domain,scan,slice,pc1,pc2");
  double pc1 = 0, pc2 = 0;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const auto f = fields(csv[i]);
    REQUIRE(f.size() == 6);
    pc1 += std::stod(f[4]);
    pc2 += std::stod(f[5]);
  }
  CHECK(std::abs(pc1) / 4 <= 1e-4);
  CHECK(std::abs(pc2) / 4 <= 1e-4);

  auto small = ws.options(cfg);
  small.dataset = "target_eval";
  CHECK(cmd_export_latents(small) == 2);
}

TEST_CASE("pca projections: identical rows coincide and components are centered") {
  std::vector<std::vector<double>> pts{{1, 2, 3}, {1, 2, 3}, {4, 0, 1}, {-2, 5, 0}, {0, 1, 7}};
  const auto proj = pca2(pts);
  REQUIRE(proj.size() == 5);
  CHECK(proj[0] == proj[1]);
  double s1 = 0, s2 = 0;
  for (const auto& p : proj) {
    s1 += p[0];
    s2 += p[1];
  }
  CHECK(std::abs(s1) <= 1e-12);
  CHECK(std::abs(s2) <= 1e-12);
  // Variance along the first component dominates the second.
  double v1 = 0, v2 = 0;
  for (const auto& p : proj) {
    v1 += p[0] * p[0];
    v2 += p[1] * p[1];
  }
  CHECK(v1 >= v2);
  CHECK_THROWS_AS(pca2({{1, 2}, {3, 4}}), ConfigError);
}

TEST_CASE("ablate: one row per grid point, failures recorded in-row") {
  Workspace ws("ablate");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  const auto cfg = ws.config();
  auto o = ws.options(cfg, "grid");
  o.grid = R"({"latent_dim": [8, 16, 32]})";
  REQUIRE(cmd_ablate(o) == 0);
  auto csv = lines(read_file(ws.root / "grid" / "ablation.csv"));
  REQUIRE(csv.size() == 4);
  CHECK(csv[0] == "point,latent_dim,alpha,beta,ot_solver,seed,regime,mean_dsc,mean_assd,wall_time_s,status");
  CHECK(fields(csv[2])[1] == "16");
  for (std::size_t i = 1; i < csv.size(); ++i) CHECK(fields(csv[i]).back() == "ok");

  o.grid = R"({"alpha": [0, 10], "latent_dim": [0]})";
  REQUIRE(cmd_ablate(o) == 0);
  csv = lines(read_file(ws.root / "grid" / "ablation.csv"));
  REQUIRE(csv.size() == 3);
  CHECK(fields(csv[1])[6] == "no_adapt");
  for (std::size_t i = 1; i < csv.size(); ++i) CHECK(csv[i].find("error:") != std::string::npos);

  o.grid = R"({"latent_dim": "eight"})";
  CHECK(cmd_ablate(o) == 2);
  o.grid = R"({"width": [3]})";
  CHECK(cmd_ablate(o) == 2);
}

TEST_CASE("a one-point grid reproduces train followed by eval") {
  Workspace ws("ablate_one");
  REQUIRE(cmd_gen_data(ws.options(ws.config(), "data")) == 0);
  const auto cfg = ws.config();
  REQUIRE(cmd_train(ws.options(cfg)) == 0);
  REQUIRE(cmd_eval(ws.options(cfg)) == 0);
  auto o = ws.options(cfg, "grid");
  o.grid = R"({"seed": [3]})";
  REQUIRE(cmd_ablate(o) == 0);
  const fs::path point = ws.root / "grid" / "point_000";
  CHECK(read_file(point / "model.ckpt") == read_file(ws.root / "run" / "model.ckpt"));
  CHECK(read_file(point / "loss.csv") == read_file(ws.root / "run" / "loss.csv"));
  CHECK(read_file(point / "eval_target_eval.json") == read_file(ws.root / "run" / "eval_target_eval.json"));
  const auto row = fields(lines(read_file(ws.root / "grid" / "ablation.csv"))[1]);
  const auto report = json::parse(read_file(ws.root / "run" / "eval_target_eval.json"));
  CHECK(std::stod(row[7]) == doctest::Approx(report["mean_dsc"].get<double>()).epsilon(1e-8));
}
