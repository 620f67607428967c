#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "olva/errors.hpp"
#include "olva/experiment.hpp"

namespace olva::experiment {
namespace {

using json = nlohmann::ordered_json;

// Reads keys of one JSON object, remembering which were consumed so the
// remainder can be reported as unknown.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": ill-typed value " + it->dump());
    }
  }

  void get_range(const char* key, synth::Range& out) {
    std::vector<double> v{out.lo, out.hi};
    get(key, v);
    if (v.size() != 2 || v[0] > v[1]) throw ConfigError(path_ + "." + key + ": expected [lo, hi] with lo <= hi");
    out = {v[0], v[1]};
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string sub(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
void get_enum(Reader& r, const char* key, E& out, std::string (*show)(E), E (*parse)(const std::string&)) {
  std::string s = show(out);
  r.get(key, s);
  out = parse(s);
}

void read_geometry(const json& node, const std::string& path, synth::GeometryRanges& g) {
  Reader r(node, path);
  r.get_range("lv_center_x", g.lv_center_x);
  r.get_range("lv_center_y", g.lv_center_y);
  r.get_range("ring_outer", g.ring_outer);
  r.get_range("ring_thickness", g.ring_thickness);
  r.get_range("la_offset_x", g.la_offset_x);
  r.get_range("la_offset_y", g.la_offset_y);
  r.get_range("la_radius_x", g.la_radius_x);
  r.get_range("la_radius_y", g.la_radius_y);
  r.get_range("aa_offset_x", g.aa_offset_x);
  r.get_range("aa_offset_y", g.aa_offset_y);
  r.get_range("aa_radius", g.aa_radius);
  r.get("slice_center_jitter", g.slice_center_jitter);
  r.get("slice_radius_jitter", g.slice_radius_jitter);
  r.finish();
}

void read_data(const json& node, DataSection& d) {
  Reader r(node, "data");
  std::string dir = d.dir.string();
  r.get("dir", dir);
  d.dir = dir;
  r.get("extent", d.synth.extent);
  r.get("scans", d.scans);
  r.get("slices_per_scan", d.slices_per_scan);
  r.get("source_seed", d.source_seed);
  r.get("target_seed", d.target_seed);
  r.get("split_seed", d.split_seed);
  r.get("noise_sigma", d.synth.noise_sigma);
  r.get("bias_field", d.synth.bias_field);
  r.get("source_intensities", d.synth.source_intensities);
  r.get("target_intensities", d.synth.target_intensities);
  if (const json* g = r.child("geometry")) read_geometry(*g, r.sub("geometry"), d.synth.geometry);
  r.finish();
}

void read_model(const json& node, VaeConfig& m) {
  Reader r(node, "model");
  r.get("extent", m.extent);
  r.get("in_channels", m.in_channels);
  r.get("encoder_channels", m.encoder_channels);
  r.get("latent_dim", m.latent_dim);
  r.get("decoder_channels", m.decoder_channels);
  r.get("classes", m.classes);
  r.get("lrelu_slope", m.lrelu_slope);
  r.get("dropout_rate", m.dropout_rate);
  r.finish();
}

void read_train(const json& node, ExperimentConfig& c) {
  Reader r(node, "train");
  auto& t = c.train;
  r.get("alpha", t.alpha);
  r.get("beta", t.beta);
  r.get("learning_rate", t.learning_rate);
  r.get("source_batch", t.source_batch);
  r.get("target_batch", t.target_batch);
  r.get("iterations", t.iterations);
  get_enum(r, "ot_solver", t.ot_solver, &train::to_string, &train::ot_solver_from_string);
  r.get("sinkhorn_epsilon", t.sinkhorn_epsilon);
  get_enum(r, "latent_source", t.latent_source, &train::to_string, &train::latent_source_from_string);
  r.get("seed", t.seed);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("adapt_iterations", t.adapt_iterations);
  r.get("adapt_scans", c.adapt_scans);
  r.get("history_capacity", t.history_capacity);
  if (const json* p = r.child("init_checkpoint"); p != nullptr && !p->is_null()) {
    if (!p->is_string()) throw ConfigError("train.init_checkpoint: expected a path string");
    c.init_checkpoint = p->get<std::string>();
  }
  r.finish();
}

void read_eval(const json& node, EvalSection& e) {
  Reader r(node, "eval");
  r.get("split_fraction", e.split_fraction);
  std::string out = e.output_dir.string();
  r.get("output_dir", out);
  e.output_dir = out;
  r.get("batch_size", e.batch_size);
  r.finish();
}

json range_json(const synth::Range& r) { return json::array({r.lo, r.hi}); }

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::oracle: return "oracle";
    case Regime::no_adapt: return "no_adapt";
    case Regime::olva: return "olva";
    case Regime::adapt_few: return "adapt_few";
  }
  return "?";
}

Regime regime_from_string(const std::string& s) {
  if (s == "oracle") return Regime::oracle;
  if (s == "no_adapt") return Regime::no_adapt;
  if (s == "olva") return Regime::olva;
  if (s == "adapt_few") return Regime::adapt_few;
  throw ConfigError("unknown regime '" + s + "' (expected oracle, no_adapt, olva or adapt_few)");
}

void ExperimentConfig::validate() const {
  data.synth.validate();
  model.validate();
  train.validate();
  if (model.extent != data.synth.extent) {
    throw ConfigError("model.extent (" + std::to_string(model.extent) + ") differs from data.extent (" +
                      std::to_string(data.synth.extent) + ")");
  }
  if (model.classes != synth::kClasses) {
    throw ConfigError("model.classes must be " + std::to_string(synth::kClasses) + " for the synthetic data");
  }
  if (model.in_channels != 1) throw ConfigError("model.in_channels must be 1 for the synthetic data");
  if (data.scans < 2) throw ConfigError("data.scans must be at least 2");
  if (data.slices_per_scan == 0) throw ConfigError("data.slices_per_scan must be at least 1");
  if (!(eval.split_fraction > 0.0 && eval.split_fraction <= 1.0)) {
    throw ConfigError("eval.split_fraction must lie in (0, 1]");
  }
  if (eval.batch_size == 0) throw ConfigError("eval.batch_size must be at least 1");
  if (adapt_scans == 0) throw ConfigError("train.adapt_scans must be at least 1");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader root(doc, "config");
  if (const json* d = root.child("data")) read_data(*d, c.data);
  if (const json* m = root.child("model")) read_model(*m, c.model);
  if (const json* t = root.child("train")) read_train(*t, c);
  if (const json* e = root.child("eval")) read_eval(*e, c.eval);
  get_enum(root, "regime", c.regime, &to_string, &regime_from_string);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string dump_config(const ExperimentConfig& c) {
  const auto& g = c.data.synth.geometry;
  json geometry;
  geometry["lv_center_x"] = range_json(g.lv_center_x);
  geometry["lv_center_y"] = range_json(g.lv_center_y);
  geometry["ring_outer"] = range_json(g.ring_outer);
  geometry["ring_thickness"] = range_json(g.ring_thickness);
  geometry["la_offset_x"] = range_json(g.la_offset_x);
  geometry["la_offset_y"] = range_json(g.la_offset_y);
  geometry["la_radius_x"] = range_json(g.la_radius_x);
  geometry["la_radius_y"] = range_json(g.la_radius_y);
  geometry["aa_offset_x"] = range_json(g.aa_offset_x);
  geometry["aa_offset_y"] = range_json(g.aa_offset_y);
  geometry["aa_radius"] = range_json(g.aa_radius);
  geometry["slice_center_jitter"] = g.slice_center_jitter;
  geometry["slice_radius_jitter"] = g.slice_radius_jitter;

  json data;
  data["dir"] = c.data.dir.string();
  data["extent"] = c.data.synth.extent;
  data["scans"] = c.data.scans;
  data["slices_per_scan"] = c.data.slices_per_scan;
  data["source_seed"] = c.data.source_seed;
  data["target_seed"] = c.data.target_seed;
  data["split_seed"] = c.data.split_seed;
  data["noise_sigma"] = c.data.synth.noise_sigma;
  data["bias_field"] = c.data.synth.bias_field;
  data["source_intensities"] = c.data.synth.source_intensities;
  data["target_intensities"] = c.data.synth.target_intensities;
  data["geometry"] = geometry;

  json model;
  model["extent"] = c.model.extent;
  model["in_channels"] = c.model.in_channels;
  model["encoder_channels"] = c.model.encoder_channels;
  model["latent_dim"] = c.model.latent_dim;
  model["decoder_channels"] = c.model.resolved_decoder();
  model["classes"] = c.model.classes;
  model["lrelu_slope"] = c.model.lrelu_slope;
  model["dropout_rate"] = c.model.dropout_rate;

  const auto& t = c.train;
  json tr;
  tr["alpha"] = t.alpha;
  tr["beta"] = t.beta;
  tr["learning_rate"] = t.learning_rate;
  tr["source_batch"] = t.source_batch;
  tr["target_batch"] = t.target_batch;
  tr["iterations"] = t.iterations;
  tr["ot_solver"] = train::to_string(t.ot_solver);
  tr["sinkhorn_epsilon"] = t.sinkhorn_epsilon;
  tr["latent_source"] = train::to_string(t.latent_source);
  tr["seed"] = t.seed;
  tr["checkpoint_every"] = t.checkpoint_every;
  tr["adapt_iterations"] = t.adapt_iterations;
  tr["adapt_scans"] = c.adapt_scans;
  tr["history_capacity"] = t.history_capacity;
  tr["init_checkpoint"] = c.init_checkpoint ? json(c.init_checkpoint->string()) : json(nullptr);

  json ev;
  ev["split_fraction"] = c.eval.split_fraction;
  ev["output_dir"] = c.eval.output_dir.string();
  ev["batch_size"] = c.eval.batch_size;

  json doc;
  doc["data"] = data;
  doc["model"] = model;
  doc["train"] = tr;
  doc["eval"] = ev;
  doc["regime"] = to_string(c.regime);
  return doc.dump(2) + "\n";
}

}  // namespace olva::experiment
