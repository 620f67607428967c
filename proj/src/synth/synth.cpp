#include "olva/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "olva/checkpoint.hpp"
#include "olva/errors.hpp"

namespace olva::synth {
namespace {

constexpr std::uint64_t kGeometryTag = 0x67656f6d;    // "geom"
constexpr std::uint64_t kSliceTag = 0x736c6963;       // "slic"
constexpr std::uint64_t kAppearanceTag = 0x61707072;  // "appr"
constexpr std::uint64_t kSplitTag = 0x73706c74;       // "splt"

double draw(CounterRng& rng, Range r, double scale) { return scale * rng.uniform(r.lo, r.hi); }

double pixel_center(std::size_t i) { return static_cast<double>(i) + 0.5; }

// Per-structure masks: 1 ring, 2 inner disk, 3 ellipse, 4 small disk.
std::uint8_t classify(const AnatomySpec& a, double x, double y) {
  const double r_lv = std::hypot(x - a.lv_x, y - a.lv_y);
  if (r_lv <= a.ring_inner()) return 2;
  if (r_lv <= a.ring_outer) return 1;
  const double ex = (x - a.la_x) / a.la_rx, ey = (y - a.la_y) / a.la_ry;
  if (ex * ex + ey * ey <= 1.0) return 3;
  if (std::hypot(x - a.aa_x, y - a.aa_y) <= a.aa_r) return 4;
  return 0;
}

// Which of the three separate bodies (ring+disk, ellipse, small disk) covers
// a pixel, ignoring precedence. Bit 0: LV, bit 1: LA, bit 2: A-A.
unsigned bodies_at(const AnatomySpec& a, double x, double y) {
  unsigned bits = 0;
  if (std::hypot(x - a.lv_x, y - a.lv_y) <= a.ring_outer) bits |= 1u;
  const double ex = (x - a.la_x) / a.la_rx, ey = (y - a.la_y) / a.la_ry;
  if (ex * ex + ey * ey <= 1.0) bits |= 2u;
  if (std::hypot(x - a.aa_x, y - a.aa_y) <= a.aa_r) bits |= 4u;
  return bits;
}

AnatomySpec draw_anatomy(const GeometryRanges& g, CounterRng& rng, double scale) {
  AnatomySpec a;
  a.lv_x = draw(rng, g.lv_center_x, scale);
  a.lv_y = draw(rng, g.lv_center_y, scale);
  a.ring_outer = draw(rng, g.ring_outer, scale);
  a.ring_thickness = draw(rng, g.ring_thickness, scale);
  a.la_x = a.lv_x + draw(rng, g.la_offset_x, scale);
  a.la_y = a.lv_y + draw(rng, g.la_offset_y, scale);
  a.la_rx = draw(rng, g.la_radius_x, scale);
  a.la_ry = draw(rng, g.la_radius_y, scale);
  a.aa_x = a.lv_x + draw(rng, g.aa_offset_x, scale);
  a.aa_y = a.lv_y + draw(rng, g.aa_offset_y, scale);
  a.aa_r = draw(rng, g.aa_radius, scale);
  return a;
}

AnatomySpec jitter(const AnatomySpec& base, const GeometryRanges& g, CounterRng& rng, double scale) {
  const double c = g.slice_center_jitter * scale, r = g.slice_radius_jitter * scale;
  AnatomySpec a = base;
  const double dx = rng.uniform(-c, c), dy = rng.uniform(-c, c);
  a.lv_x += dx;
  a.lv_y += dy;
  a.la_x += dx + rng.uniform(-c, c) * 0.5;
  a.la_y += dy + rng.uniform(-c, c) * 0.5;
  a.aa_x += dx + rng.uniform(-c, c) * 0.5;
  a.aa_y += dy + rng.uniform(-c, c) * 0.5;
  a.ring_outer += rng.uniform(-r, r);
  a.ring_thickness += rng.uniform(-r, r) * 0.5;
  a.la_rx += rng.uniform(-r, r);
  a.la_ry += rng.uniform(-r, r);
  a.aa_r += rng.uniform(-r, r);
  return a;
}

std::string describe(const AnatomySpec& a) {
  std::ostringstream os;
  os << "lv=(" << a.lv_x << "," << a.lv_y << ") outer=" << a.ring_outer << " thickness=" << a.ring_thickness
     << " la=(" << a.la_x << "," << a.la_y << ") radii=(" << a.la_rx << "," << a.la_ry << ") aa=(" << a.aa_x << ","
     << a.aa_y << ") r=" << a.aa_r;
  return os.str();
}

// Random quadratic over [-1, 1]^2, min-max normalized to [0.9, 1.1].
std::vector<double> bias_field(CounterRng& rng, std::size_t extent) {
  double coef[5];
  for (double& c : coef) c = rng.uniform(-1.0, 1.0);
  std::vector<double> field(extent * extent);
  const double half = static_cast<double>(extent) / 2.0;
  for (std::size_t y = 0; y < extent; ++y) {
    for (std::size_t x = 0; x < extent; ++x) {
      const double u = (pixel_center(x) - half) / half, v = (pixel_center(y) - half) / half;
      field[y * extent + x] = coef[0] * u + coef[1] * v + coef[2] * u * u + coef[3] * u * v + coef[4] * v * v;
    }
  }
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double lo_v = *lo, span = *hi - *lo;
  for (double& f : field) f = span > 1e-12 ? 0.9 + 0.2 * (f - lo_v) / span : 1.0;
  return field;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + s + "' (expected source or target)");
}

void SynthConfig::validate() const {
  if (extent < 8) throw ConfigError("data.extent must be at least 8");
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be non-negative");
  for (const auto* table : {&source_intensities, &target_intensities}) {
    for (double v : *table)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("intensity tables must lie in [0, 1]");
  }
}

bool placement_valid(const AnatomySpec& a, std::size_t extent) {
  if (!(a.ring_thickness >= 1.0) || !(a.ring_inner() > 0.0)) return false;
  if (!(a.la_rx > 0.0 && a.la_ry > 0.0 && a.aa_r > 0.0)) return false;
  const double lo = kPlacementMargin, hi = static_cast<double>(extent) - kPlacementMargin;
  auto inside = [&](double cx, double cy, double rx, double ry) {
    return cx - rx >= lo && cx + rx <= hi && cy - ry >= lo && cy + ry <= hi;
  };
  if (!inside(a.lv_x, a.lv_y, a.ring_outer, a.ring_outer)) return false;
  if (!inside(a.la_x, a.la_y, a.la_rx, a.la_ry)) return false;
  if (!inside(a.aa_x, a.aa_y, a.aa_r, a.aa_r)) return false;

  // Distinct bodies may neither overlap nor touch (8-neighbourhood).
  std::vector<unsigned> bits(extent * extent);
  for (std::size_t y = 0; y < extent; ++y)
    for (std::size_t x = 0; x < extent; ++x) bits[y * extent + x] = bodies_at(a, pixel_center(x), pixel_center(y));
  for (std::size_t y = 0; y < extent; ++y) {
    for (std::size_t x = 0; x < extent; ++x) {
      const unsigned here = bits[y * extent + x];
      if (here == 0) continue;
      if (here & (here - 1)) return false;
      for (std::size_t yy = (y ? y - 1 : 0); yy <= std::min(y + 1, extent - 1); ++yy) {
        for (std::size_t xx = (x ? x - 1 : 0); xx <= std::min(x + 1, extent - 1); ++xx) {
          const unsigned there = bits[yy * extent + xx];
          if (there != 0 && there != here) return false;
        }
      }
    }
  }
  return true;
}

std::vector<std::uint8_t> rasterize(const AnatomySpec& a, std::size_t extent) {
  std::vector<std::uint8_t> labels(extent * extent);
  for (std::size_t y = 0; y < extent; ++y)
    for (std::size_t x = 0; x < extent; ++x) labels[y * extent + x] = classify(a, pixel_center(x), pixel_center(y));
  return labels;
}

AnatomySpec sample_scan_anatomy(const SynthConfig& config, std::uint64_t seed, std::uint32_t scan) {
  const double scale = static_cast<double>(config.extent) / 32.0;
  CounterRng rng = CounterRng(seed).derive({kGeometryTag, scan});
  AnatomySpec a;
  for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
    a = draw_anatomy(config.geometry, rng, scale);
    if (placement_valid(a, config.extent)) return a;
  }
  throw ContractError("structure placement failed for scan " + std::to_string(scan) + " after " +
                      std::to_string(kPlacementTries) + " tries; last attempt: " + describe(a));
}

Dataset generate_dataset(std::size_t n_scans, std::size_t slices_per_scan, Domain domain, std::uint64_t seed,
                         const SynthConfig& config) {
  config.validate();
  if (n_scans == 0) throw ContractError("generate_dataset: n_scans must be at least 1");
  if (slices_per_scan == 0) throw ContractError("generate_dataset: slices_per_scan must be at least 1");
  const std::size_t extent = config.extent, area = extent * extent;
  const double scale = static_cast<double>(extent) / 32.0;
  const auto& table = config.intensities(domain);
  const CounterRng root(seed);

  Dataset out;
  out.reserve(n_scans * slices_per_scan);
  for (std::uint32_t scan = 0; scan < n_scans; ++scan) {
    const AnatomySpec base = sample_scan_anatomy(config, seed, scan);
    for (std::uint32_t slice = 0; slice < slices_per_scan; ++slice) {
      CounterRng geo = root.derive({kSliceTag, scan, slice});
      AnatomySpec a = jitter(base, config.geometry, geo, scale);
      int attempt = 1;
      while (!placement_valid(a, extent)) {
        if (++attempt > kPlacementTries) {
          throw ContractError("structure placement failed for scan " + std::to_string(scan) + " slice " +
                              std::to_string(slice) + ": " + describe(a));
        }
        a = jitter(base, config.geometry, geo, scale);
      }
      const auto labels = rasterize(a, extent);

      CounterRng look = root.derive({kAppearanceTag, static_cast<std::uint64_t>(domain), scan, slice});
      const auto field = config.bias_field ? bias_field(look, extent) : std::vector<double>(area, 1.0);
      std::vector<float> image(area);
      std::vector<float> onehot(kClasses * area, 0.0f);
      for (std::size_t p = 0; p < area; ++p) {
        double v = table[labels[p]] * field[p];
        if (config.noise_sigma > 0.0) v += config.noise_sigma * look.normal();
        image[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        onehot[labels[p] * area + p] = 1.0f;
      }
      SamplePair s;
      s.image = Tensor::from(Shape{1, extent, extent}, std::move(image));
      s.label = Tensor::from(Shape{kClasses, extent, extent}, std::move(onehot));
      s.domain = domain;
      s.scan_id = scan;
      s.slice = slice;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::uint32_t> scan_ids(const Dataset& dataset) {
  std::set<std::uint32_t> ids;
  for (const auto& s : dataset) ids.insert(s.scan_id);
  return {ids.begin(), ids.end()};
}

Dataset select_scans(const Dataset& dataset, std::span<const std::uint32_t> ids) {
  const std::set<std::uint32_t> wanted(ids.begin(), ids.end());
  Dataset out;
  for (const auto& s : dataset)
    if (wanted.contains(s.scan_id)) out.push_back(s);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ContractError("split: fraction must lie in [0, 1]");
  auto ids = scan_ids(dataset);
  if (ids.size() < 2) throw ContractError("split: need at least 2 scans, got " + std::to_string(ids.size()));
  CounterRng rng = CounterRng(seed).derive({kSplitTag});
  for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  std::vector<std::uint32_t> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::uint32_t> eval_ids(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return {select_scans(dataset, train_ids), select_scans(dataset, eval_ids)};
}

Tensor stack_images(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("stack_images: empty selection");
  const Shape& shape = dataset.at(indices[0]).image.shape();
  std::vector<float> values;
  values.reserve(indices.size() * shape_numel(shape));
  for (std::size_t idx : indices) {
    const auto& img = dataset.at(idx).image;
    if (img.shape() != shape) throw DimensionError("stack_images: sample " + std::to_string(idx) + " has a different shape");
    values.insert(values.end(), img.data().begin(), img.data().end());
  }
  Shape out{indices.size()};
  out.insert(out.end(), shape.begin(), shape.end());
  return Tensor::from(std::move(out), std::move(values));
}

Tensor stack_labels(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("stack_labels: empty selection");
  const auto& first = dataset.at(indices[0]).label;
  if (!first) throw ContractError("stack_labels: sample " + std::to_string(indices[0]) + " is unlabeled");
  const Shape& shape = first->shape();
  std::vector<float> values;
  values.reserve(indices.size() * shape_numel(shape));
  for (std::size_t idx : indices) {
    const auto& lab = dataset.at(idx).label;
    if (!lab) throw ContractError("stack_labels: sample " + std::to_string(idx) + " is unlabeled");
    values.insert(values.end(), lab->data().begin(), lab->data().end());
  }
  Shape out{indices.size()};
  out.insert(out.end(), shape.begin(), shape.end());
  return Tensor::from(std::move(out), std::move(values));
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.empty()) {
    save_checkpoint(path, {});
    return;
  }
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<float> ids, slices, domains;
  bool labeled = true;
  for (const auto& s : dataset) {
    ids.push_back(static_cast<float>(s.scan_id));
    slices.push_back(static_cast<float>(s.slice));
    domains.push_back(static_cast<float>(static_cast<int>(s.domain)));
    labeled = labeled && s.label.has_value();
  }
  const Shape n{dataset.size()};
  std::vector<NamedTensor> tensors = {
      {"images", stack_images(dataset, all)},
      {"scan_ids", Tensor::from(n, std::move(ids))},
      {"slices", Tensor::from(n, std::move(slices))},
      {"domains", Tensor::from(n, std::move(domains))},
  };
  if (labeled) tensors.push_back({"labels", stack_labels(dataset, all)});
  save_checkpoint(path, tensors);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto tensors = load_checkpoint(path);
  if (tensors.empty()) return {};
  const Tensor* labels = nullptr;
  for (const auto& nt : tensors)
    if (nt.name == "labels") labels = &nt.tensor;
  try {
    const Tensor& images = find_tensor(tensors, "images");
    const Tensor& ids = find_tensor(tensors, "scan_ids");
    const Tensor& slices = find_tensor(tensors, "slices");
    const Tensor& domains = find_tensor(tensors, "domains");
    if (images.rank() != 4) throw ConfigError("images must be [N, 1, H, W]");
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t image_size = c * h * w;
    Dataset out(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = images.data().subspan(i * image_size, image_size);
      out[i].image = Tensor::from(Shape{c, h, w}, std::vector<float>(src.begin(), src.end()));
      out[i].scan_id = static_cast<std::uint32_t>(ids.at(i));
      out[i].slice = static_cast<std::uint32_t>(slices.at(i));
      out[i].domain = domains.at(i) == 0.0f ? Domain::source : Domain::target;
      if (labels != nullptr) {
        const std::size_t label_size = labels->numel() / n;
        auto lab = labels->data().subspan(i * label_size, label_size);
        out[i].label = Tensor::from(Shape{label_size / (h * w), h, w}, std::vector<float>(lab.begin(), lab.end()));
      }
    }
    return out;
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": not a dataset file (" + e.what() + ")");
  }
}

}  // namespace olva::synth
