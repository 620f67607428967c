#include "olva/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "olva/errors.hpp"
#include "olva/vae.hpp"

namespace olva::metrics {
namespace {

void check_pair(const char* op, MaskView a, MaskView b) {
  if (a.height != b.height) {
    throw DimensionError(std::string(op) + ": height axis mismatch (" + std::to_string(a.height) + " vs " +
                         std::to_string(b.height) + ")");
  }
  if (a.width != b.width) {
    throw DimensionError(std::string(op) + ": width axis mismatch (" + std::to_string(a.width) + " vs " +
                         std::to_string(b.width) + ")");
  }
  if (a.pixels.size() != a.height * a.width || b.pixels.size() != b.height * b.width) {
    throw DimensionError(std::string(op) + ": mask buffer does not match its extents");
  }
}

double mean_nearest(const std::vector<std::array<int, 2>>& from, const std::vector<std::array<int, 2>>& to) {
  double total = 0.0;
  for (const auto& p : from) {
    long best = std::numeric_limits<long>::max();
    for (const auto& q : to) {
      const long dy = p[0] - q[0], dx = p[1] - q[1];
      best = std::min(best, dy * dy + dx * dx);
    }
    total += std::sqrt(static_cast<double>(best));
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

double dsc(MaskView pred, MaskView gt) {
  check_pair("dsc", pred, gt);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool a = pred.pixels[i] != 0, b = gt.pixels[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::array<int, 2>> surface(MaskView mask) {
  std::vector<std::array<int, 2>> out;
  const int h = static_cast<int>(mask.height), w = static_cast<int>(mask.width);
  auto in = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && mask.pixels[y * w + x] != 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!in(y, x)) continue;
      if (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1)) out.push_back({y, x});
    }
  }
  return out;
}

std::optional<double> assd(MaskView pred, MaskView gt) {
  check_pair("assd", pred, gt);
  const auto sp = surface(pred);
  const auto sg = surface(gt);
  if (sp.empty() || sg.empty()) return std::nullopt;
  return 0.5 * (mean_nearest(sp, sg) + mean_nearest(sg, sp));
}

void ReportBuilder::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  const std::size_t area = height_ * width_;
  if (predicted.size() != area || truth.size() != area) {
    throw DimensionError("ReportBuilder: label maps must have " + std::to_string(area) + " pixels");
  }
  const double diagonal = std::hypot(static_cast<double>(height_), static_cast<double>(width_));
  std::vector<std::uint8_t> p(area), g(area);
  for (std::size_t k = 0; k < kReportedClasses.size(); ++k) {
    const std::uint8_t label = kReportedClasses[k].label;
    bool any_p = false, any_g = false;
    for (std::size_t i = 0; i < area; ++i) {
      p[i] = predicted[i] == label;
      g[i] = truth[i] == label;
      any_p = any_p || p[i];
      any_g = any_g || g[i];
    }
    const MaskView pv{p, height_, width_}, gv{g, height_, width_};
    dsc_sum_[k] += dsc(pv, gv);
    if (!any_p && !any_g) continue;
    if (any_p != any_g) {
      assd_sum_[k] += diagonal;
      ++assd_count_[k];
      ++assd_missed_[k];
      continue;
    }
    assd_sum_[k] += *assd(pv, gv);
    ++assd_count_[k];
  }
  ++samples_;
}

EvalReport ReportBuilder::finish() const {
  EvalReport r;
  r.samples = samples_;
  if (samples_ == 0) return r;
  double dsc_total = 0.0, assd_total = 0.0;
  std::size_t assd_defined = 0;
  for (std::size_t k = 0; k < kReportedClasses.size(); ++k) {
    r.dsc[k] = dsc_sum_[k] / static_cast<double>(samples_);
    dsc_total += r.dsc[k];
    r.assd_samples[k] = assd_count_[k];
    r.assd_missed[k] = assd_missed_[k];
    if (assd_count_[k] > 0) {
      r.assd[k] = assd_sum_[k] / static_cast<double>(assd_count_[k]);
      assd_total += *r.assd[k];
      ++assd_defined;
    }
  }
  r.mean_dsc = dsc_total / static_cast<double>(kReportedClasses.size());
  if (assd_defined > 0) r.mean_assd = assd_total / static_cast<double>(assd_defined);
  return r;
}

std::vector<std::uint8_t> label_indices(const Tensor& onehot) {
  if (onehot.rank() != 3) throw DimensionError("label_indices: expected [C, H, W], got " + shape_str(onehot.shape()));
  const std::size_t classes = onehot.dim(0), area = onehot.dim(1) * onehot.dim(2);
  std::vector<std::uint8_t> out(area, 0);
  auto v = onehot.data();
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t p = 0; p < area; ++p)
      if (v[c * area + p] > 0.5f) out[p] = static_cast<std::uint8_t>(c);
  return out;
}

EvalReport evaluate(const Predictor& predict, const synth::Dataset& dataset, std::size_t classes,
                    std::size_t batch_size) {
  if (dataset.empty()) throw ContractError("evaluate: empty dataset");
  for (const auto& s : dataset)
    if (!s.label) throw ContractError("evaluate: dataset contains unlabeled samples");
  const std::size_t h = dataset[0].image.dim(1), w = dataset[0].image.dim(2), area = h * w;
  ReportBuilder builder(h, w);
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, dataset.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = predict(synth::stack_images(dataset, idx));
    if (probs.rank() != 4 || probs.dim(0) != count || probs.dim(1) != classes || probs.dim(2) != h ||
        probs.dim(3) != w) {
      throw DimensionError("evaluate: predictor returned " + shape_str(probs.shape()));
    }
    for (std::size_t b = 0; b < count; ++b) {
      const auto pred = hard_labels(probs.data().subspan(b * classes * area, classes * area), classes, area);
      builder.add(pred, label_indices(*dataset[start + b].label));
    }
  }
  return builder.finish();
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["samples"] = report.samples;
  j["assd_unit"] = report.assd_unit;
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < kReportedClasses.size(); ++k) {
    nlohmann::ordered_json c;
    c["label"] = kReportedClasses[k].label;
    c["dsc"] = report.dsc[k];
    c["assd"] = report.assd[k] ? nlohmann::ordered_json(*report.assd[k]) : nlohmann::ordered_json(nullptr);
    c["assd_samples"] = report.assd_samples[k];
    c["assd_missed"] = report.assd_missed[k];
    classes[kReportedClasses[k].name] = c;
  }
  j["classes"] = classes;
  j["mean_dsc"] = report.mean_dsc;
  j["mean_assd"] = report.mean_assd ? nlohmann::ordered_json(*report.mean_assd) : nlohmann::ordered_json(nullptr);
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report, const std::string& row_name) {
  std::ostringstream os;
  const int name_w = static_cast<int>(std::max<std::size_t>(row_name.size(), 7));
  auto cell = [&](std::optional<double> v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(3) << *v;
    } else {
      c << "n/a";
    }
    return c.str();
  };
  os << std::left << std::setw(name_w) << "" << "  " << std::setw(40) << "DSC"
     << "  ASSD (" << report.assd_unit << ")\n";
  os << std::setw(name_w) << "method";
  for (int block = 0; block < 2; ++block) {
    os << "  ";
    for (const auto& c : kReportedClasses) os << std::right << std::setw(7) << c.name << ' ';
    os << std::setw(7) << "avg" << ' ';
  }
  os << '\n' << std::left << std::setw(name_w) << row_name << "  ";
  for (double v : report.dsc) os << std::right << std::setw(7) << cell(v) << ' ';
  os << std::setw(7) << cell(report.mean_dsc) << ' ' << "  ";
  for (const auto& v : report.assd) os << std::setw(7) << cell(v) << ' ';
  os << std::setw(7) << cell(report.mean_assd) << " \n";
  return os.str();
}

}  // namespace olva::metrics
