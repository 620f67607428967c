#pragma once

// Overlap and boundary metrics on binary masks, and the per-class report
// used to compare training regimes.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "olva/synth.hpp"
#include "olva/tensor.hpp"

namespace olva::metrics {

/// Binary mask view: row-major, non-zero means inside.
struct MaskView {
  std::span<const std::uint8_t> pixels;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// 2|P & G| / (|P| + |G|); 1 when both masks are empty.
double dsc(MaskView pred, MaskView gt);

/// Mask pixels having a 4-neighbour outside the mask (or off the image).
std::vector<std::array<int, 2>> surface(MaskView mask);

/// Average symmetric surface distance in pixels; nullopt when either mask
/// is empty.
std::optional<double> assd(MaskView pred, MaskView gt);

/// Reported structure classes in table order, with their label index.
struct ReportedClass {
  const char* name;
  std::uint8_t label;
};
inline constexpr std::array<ReportedClass, 4> kReportedClasses = {
    ReportedClass{"LV-M", 1}, ReportedClass{"LA-B", 3}, ReportedClass{"LV-B", 2}, ReportedClass{"A-A", 4}};

struct EvalReport {
  std::array<double, 4> dsc{};                 // table order
  std::array<std::optional<double>, 4> assd{}; // nullopt when no sample defines it
  std::array<std::size_t, 4> assd_samples{};   // samples contributing to each ASSD mean
  std::array<std::size_t, 4> assd_missed{};    // one-sided empty: penalized with the image diagonal
  double mean_dsc = 0.0;
  std::optional<double> mean_assd;
  std::size_t samples = 0;
  std::string assd_unit = "px";
};

/// Accumulates per-sample hard label maps into an EvalReport.
class ReportBuilder {
 public:
  ReportBuilder(std::size_t height, std::size_t width) : height_(height), width_(width) {}
  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  EvalReport finish() const;

 private:
  std::size_t height_, width_;
  std::size_t samples_ = 0;
  std::array<double, 4> dsc_sum_{};
  std::array<double, 4> assd_sum_{};
  std::array<std::size_t, 4> assd_count_{};
  std::array<std::size_t, 4> assd_missed_{};
};

/// Maps a batch of images [B, 1, H, W] to class probabilities [B, C, H, W].
using Predictor = std::function<Tensor(const Tensor& images)>;

/// Scores a labeled dataset. Predictions are reduced to hard labels by the
/// argmax / 0.5-background rule. Throws ContractError for unlabeled data.
EvalReport evaluate(const Predictor& predict, const synth::Dataset& dataset, std::size_t classes,
                    std::size_t batch_size = 64);

/// One-hot [C, H, W] label tensor back to class indices.
std::vector<std::uint8_t> label_indices(const Tensor& onehot);

std::string report_json(const EvalReport& report);
/// Aligned text table: DSC and ASSD blocks with columns LV-M LA-B LV-B A-A avg.
std::string report_table(const EvalReport& report, const std::string& row_name);

}  // namespace olva::metrics
