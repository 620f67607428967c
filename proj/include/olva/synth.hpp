#pragma once

// Synthetic two-domain segmentation data. Both domains draw anatomy from the
// same geometric sampler; they differ only in how classes are rendered to
// intensities, which produces a controlled appearance shift.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "olva/rng.hpp"
#include "olva/tensor.hpp"

namespace olva::synth {

inline constexpr std::size_t kClasses = 5;  // background, LV-M, LV-B, LA-B, A-A

enum class Domain : std::uint8_t { source = 0, target = 1 };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Closed intervals [lo, hi] in pixels, expressed for a 32-pixel image and
/// scaled linearly with the configured extent.
struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct GeometryRanges {
  Range lv_center_x{9.5, 11.5};
  Range lv_center_y{14.5, 16.5};
  Range ring_outer{5.5, 7.0};
  Range ring_thickness{2.0, 3.0};
  Range la_offset_x{11.0, 13.0};
  Range la_offset_y{-8.5, -7.0};
  Range la_radius_x{4.5, 5.5};
  Range la_radius_y{3.5, 4.5};
  Range aa_offset_x{10.0, 12.0};
  Range aa_offset_y{7.0, 8.0};
  Range aa_radius{4.5, 5.5};
  /// Per-slice perturbation around the scan's anatomy (centers, radii).
  double slice_center_jitter = 0.75;
  double slice_radius_jitter = 0.3;
};

struct SynthConfig {
  std::size_t extent = 32;
  double noise_sigma = 0.05;
  bool bias_field = true;
  std::array<double, kClasses> source_intensities = {0.1, 0.7, 0.4, 0.6, 0.8};
  std::array<double, kClasses> target_intensities = {0.8, 0.3, 0.6, 0.2, 0.1};
  GeometryRanges geometry;

  const std::array<double, kClasses>& intensities(Domain d) const {
    return d == Domain::source ? source_intensities : target_intensities;
  }
  void validate() const;
};

/// One slice's anatomy, in pixel coordinates of the configured extent.
struct AnatomySpec {
  double lv_x = 0, lv_y = 0, ring_outer = 0, ring_thickness = 0;
  double la_x = 0, la_y = 0, la_rx = 0, la_ry = 0;
  double aa_x = 0, aa_y = 0, aa_r = 0;

  double ring_inner() const { return ring_outer - ring_thickness; }
};

inline constexpr int kPlacementMargin = 2;
inline constexpr int kPlacementTries = 100;

/// True when every structure sits inside the margin and the ring, ellipse
/// and small disk keep at least one pixel between each other.
bool placement_valid(const AnatomySpec& a, std::size_t extent);

/// Class index per pixel, row-major [extent * extent].
std::vector<std::uint8_t> rasterize(const AnatomySpec& a, std::size_t extent);

struct SamplePair {
  Tensor image;                // [1, H, W], values in [0, 1]
  std::optional<Tensor> label; // [C, H, W], one-hot
  Domain domain = Domain::source;
  std::uint32_t scan_id = 0;
  std::uint32_t slice = 0;
};

using Dataset = std::vector<SamplePair>;

/// Per-sample streams are derived from hash(seed, scan, slice), so the
/// output does not depend on generation order. Geometry streams ignore the
/// domain: equal seeds give equal label maps in both domains. Throws
/// ContractError when a scan's anatomy cannot be placed in 100 tries.
Dataset generate_dataset(std::size_t n_scans, std::size_t slices_per_scan, Domain domain, std::uint64_t seed,
                         const SynthConfig& config);

/// Scan-level anatomy for (seed, scan); exposed for tests.
AnatomySpec sample_scan_anatomy(const SynthConfig& config, std::uint64_t seed, std::uint32_t scan);

/// Scan-level split: round(fraction * scans) scans go to the first part, in
/// an order shuffled by `seed`. Throws ContractError for fewer than 2 scans.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed = 0);

std::vector<std::uint32_t> scan_ids(const Dataset& dataset);
/// Samples whose scan id is in `ids`, in dataset order.
Dataset select_scans(const Dataset& dataset, std::span<const std::uint32_t> ids);

/// Images of the selected samples stacked as [B, 1, H, W].
Tensor stack_images(const Dataset& dataset, std::span<const std::size_t> indices);
/// Labels of the selected samples stacked as [B, C, H, W]; throws
/// ContractError if any is unlabeled.
Tensor stack_labels(const Dataset& dataset, std::span<const std::size_t> indices);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace olva::synth
