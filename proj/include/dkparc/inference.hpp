#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "dkparc/backend.hpp"
#include "dkparc/labels.hpp"
#include "dkparc/tensor.hpp"

namespace dkparc {

struct SlidingWindowConfig {
  Eigen::Vector3i patch{128, 128, 128};
  double overlap = 0.5;          // per axis, in [0, 1)
  double sigma_fraction = 0.125; // Gaussian sigma as a fraction of the patch edge

  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults. `patch` may be one number or three.
  static SlidingWindowConfig from_json(const nlohmann::json& j);
};

/// Separable Gaussian over a patch, x fastest, peak 1 at the continuous centre (s-1)/2.
Eigen::ArrayXf gaussian_weight(const Eigen::Vector3i& shape, double sigma_fraction);

/// Tile start offsets along one axis: multiples of the stride, the last tile flush with the
/// end. `extent` must already be at least `patch`.
std::vector<int> tile_starts(int extent, int patch, double overlap);

/// Blended class probabilities, voxels x K, on the prediction grid.
struct ProbabilityVolume {
  Grid grid;
  Eigen::ArrayXXf probabilities;
  Eigen::ArrayXf weight;  // accumulated Gaussian weight per voxel

  int classes() const { return static_cast<int>(probabilities.cols()); }
  /// Most probable class per voxel; ties go to the lower class index.
  LabelImage argmax() const;
  Volume<float> channel(int k) const;
};

/// Tiles the volume (zero-padded up to one patch where it is smaller), runs the backend on
/// every tile in a fixed order, blends with the Gaussian and normalises each voxel to sum 1.
/// Throws ContractError when the backend disagrees with the channel/class/patch contract and
/// BackendError when it returns non-finite scores.
ProbabilityVolume sliding_window_predict(std::span<const Volume<float>> channels, SegmenterBackend& backend,
                                         const SlidingWindowConfig& config);

/// Maps fed to both stages, in channel order.
const std::vector<MapCode>& default_input_maps();

/// Scalar maps as float channels, in `codes` order. Throws ConfigError for a missing map.
std::vector<Volume<float>> select_channels(const ScalarMapSet& maps, std::span<const MapCode> codes);

/// Background plus seven groups. The backend must take one channel per map and emit 8 classes.
LabelVolume run_coarse(std::span<const Volume<float>> maps, SegmenterBackend& backend, const SlidingWindowConfig& config);
LabelVolume run_coarse(const ScalarMapSet& maps, SegmenterBackend& backend, const SlidingWindowConfig& config,
                       std::span<const MapCode> codes = default_input_maps());

/// The scalar maps followed by the coarse label divided by the largest group id.
std::vector<Volume<float>> build_fine_input(std::span<const Volume<float>> maps, const LabelVolume& coarse);

/// One fine stage. Class c of the backend is the c-th label of the group's partition; class 0
/// is background. Throws ConfigError for a passthrough or unknown group and ContractError when
/// the backend's class count is not partition size + 1.
LabelVolume run_fine(std::span<const Volume<float>> stack, int group, SegmenterBackend& backend,
                     const LabelSchema& schema, const SlidingWindowConfig& config);

}  // namespace dkparc
