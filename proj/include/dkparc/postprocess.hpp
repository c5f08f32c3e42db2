#pragma once

#include <json.hpp>

#include "dkparc/labels.hpp"
#include "dkparc/resample.hpp"

namespace dkparc {

enum class Connectivity { Six = 6, Eighteen = 18, TwentySix = 26 };

/// Throws ConfigError unless n is 6, 18 or 26.
Connectivity connectivity_from_int(int n);

struct PostprocessConfig {
  Connectivity connectivity = Connectivity::TwentySix;
  int dilation_iterations = -1;  // negative: until stable

  nlohmann::json to_json() const;
  static PostprocessConfig from_json(const nlohmann::json& j);
};

/// Binary mask of the voxels a coarse volume assigns to `group`.
MaskImage group_mask(const LabelVolume& coarse, int group);

/// Zeroes fine voxels the coarse volume does not assign to `group`.
LabelVolume restrict_to_coarse(const LabelVolume& fine, const LabelVolume& coarse, int group);

/// Grows labels into unlabelled mask voxels one 6-neighbour shell per iteration. Each new
/// voxel takes the smallest label among its labelled neighbours from the previous shell;
/// labelled voxels never change. `max_iterations < 0` runs until nothing changes.
LabelVolume dilate_into_mask(const LabelVolume& fine, const MaskImage& mask, int max_iterations = -1);

/// Keeps only the largest connected component of every nonzero label. Equal sizes go to the
/// component whose smallest (x, y, z) voxel is lexicographically first.
LabelVolume largest_component(const LabelVolume& labels, Connectivity connectivity = Connectivity::TwentySix);

/// Full clean-up of one fine stage: restrict, dilate, keep the largest components, then
/// dilate again so the holes left by removed fragments are refilled from the surviving labels.
/// The refill makes the chain idempotent; without it a second pass would keep growing labels.
LabelVolume postprocess_group(const LabelVolume& fine, const LabelVolume& coarse, int group,
                              const PostprocessConfig& config = {});

/// Nearest-neighbour resampling from the conformed grid back onto `native`.
/// `conformed_to_native` is the transform used when conforming (conformed world -> native world);
/// its inverse is applied here, so it must be invertible (TransformError otherwise).
LabelVolume to_native(const LabelVolume& labels, const GridTransform& conformed_to_native, const Grid& native);

}  // namespace dkparc
