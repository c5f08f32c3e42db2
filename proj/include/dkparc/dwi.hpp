#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dkparc/volume.hpp"

namespace dkparc {

/// Co-registered diffusion-weighted frames plus their gradient table.
struct DwiSeries {
  std::vector<Volume<float>> volumes;
  Eigen::VectorXd bvalues;     // s/mm^2, one per volume
  Eigen::Matrix3Xd directions;  // unit columns for diffusion-weighted frames

  /// Frames at or below this b-value count as unweighted baselines.
  static constexpr double kBaselineB = 50.0;

  const Grid& grid() const { return volumes.front().grid(); }
  std::size_t frame_count() const { return volumes.size(); }

  /// Throws DataError/ConfigError when the series cannot support a tensor fit:
  /// grid mismatch, no baseline, non-unit directions, or fewer than six independent directions.
  void validate() const;
};

/// FSL sidecars: `.bval` is one line of b-values; `.bvec` is three lines (x, y, z) of components.
/// An N-by-3 layout is accepted and transposed.
Eigen::VectorXd read_bvals(const std::filesystem::path& path);
Eigen::Matrix3Xd read_bvecs(const std::filesystem::path& path);
void write_bvals(const Eigen::VectorXd& bvalues, const std::filesystem::path& path);
void write_bvecs(const Eigen::Matrix3Xd& directions, const std::filesystem::path& path);

/// Loads a 4D NIfTI with its sidecars. When bval/bvec are omitted they are looked up next to
/// the image (same stem, `.bval`/`.bvec`). Diffusion directions within 1e-2 of unit length are
/// renormalised; anything further off is rejected.
DwiSeries read_dwi(const std::filesystem::path& image, std::optional<std::filesystem::path> bval = std::nullopt,
                   std::optional<std::filesystem::path> bvec = std::nullopt);

/// Writes the image and both sidecars next to it.
void write_dwi(const DwiSeries& dwi, const std::filesystem::path& image);

}  // namespace dkparc
