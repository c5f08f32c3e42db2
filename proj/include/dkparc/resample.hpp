#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>

#include "dkparc/volume.hpp"

namespace dkparc {

enum class Interpolation { Nearest, Trilinear };

Interpolation parse_interpolation(const std::string& name);

/// Spatial mapping between two world frames (mm). Resampling uses it in pull form:
/// each target-grid world point is sent through the transform to find where to sample the source.
class GridTransform {
 public:
  enum class Kind { Affine, Displacement };

  /// Displacement field: three volumes (x, y, z offsets in mm) on a common grid.
  using Field = std::array<Volume<float>, 3>;

  GridTransform() : GridTransform(Eigen::Matrix4d::Identity()) {}
  /// Throws TransformError when the matrix is singular or non-finite.
  explicit GridTransform(const Eigen::Matrix4d& affine);
  /// Throws TransformError unless every offset is finite. `inverse`, when given, is the
  /// field that undoes this one and makes inverse() available.
  explicit GridTransform(Field field, std::optional<Field> inverse = std::nullopt);

  static GridTransform identity() { return GridTransform(); }

  Kind kind() const { return kind_; }
  const Eigen::Matrix4d& matrix() const { return affine_; }
  bool is_identity(double tol = 1e-12) const;
  bool invertible() const { return kind_ == Kind::Affine || inverse_field_ != nullptr; }

  Eigen::Vector3d apply(const Eigen::Vector3d& world) const;
  /// Throws TransformError when no inverse is available.
  GridTransform inverse() const;

 private:
  Kind kind_ = Kind::Affine;
  Eigen::Matrix4d affine_ = Eigen::Matrix4d::Identity();
  std::shared_ptr<const Field> field_;
  std::shared_ptr<const Field> inverse_field_;
};

/// `.json` holds {"affine": [16 numbers, row-major]}; NIfTI holds a 3-frame displacement field.
/// A sibling file with suffix `_inverse` (same extension) supplies a field inverse when present.
GridTransform read_transform(const std::filesystem::path& path);
void write_transform(const GridTransform& transform, const std::filesystem::path& path);

/// Samples `source` on `target`. `target_to_source` maps target world coordinates into the
/// source world frame. Samples falling outside the source lattice (beyond the outer half voxel)
/// are 0. Nearest mode only ever copies existing voxel values.
template <typename Scalar>
Volume<Scalar> resample_to(const Volume<Scalar>& source, const Grid& target,
                           const GridTransform& target_to_source, Interpolation mode);

/// Canonical conformed lattice: cubic, isotropic, LIA.
struct ConformSpec {
  int dim = 256;
  double spacing = 1.0;
};

/// LIA grid of `spec` whose field of view is centred at `world_center`.
Grid conformed_grid(const Eigen::Vector3d& world_center, const ConformSpec& spec = {});
inline Grid conformed_grid(const Grid& source, const ConformSpec& spec = {}) {
  return conformed_grid(source.world_center(), spec);
}

/// Resamples onto the conformed grid centred on the input's world centre.
template <typename Scalar>
Volume<Scalar> conform(const Volume<Scalar>& volume, Interpolation mode, const ConformSpec& spec = {});

}  // namespace dkparc
