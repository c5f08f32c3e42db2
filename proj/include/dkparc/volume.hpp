#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>

#include "dkparc/error.hpp"

namespace dkparc {

/// Voxel lattice plus its voxel-to-world (RAS+, mm) mapping.
///
/// Spacing is not stored separately: it is the column norms of the affine's
/// upper 3x3, so the two can never disagree.
class Grid {
 public:
  Grid() = default;
  Grid(const Eigen::Vector3i& dims, const Eigen::Matrix4d& affine);

  /// Axis-aligned RAS grid with the given spacing and world origin of voxel 0.
  static Grid axis_aligned(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing,
                           const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

  const Eigen::Vector3i& dims() const { return dims_; }
  const Eigen::Matrix4d& affine() const { return affine_; }
  const Eigen::Matrix4d& inverse_affine() const { return inverse_; }
  Eigen::Vector3d spacing() const { return affine_.topLeftCorner<3, 3>().colwise().norm(); }

  /// Three-letter axis code (e.g. "LIA"): the world direction each voxel axis points toward.
  std::string orientation() const;

  std::int64_t size() const {
    return std::int64_t{dims_[0]} * dims_[1] * dims_[2];
  }
  std::int64_t index(int x, int y, int z) const {
    return x + std::int64_t{dims_[0]} * (y + std::int64_t{dims_[1]} * z);
  }
  Eigen::Vector3i coords(std::int64_t index) const;
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_[0] && y < dims_[1] && z < dims_[2];
  }

  Eigen::Vector3d to_world(const Eigen::Vector3d& voxel) const {
    return affine_.topLeftCorner<3, 3>() * voxel + affine_.topRightCorner<3, 1>();
  }
  Eigen::Vector3d to_voxel(const Eigen::Vector3d& world) const {
    return inverse_.topLeftCorner<3, 3>() * world + inverse_.topRightCorner<3, 1>();
  }
  /// World coordinate of the geometric centre of the voxel lattice.
  Eigen::Vector3d world_center() const {
    return to_world((dims_.cast<double>().array() - 1.0).matrix() * 0.5);
  }

  /// Same dims and affines equal within `tol` (absolute, per element).
  bool matches(const Grid& other, double tol = 1e-6) const;

 private:
  Eigen::Vector3i dims_ = Eigen::Vector3i::Ones();
  Eigen::Matrix4d affine_ = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d inverse_ = Eigen::Matrix4d::Identity();
};

/// Orientation code of an arbitrary affine's upper 3x3.
std::string orientation_code(const Eigen::Matrix3d& linear);

enum class DataType { UInt8, Int32, Float32, Float64 };

template <typename Scalar>
constexpr DataType data_type_of() {
  if constexpr (std::is_same_v<Scalar, std::uint8_t>) return DataType::UInt8;
  else if constexpr (std::is_same_v<Scalar, std::int32_t>) return DataType::Int32;
  else if constexpr (std::is_same_v<Scalar, float>) return DataType::Float32;
  else if constexpr (std::is_same_v<Scalar, double>) return DataType::Float64;
  else static_assert(!sizeof(Scalar), "unsupported voxel type");
}

/// Scalar 3D image. Storage is x-fastest: index = x + nx*(y + ny*z).
template <typename Scalar>
class Volume {
 public:
  using Data = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;
  explicit Volume(Grid grid, Scalar fill = Scalar(0))
      : grid_(std::move(grid)), data_(Data::Constant(grid_.size(), fill)) {}
  Volume(Grid grid, Data data) : grid_(std::move(grid)), data_(std::move(data)) {
    if (data_.size() != grid_.size())
      throw DataError("volume payload has " + std::to_string(data_.size()) + " voxels, grid expects " +
                      std::to_string(grid_.size()));
  }

  const Grid& grid() const { return grid_; }
  const Eigen::Vector3i& dims() const { return grid_.dims(); }
  std::int64_t size() const { return data_.size(); }
  static constexpr DataType data_type() { return data_type_of<Scalar>(); }

  const Data& data() const { return data_; }
  Data& data() { return data_; }

  Scalar operator()(int x, int y, int z) const { return data_[grid_.index(x, y, z)]; }
  Scalar& operator()(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }
  Scalar operator[](std::int64_t i) const { return data_[i]; }
  Scalar& operator[](std::int64_t i) { return data_[i]; }

  /// Voxel value, or `outside` when (x,y,z) is off the lattice.
  Scalar at_or(int x, int y, int z, Scalar outside) const {
    return grid_.contains(x, y, z) ? (*this)(x, y, z) : outside;
  }

  template <typename Other>
  Volume<Other> cast() const {
    return Volume<Other>(grid_, data_.template cast<Other>());
  }

  /// Same grid, new payload.
  template <typename Derived>
  Volume<typename Derived::Scalar> with_data(const Eigen::ArrayBase<Derived>& values) const {
    return Volume<typename Derived::Scalar>(grid_, values.derived());
  }

 private:
  Grid grid_;
  Data data_;
};

using LabelImage = Volume<std::int32_t>;
using MaskImage = Volume<std::uint8_t>;

/// Throws DataError unless both volumes sit on the same grid.
void require_same_grid(const Grid& a, const Grid& b, const char* what);

}  // namespace dkparc
