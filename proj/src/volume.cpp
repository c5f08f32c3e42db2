#include "dkparc/volume.hpp"
#include "dkparc/parallel.hpp"

#include <atomic>
#include <cmath>

namespace dkparc {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads = std::max(1, n); }
int thread_count() { return g_threads; }

Grid::Grid(const Eigen::Vector3i& dims, const Eigen::Matrix4d& affine) : dims_(dims), affine_(affine) {
  if ((dims.array() <= 0).any())
    throw DataError("grid dimensions must be positive");
  if (!affine.allFinite())
    throw DataError("grid affine has non-finite entries");
  const double det = affine.topLeftCorner<3, 3>().determinant();
  if (std::abs(det) <= 1e-12)
    throw DataError("grid affine is singular");
  affine_.row(3) << 0, 0, 0, 1;
  inverse_ = affine_.inverse();
}

Grid Grid::axis_aligned(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing,
                        const Eigen::Vector3d& origin) {
  if ((spacing.array() <= 0).any())
    throw DataError("grid spacing must be strictly positive");
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  a.topLeftCorner<3, 3>() = spacing.asDiagonal();
  a.topRightCorner<3, 1>() = origin;
  return Grid(dims, a);
}

std::string Grid::orientation() const { return orientation_code(affine_.topLeftCorner<3, 3>()); }

Eigen::Vector3i Grid::coords(std::int64_t index) const {
  const std::int64_t nx = dims_[0];
  const std::int64_t nxy = nx * dims_[1];
  const auto z = index / nxy;
  const auto rem = index - z * nxy;
  return {static_cast<int>(rem % nx), static_cast<int>(rem / nx), static_cast<int>(z)};
}

bool Grid::matches(const Grid& other, double tol) const {
  return dims_ == other.dims_ && (affine_ - other.affine_).cwiseAbs().maxCoeff() <= tol;
}

std::string orientation_code(const Eigen::Matrix3d& linear) {
  static constexpr char kPositive[3] = {'R', 'A', 'S'};
  static constexpr char kNegative[3] = {'L', 'P', 'I'};
  std::string code(3, '?');
  bool used[3] = {false, false, false};
  // Greedy by largest absolute component, so oblique grids still get a permutation.
  for (int pass = 0; pass < 3; ++pass) {
    double best = -1;
    int best_axis = 0, best_world = 0;
    for (int axis = 0; axis < 3; ++axis) {
      if (code[axis] != '?') continue;
      for (int w = 0; w < 3; ++w) {
        if (used[w]) continue;
        if (std::abs(linear(w, axis)) > best) {
          best = std::abs(linear(w, axis));
          best_axis = axis;
          best_world = w;
        }
      }
    }
    used[best_world] = true;
    code[best_axis] = linear(best_world, best_axis) >= 0 ? kPositive[best_world] : kNegative[best_world];
  }
  return code;
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.matches(b, 1e-4))
    throw DataError(std::string(what) + ": volumes do not share a grid");
}

}  // namespace dkparc
