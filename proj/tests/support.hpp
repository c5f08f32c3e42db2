#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "dkparc/labels.hpp"
#include "dkparc/resample.hpp"
#include "dkparc/tensor.hpp"

namespace testing {

using namespace dkparc;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dkparc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Uniformly distributed rotation (normalised Gaussian quaternion).
inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Eigen::Matrix3d random_spd(std::mt19937_64& rng, double lo = 1e-4, double hi = 3e-3) {
  std::uniform_real_distribution<double> u(lo, hi);
  const Eigen::Matrix3d r = random_rotation(rng);
  return r * Eigen::Vector3d(u(rng), u(rng), u(rng)).asDiagonal() * r.transpose();
}

/// One b0 then twelve non-collinear unit directions at b = 1000.
inline void twelve_direction_scheme(Eigen::VectorXd& bvals, Eigen::Matrix3Xd& dirs) {
  const double raw[12][3] = {{1, 0, 0},  {0, 1, 0},  {0, 0, 1},  {1, 1, 0},  {1, 0, 1}, {0, 1, 1},
                             {1, -1, 0}, {1, 0, -1}, {0, 1, -1}, {1, 1, 1}, {1, -1, 1}, {1, 1, -1}};
  bvals.resize(13);
  dirs.resize(3, 13);
  bvals[0] = 0;
  dirs.col(0).setZero();
  for (int i = 0; i < 12; ++i) {
    bvals[i + 1] = 1000;
    dirs.col(i + 1) = Eigen::Vector3d(raw[i][0], raw[i][1], raw[i][2]).normalized();
  }
}

/// DWI series whose every voxel carries the noiseless signal of its own tensor.
inline DwiSeries synthetic_dwi(const Grid& grid, const std::vector<Eigen::Matrix3d>& tensors, double s0,
                               const Eigen::VectorXd& bvals, const Eigen::Matrix3Xd& dirs) {
  DwiSeries dwi;
  dwi.bvalues = bvals;
  dwi.directions = dirs;
  for (Eigen::Index f = 0; f < bvals.size(); ++f) dwi.volumes.emplace_back(grid);
  for (std::int64_t v = 0; v < grid.size(); ++v) {
    const auto s = synthesize_signal(tensor_components(tensors[static_cast<std::size_t>(v)]), s0, bvals, dirs);
    for (Eigen::Index f = 0; f < bvals.size(); ++f) dwi.volumes[static_cast<std::size_t>(f)][v] = static_cast<float>(s[f]);
  }
  return dwi;
}

/// Conformed-style LIA grid of edge `n` centred at the world origin.
inline Grid lia_grid(int n) { return conformed_grid(Eigen::Vector3d::Zero(), ConformSpec{n, 1.0}); }

/// Fine-label phantom: every schema label becomes one axis-aligned box inside a cubic grid,
/// laid out on a regular lattice with a background margin. Each label is one connected component.
inline LabelVolume box_phantom(const Grid& grid, const LabelSchema& schema, int margin = 2) {
  const int n = grid.dims()[0];
  const int labels = schema.label_count();
  int cells = 1;
  while (cells * cells * cells < labels) ++cells;
  const int inner = n - 2 * margin;
  LabelVolume out{LabelImage(grid), LabelSpace::FineInternal};
  for (int z = 0; z < inner; ++z)
    for (int y = 0; y < inner; ++y)
      for (int x = 0; x < inner; ++x) {
        const int cx = x * cells / inner, cy = y * cells / inner, cz = z * cells / inner;
        const int id = 1 + cx + cells * (cy + cells * cz);
        if (id <= labels) out.image(x + margin, y + margin, z + margin) = id;
      }
  return out;
}

/// Class-index volume for an oracle backend: coarse groups (group == 0) or a fine partition.
inline LabelImage oracle_classes(const LabelVolume& fine, const LabelSchema& schema, int group) {
  LabelImage out(fine.grid());
  for (std::int64_t v = 0; v < out.size(); ++v) {
    const int id = fine.image[v];
    if (id == 0) continue;
    if (group == 0) {
      out[v] = schema.group_of(id);
    } else if (schema.group_of(id) == group) {
      const auto& part = schema.partition(group);
      out[v] = static_cast<int>(std::find(part.begin(), part.end(), id) - part.begin()) + 1;
    }
  }
  return out;
}

/// Brute-force HD95 on 6-neighbour boundaries: all pairs, pooled, linear-interpolated percentile.
inline std::optional<double> brute_force_hd95(const MaskImage& a, const MaskImage& b, const Eigen::Vector3d& spacing) {
  auto boundary = [](const MaskImage& m) {
    std::vector<Eigen::Vector3i> out;
    const Eigen::Vector3i d = m.dims();
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          if (!m(x, y, z)) continue;
          const bool edge = !m.at_or(x - 1, y, z, 0) || !m.at_or(x + 1, y, z, 0) || !m.at_or(x, y - 1, z, 0) ||
                            !m.at_or(x, y + 1, z, 0) || !m.at_or(x, y, z - 1, 0) || !m.at_or(x, y, z + 1, 0);
          if (edge) out.emplace_back(x, y, z);
        }
    return out;
  };
  const auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() || bb.empty()) return std::nullopt;
  std::vector<double> d;
  auto directed = [&](const std::vector<Eigen::Vector3i>& from, const std::vector<Eigen::Vector3i>& to) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const Eigen::Vector3d diff = (p - q).cast<double>().cwiseProduct(spacing);
        best = std::min(best, diff.squaredNorm());
      }
      d.push_back(std::sqrt(best));
    }
  };
  directed(ba, bb);
  directed(bb, ba);
  std::sort(d.begin(), d.end());
  const double pos = (static_cast<double>(d.size()) - 1) * 0.95;
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

}  // namespace testing
