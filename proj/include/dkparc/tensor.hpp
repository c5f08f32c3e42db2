#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkparc/dwi.hpp"
#include "dkparc/volume.hpp"

namespace dkparc {

template <typename Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;

/// Tensor components are stored as (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> tensor_matrix(const Vector6<Scalar>& c) {
  Eigen::Matrix<Scalar, 3, 3> m;
  m << c[0], c[1], c[2],  //
      c[1], c[3], c[4],   //
      c[2], c[4], c[5];
  return m;
}

template <typename Derived>
Vector6<typename Derived::Scalar> tensor_components(const Eigen::MatrixBase<Derived>& m) {
  Vector6<typename Derived::Scalar> c;
  c << m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2);
  return c;
}

// ---------------------------------------------------------------------------
// Least-squares tensor fit

struct FitOptions {
  double target_shell = 1000.0;   // s/mm^2; other shells are ignored when this one is present
  double shell_tolerance = 50.0;
  double signal_floor = 1e-6;     // samples at or below this are clamped before the log
};

/// Log-linear system shared by every voxel of one gradient scheme.
struct TensorDesign {
  std::vector<Eigen::Index> frames;  // series frames that enter the fit
  std::vector<Eigen::Index> baselines;
  Eigen::MatrixXd matrix;            // rows: [1, -b gx^2, -2b gx gy, -2b gx gz, -b gy^2, -2b gy gz, -b gz^2]
  Eigen::MatrixXd solver;            // 7 x frames least-squares operator
};

/// Picks the frames to fit and factorises the design once. Throws ConfigError on a rank-deficient scheme.
TensorDesign make_design(const Eigen::VectorXd& bvalues, const Eigen::Matrix3Xd& directions,
                         const FitOptions& options = {});

/// Noise-free Stejskal-Tanner signal S0 exp(-b g^T D g) for every frame of a scheme.
Eigen::VectorXd synthesize_signal(const Vector6<double>& tensor, double s0, const Eigen::VectorXd& bvalues,
                                  const Eigen::Matrix3Xd& directions);

struct TensorField {
  Grid grid;
  Eigen::Matrix<double, 6, Eigen::Dynamic> tensors;  // mm^2/s, one column per voxel
  Eigen::ArrayXd log_s0;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;

  Eigen::Index size() const { return tensors.cols(); }
};

/// Ordinary least squares on log signal, voxel by voxel.
TensorField fit_tensor(const DwiSeries& dwi, const FitOptions& options = {});

/// Component volumes in storage order, for writing.
std::vector<Volume<float>> tensor_volumes(const TensorField& field);

// ---------------------------------------------------------------------------
// Eigen-decomposition

template <typename Scalar>
struct SymmetricEigen {
  Eigen::Matrix<Scalar, 3, 1> values;   // descending
  Eigen::Matrix<Scalar, 3, 3> vectors;  // column i pairs with values[i]
};

/// Cyclic Jacobi rotations until the off-diagonal mass is at rounding level. Exact for
/// repeated eigenvalues, where closed-form cubic roots lose precision.
template <typename Scalar>
SymmetricEigen<Scalar> jacobi_eigen(const Eigen::Matrix<Scalar, 3, 3>& matrix) {
  using std::abs;
  using std::sqrt;
  Eigen::Matrix<Scalar, 3, 3> a = matrix;
  Eigen::Matrix<Scalar, 3, 3> v = Eigen::Matrix<Scalar, 3, 3>::Identity();
  const Scalar scale = a.norm();
  const Scalar tiny = std::numeric_limits<Scalar>::epsilon() * scale;
  constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const Scalar off = sqrt(a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2));
    if (off <= tiny || off == Scalar(0)) break;
    for (const auto& pq : kPairs) {
      const int p = pq[0], q = pq[1];
      const Scalar apq = a(p, q);
      if (apq == Scalar(0)) continue;
      const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
      const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) / (abs(theta) + sqrt(theta * theta + Scalar(1)));
      const Scalar c = Scalar(1) / sqrt(t * t + Scalar(1));
      const Scalar s = t * c;
      Eigen::Matrix<Scalar, 3, 3> rot = Eigen::Matrix<Scalar, 3, 3>::Identity();
      rot(p, p) = c;
      rot(q, q) = c;
      rot(p, q) = s;
      rot(q, p) = -s;
      a = (rot.transpose() * a * rot).eval();
      a(p, q) = a(q, p) = Scalar(0);
      v = (v * rot).eval();
    }
  }
  SymmetricEigen<Scalar> out;
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int i, int j) { return a(i, i) > a(j, j); });
  for (int k = 0; k < 3; ++k) {
    out.values[k] = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

struct EigenSystem {
  Grid grid;
  Eigen::Matrix3Xd values;  // lambda1 >= lambda2 >= lambda3 per column; zero where invalid
  Eigen::Matrix<double, 9, Eigen::Dynamic> vectors;  // column-major 3x3 per voxel; empty unless requested
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;

  bool has_vectors() const { return vectors.cols() == values.cols(); }
};

EigenSystem eigendecompose(const TensorField& field, bool keep_vectors = false);

// ---------------------------------------------------------------------------
// Scalar maps

enum class MapCode { FA, TR, MD, CL, CP, CS, E1, E2, E3 };

/// All nine maps in file order.
const std::vector<MapCode>& all_map_codes();
/// Short code used for combinations: F, T, S, L, P, E1, E2, E3 (MD has "MD").
std::string short_code(MapCode code);
/// File stem: fa, tr, md, cl, cp, cs, e1, e2, e3.
std::string file_stem(MapCode code);
/// Accepts short codes, long names and file stems, case-insensitive.
MapCode parse_map_code(std::string_view text);

template <typename Derived>
typename Derived::Scalar fractional_anisotropy(const Eigen::MatrixBase<Derived>& l) {
  using Scalar = typename Derived::Scalar;
  const Scalar squares = l.squaredNorm();
  if (squares <= Scalar(0)) return Scalar(0);
  const Scalar spread = (l[0] - l[1]) * (l[0] - l[1]) + (l[1] - l[2]) * (l[1] - l[2]) + (l[0] - l[2]) * (l[0] - l[2]);
  using std::sqrt;
  return std::clamp(sqrt(spread / (Scalar(2) * squares)), Scalar(0), Scalar(1));
}

template <typename Derived>
typename Derived::Scalar linearity(const Eigen::MatrixBase<Derived>& l) {
  const auto sum = l.sum();
  return sum > 0 ? (l[0] - l[1]) / sum : typename Derived::Scalar(0);
}

template <typename Derived>
typename Derived::Scalar planarity(const Eigen::MatrixBase<Derived>& l) {
  const auto sum = l.sum();
  return sum > 0 ? 2 * (l[1] - l[2]) / sum : typename Derived::Scalar(0);
}

template <typename Derived>
typename Derived::Scalar sphericity(const Eigen::MatrixBase<Derived>& l) {
  const auto sum = l.sum();
  return sum > 0 ? 3 * l[2] / sum : typename Derived::Scalar(0);
}

/// Value of one map for a sorted eigenvalue triple.
template <typename Derived>
typename Derived::Scalar map_value(MapCode code, const Eigen::MatrixBase<Derived>& l) {
  switch (code) {
    case MapCode::FA: return fractional_anisotropy(l);
    case MapCode::TR: return l.sum();
    case MapCode::MD: return l.sum() / 3;
    case MapCode::CL: return linearity(l);
    case MapCode::CP: return planarity(l);
    case MapCode::CS: return sphericity(l);
    case MapCode::E1: return l[0];
    case MapCode::E2: return l[1];
    case MapCode::E3: return l[2];
  }
  return 0;
}

class ScalarMapSet {
 public:
  void set(MapCode code, Volume<double> map);
  bool contains(MapCode code) const { return maps_.count(code) != 0; }
  /// Throws ConfigError naming the missing map.
  const Volume<double>& at(MapCode code) const;
  const std::map<MapCode, Volume<double>>& maps() const { return maps_; }
  std::vector<MapCode> codes() const;

 private:
  std::map<MapCode, Volume<double>> maps_;
};

ScalarMapSet derive_maps(const EigenSystem& eigen, std::span<const MapCode> selection);
inline ScalarMapSet derive_maps(const EigenSystem& eigen) { return derive_maps(eigen, all_map_codes()); }

/// Pearson r over voxels where mask is nonzero. Throws DataError on fewer than two voxels
/// or zero variance in either map.
template <typename Scalar>
double map_correlation(const Volume<Scalar>& a, const Volume<Scalar>& b, const MaskImage& mask);

/// Pearson r of two equally sized samples; same failure rules.
double pearson(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b);

}  // namespace dkparc
