#include "dkparc/resample.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dkparc/nifti.hpp"
#include "dkparc/parallel.hpp"

namespace dkparc {
namespace {

// Voxel coordinates this close to an integer are treated as exact lattice hits, so that
// identity-like resampling reproduces the input bit-for-bit.
constexpr double kSnap = 1e-6;

double snap(double p) {
  const double r = std::round(p);
  return std::abs(p - r) < kSnap ? r : p;
}

template <typename Scalar>
Scalar sample_nearest(const Volume<Scalar>& src, const Eigen::Vector3d& p) {
  const int x = static_cast<int>(std::floor(p.x() + 0.5));
  const int y = static_cast<int>(std::floor(p.y() + 0.5));
  const int z = static_cast<int>(std::floor(p.z() + 0.5));
  return src.at_or(x, y, z, Scalar(0));
}

template <typename Scalar>
double sample_linear(const Volume<Scalar>& src, Eigen::Vector3d p) {
  const auto& d = src.dims();
  for (int a = 0; a < 3; ++a) {
    if (p[a] < -0.5 || p[a] > d[a] - 0.5) return 0.0;
    // The outer half voxel replicates the edge value.
    p[a] = std::clamp(p[a], 0.0, static_cast<double>(d[a] - 1));
  }
  const int x0 = static_cast<int>(std::floor(p.x()));
  const int y0 = static_cast<int>(std::floor(p.y()));
  const int z0 = static_cast<int>(std::floor(p.z()));
  const double fx = p.x() - x0, fy = p.y() - y0, fz = p.z() - z0;
  if (fx == 0 && fy == 0 && fz == 0) return static_cast<double>(src(x0, y0, z0));
  const int x1 = std::min(x0 + 1, d[0] - 1), y1 = std::min(y0 + 1, d[1] - 1), z1 = std::min(z0 + 1, d[2] - 1);
  auto v = [&](int x, int y, int z) { return static_cast<double>(src(x, y, z)); };
  const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
  const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
  const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
  const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

template <typename Scalar>
Scalar from_double(double v) {
  if constexpr (std::is_integral_v<Scalar>)
    return static_cast<Scalar>(std::lround(v));
  else
    return static_cast<Scalar>(v);
}

Eigen::Matrix4d check_affine(const Eigen::Matrix4d& m) {
  if (!m.allFinite()) throw TransformError("affine transform has non-finite entries");
  if (std::abs(m.topLeftCorner<3, 3>().determinant()) <= 1e-12) throw TransformError("affine transform is singular");
  Eigen::Matrix4d out = m;
  out.row(3) << 0, 0, 0, 1;
  return out;
}

void check_field(const GridTransform::Field& f) {
  for (const auto& c : f) {
    require_same_grid(f[0].grid(), c.grid(), "displacement field");
    if (!c.data().allFinite()) throw TransformError("displacement field has non-finite offsets");
  }
}

Eigen::Vector3d field_offset(const GridTransform::Field& f, const Eigen::Vector3d& world) {
  Eigen::Vector3d p = f[0].grid().to_voxel(world);
  for (int a = 0; a < 3; ++a) p[a] = snap(p[a]);
  return {sample_linear(f[0], p), sample_linear(f[1], p), sample_linear(f[2], p)};
}

std::filesystem::path inverse_sibling(const std::filesystem::path& path) {
  auto stem = path;
  std::string ext;
  while (!stem.extension().empty()) {
    ext = stem.extension().string() + ext;
    stem.replace_extension();
  }
  return stem.string() + "_inverse" + ext;
}

}  // namespace

Interpolation parse_interpolation(const std::string& name) {
  if (name == "nearest") return Interpolation::Nearest;
  if (name == "trilinear" || name == "linear") return Interpolation::Trilinear;
  throw ArgumentError("unknown interpolation '" + name + "' (expected nearest|trilinear)");
}

GridTransform::GridTransform(const Eigen::Matrix4d& affine) : kind_(Kind::Affine), affine_(check_affine(affine)) {}

GridTransform::GridTransform(Field field, std::optional<Field> inverse) : kind_(Kind::Displacement) {
  check_field(field);
  field_ = std::make_shared<const Field>(std::move(field));
  if (inverse) {
    check_field(*inverse);
    inverse_field_ = std::make_shared<const Field>(std::move(*inverse));
  }
}

bool GridTransform::is_identity(double tol) const {
  return kind_ == Kind::Affine && (affine_ - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

Eigen::Vector3d GridTransform::apply(const Eigen::Vector3d& world) const {
  if (kind_ == Kind::Affine) return affine_.topLeftCorner<3, 3>() * world + affine_.topRightCorner<3, 1>();
  return world + field_offset(*field_, world);
}

GridTransform GridTransform::inverse() const {
  if (kind_ == Kind::Affine) return GridTransform(Eigen::Matrix4d(affine_.inverse()));
  if (!inverse_field_) throw TransformError("displacement field has no stored inverse");
  return GridTransform(*inverse_field_, *field_);
}

GridTransform read_transform(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open transform " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    const auto& values = j.contains("affine") ? j.at("affine") : j;
    if (!values.is_array() || values.size() != 16)
      throw FormatError(path.string() + ": affine must be 16 numbers in row-major order");
    Eigen::Matrix4d m;
    for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = values[static_cast<std::size_t>(i)].get<double>();
    return GridTransform(m);
  }
  auto frames = read_nifti_frames<float>(path);
  if (frames.size() != 3) throw FormatError(path.string() + ": displacement field needs exactly 3 frames");
  GridTransform::Field field{frames[0], frames[1], frames[2]};
  std::optional<GridTransform::Field> inverse;
  const auto sibling = inverse_sibling(path);
  if (std::filesystem::exists(sibling)) {
    auto inv = read_nifti_frames<float>(sibling);
    if (inv.size() != 3) throw FormatError(sibling.string() + ": displacement field needs exactly 3 frames");
    inverse = GridTransform::Field{inv[0], inv[1], inv[2]};
  }
  return GridTransform(std::move(field), std::move(inverse));
}

void write_transform(const GridTransform& transform, const std::filesystem::path& path) {
  if (transform.kind() != GridTransform::Kind::Affine)
    throw UnsupportedError("only affine transforms can be serialised to JSON");
  nlohmann::json j;
  auto& a = j["affine"] = nlohmann::json::array();
  for (int i = 0; i < 16; ++i) a.push_back(transform.matrix()(i / 4, i % 4));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename Scalar>
Volume<Scalar> resample_to(const Volume<Scalar>& source, const Grid& target, const GridTransform& target_to_source,
                           Interpolation mode) {
  Volume<Scalar> out(target);
  const auto& dims = target.dims();
  const bool affine = target_to_source.kind() == GridTransform::Kind::Affine;
  // Target voxel -> source voxel in one matrix when the transform is affine.
  const Eigen::Matrix4d direct = source.grid().inverse_affine() * target_to_source.matrix() * target.affine();

  parallel_for(dims[2], [&](std::int64_t z0, std::int64_t z1) {
    for (auto z = z0; z < z1; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
          const Eigen::Vector3d voxel(x, y, static_cast<double>(z));
          Eigen::Vector3d p;
          if (affine) {
            p = direct.topLeftCorner<3, 3>() * voxel + direct.topRightCorner<3, 1>();
          } else {
            p = source.grid().to_voxel(target_to_source.apply(target.to_world(voxel)));
          }
          for (int a = 0; a < 3; ++a) p[a] = snap(p[a]);
          out(x, y, static_cast<int>(z)) = mode == Interpolation::Nearest
                                               ? sample_nearest(source, p)
                                               : from_double<Scalar>(sample_linear(source, p));
        }
  });
  return out;
}

Grid conformed_grid(const Eigen::Vector3d& world_center, const ConformSpec& spec) {
  if (spec.dim <= 0 || !(spec.spacing > 0)) throw ArgumentError("conformed grid needs positive dim and spacing");
  Eigen::Matrix3d lia;
  lia << -1, 0, 0,  //
      0, 0, 1,      //
      0, -1, 0;
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  a.topLeftCorner<3, 3>() = lia * spec.spacing;
  const Eigen::Vector3d half = Eigen::Vector3d::Constant((spec.dim - 1) * 0.5);
  a.topRightCorner<3, 1>() = world_center - a.topLeftCorner<3, 3>() * half;
  return Grid(Eigen::Vector3i::Constant(spec.dim), a);
}

template <typename Scalar>
Volume<Scalar> conform(const Volume<Scalar>& volume, Interpolation mode, const ConformSpec& spec) {
  const Grid target = conformed_grid(volume.grid(), spec);
  if (target.matches(volume.grid(), 1e-9)) return volume;
  return resample_to(volume, target, GridTransform::identity(), mode);
}

#define DKPARC_INSTANTIATE(T)                                                                                \
  template Volume<T> resample_to<T>(const Volume<T>&, const Grid&, const GridTransform&, Interpolation); \
  template Volume<T> conform<T>(const Volume<T>&, Interpolation, const ConformSpec&);

DKPARC_INSTANTIATE(float)
DKPARC_INSTANTIATE(double)
DKPARC_INSTANTIATE(std::int32_t)
DKPARC_INSTANTIATE(std::uint8_t)

#undef DKPARC_INSTANTIATE

}  // namespace dkparc
