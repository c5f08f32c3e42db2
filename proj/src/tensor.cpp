#include "dkparc/tensor.hpp"

#include <cctype>
#include <cmath>

#include "dkparc/parallel.hpp"

namespace dkparc {

TensorDesign make_design(const Eigen::VectorXd& bvalues, const Eigen::Matrix3Xd& directions,
                         const FitOptions& options) {
  if (bvalues.size() != directions.cols()) throw DataError("b-values and directions differ in length");
  TensorDesign design;
  std::vector<Eigen::Index> shell;
  std::vector<Eigen::Index> weighted;
  for (Eigen::Index i = 0; i < bvalues.size(); ++i) {
    if (bvalues[i] <= DwiSeries::kBaselineB) {
      design.baselines.push_back(i);
      continue;
    }
    weighted.push_back(i);
    if (std::abs(bvalues[i] - options.target_shell) <= options.shell_tolerance) shell.push_back(i);
  }
  if (design.baselines.empty()) throw ConfigError("gradient scheme has no b=0 volume");
  if (shell.empty()) {
    // No target shell: accept a single-shell acquisition at whatever b it used.
    const double b_min = bvalues(weighted.front());
    for (auto i : weighted)
      if (std::abs(bvalues[i] - b_min) > 2 * options.shell_tolerance)
        throw ConfigError("multi-shell scheme without a b=" + std::to_string(options.target_shell) + " shell");
    shell = weighted;
  }
  design.frames = design.baselines;
  design.frames.insert(design.frames.end(), shell.begin(), shell.end());

  const auto n = static_cast<Eigen::Index>(design.frames.size());
  design.matrix.resize(n, 7);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = design.frames[static_cast<std::size_t>(r)];
    const double b = bvalues[i];
    const Eigen::Vector3d g = b <= DwiSeries::kBaselineB ? Eigen::Vector3d::Zero() : Eigen::Vector3d(directions.col(i));
    design.matrix.row(r) << 1.0, -b * g.x() * g.x(), -2 * b * g.x() * g.y(), -2 * b * g.x() * g.z(),
        -b * g.y() * g.y(), -2 * b * g.y() * g.z(), -b * g.z() * g.z();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.matrix);
  if (qr.rank() < 7)
    throw ConfigError("gradient scheme is insufficient for a tensor fit (design rank " + std::to_string(qr.rank()) +
                      " < 7)");
  design.solver = qr.solve(Eigen::MatrixXd::Identity(n, n));
  return design;
}

Eigen::VectorXd synthesize_signal(const Vector6<double>& tensor, double s0, const Eigen::VectorXd& bvalues,
                                  const Eigen::Matrix3Xd& directions) {
  const Eigen::Matrix3d d = tensor_matrix(tensor);
  Eigen::VectorXd s(bvalues.size());
  for (Eigen::Index i = 0; i < bvalues.size(); ++i) {
    const Eigen::Vector3d g = directions.col(i);
    s[i] = s0 * std::exp(-bvalues[i] * g.dot(d * g));
  }
  return s;
}

TensorField fit_tensor(const DwiSeries& dwi, const FitOptions& options) {
  dwi.validate();
  const TensorDesign design = make_design(dwi.bvalues, dwi.directions, options);
  const Grid& grid = dwi.grid();
  const auto voxels = grid.size();
  const auto rows = static_cast<Eigen::Index>(design.frames.size());
  const double floor = options.signal_floor;

  TensorField field;
  field.grid = grid;
  field.tensors.setZero(6, voxels);
  field.log_s0.setZero(voxels);
  field.valid.setConstant(voxels, false);

  parallel_for(voxels, [&](std::int64_t begin, std::int64_t end) {
    Eigen::VectorXd y(rows);
    for (auto v = begin; v < end; ++v) {
      double b0 = 0;
      for (auto i : design.baselines) b0 += dwi.volumes[static_cast<std::size_t>(i)][v];
      b0 /= static_cast<double>(design.baselines.size());
      if (!(b0 > floor)) continue;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double s = dwi.volumes[static_cast<std::size_t>(design.frames[static_cast<std::size_t>(r)])][v];
        y[r] = std::log(s > floor ? s : floor);
      }
      const Eigen::Matrix<double, 7, 1> x = design.solver * y;
      field.log_s0[v] = x[0];
      field.tensors.col(v) = x.tail<6>();
      field.valid[v] = true;
    }
  });
  return field;
}

std::vector<Volume<float>> tensor_volumes(const TensorField& field) {
  std::vector<Volume<float>> out;
  for (int c = 0; c < 6; ++c)
    out.emplace_back(field.grid, Volume<float>::Data(field.tensors.row(c).transpose().cast<float>()));
  return out;
}

EigenSystem eigendecompose(const TensorField& field, bool keep_vectors) {
  EigenSystem eig;
  eig.grid = field.grid;
  eig.values.setZero(3, field.size());
  eig.valid = field.valid;
  if (keep_vectors) eig.vectors.setZero(9, field.size());
  parallel_for(field.size(), [&](std::int64_t begin, std::int64_t end) {
    for (auto v = begin; v < end; ++v) {
      if (!field.valid[v]) continue;
      const auto decomposition = jacobi_eigen<double>(tensor_matrix<double>(field.tensors.col(v)));
      eig.values.col(v) = decomposition.values;
      if (keep_vectors) eig.vectors.col(v) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(decomposition.vectors.data());
    }
  });
  return eig;
}

const std::vector<MapCode>& all_map_codes() {
  static const std::vector<MapCode> codes{MapCode::FA, MapCode::TR, MapCode::MD, MapCode::CL, MapCode::CP,
                                          MapCode::CS, MapCode::E1, MapCode::E2, MapCode::E3};
  return codes;
}

std::string short_code(MapCode code) {
  switch (code) {
    case MapCode::FA: return "F";
    case MapCode::TR: return "T";
    case MapCode::MD: return "MD";
    case MapCode::CL: return "L";
    case MapCode::CP: return "P";
    case MapCode::CS: return "S";
    case MapCode::E1: return "E1";
    case MapCode::E2: return "E2";
    case MapCode::E3: return "E3";
  }
  return "?";
}

std::string file_stem(MapCode code) {
  switch (code) {
    case MapCode::FA: return "fa";
    case MapCode::TR: return "tr";
    case MapCode::MD: return "md";
    case MapCode::CL: return "cl";
    case MapCode::CP: return "cp";
    case MapCode::CS: return "cs";
    case MapCode::E1: return "e1";
    case MapCode::E2: return "e2";
    case MapCode::E3: return "e3";
  }
  return "?";
}

MapCode parse_map_code(std::string_view text) {
  std::string t(text);
  for (auto& c : t) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (t == "F" || t == "FA") return MapCode::FA;
  if (t == "T" || t == "TR" || t == "TRACE") return MapCode::TR;
  if (t == "MD") return MapCode::MD;
  if (t == "L" || t == "CL") return MapCode::CL;
  if (t == "P" || t == "CP") return MapCode::CP;
  if (t == "S" || t == "CS") return MapCode::CS;
  if (t == "E1") return MapCode::E1;
  if (t == "E2") return MapCode::E2;
  if (t == "E3") return MapCode::E3;
  throw ArgumentError("unknown map code '" + std::string(text) + "'");
}

void ScalarMapSet::set(MapCode code, Volume<double> map) {
  if (!maps_.empty()) require_same_grid(maps_.begin()->second.grid(), map.grid(), "scalar map set");
  maps_.insert_or_assign(code, std::move(map));
}

const Volume<double>& ScalarMapSet::at(MapCode code) const {
  auto it = maps_.find(code);
  if (it == maps_.end()) throw ConfigError("scalar map " + short_code(code) + " (" + file_stem(code) + ") is missing");
  return it->second;
}

std::vector<MapCode> ScalarMapSet::codes() const {
  std::vector<MapCode> out;
  for (const auto& [code, _] : maps_) out.push_back(code);
  return out;
}

ScalarMapSet derive_maps(const EigenSystem& eigen, std::span<const MapCode> selection) {
  ScalarMapSet set;
  for (MapCode code : selection) {
    Volume<double> map(eigen.grid);
    parallel_for(map.size(), [&](std::int64_t begin, std::int64_t end) {
      for (auto v = begin; v < end; ++v) map[v] = map_value(code, eigen.values.col(v));
    });
    set.set(code, std::move(map));
  }
  return set;
}

double pearson(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b) {
  if (a.size() != b.size()) throw DataError("correlation inputs differ in length");
  if (a.size() < 2) throw DataError("correlation is undefined for fewer than two samples");
  const Eigen::ArrayXd da = a - a.mean();
  const Eigen::ArrayXd db = b - b.mean();
  const double va = da.square().sum();
  const double vb = db.square().sum();
  if (!(va > 0) || !(vb > 0)) throw DataError("correlation is undefined: zero variance");
  return std::clamp((da * db).sum() / std::sqrt(va * vb), -1.0, 1.0);
}

template <typename Scalar>
double map_correlation(const Volume<Scalar>& a, const Volume<Scalar>& b, const MaskImage& mask) {
  require_same_grid(a.grid(), b.grid(), "map_correlation");
  require_same_grid(a.grid(), mask.grid(), "map_correlation");
  const auto n = (mask.data() != 0).count();
  Eigen::ArrayXd xa(n), xb(n);
  Eigen::Index k = 0;
  for (std::int64_t v = 0; v < a.size(); ++v) {
    if (!mask[v]) continue;
    xa[k] = static_cast<double>(a[v]);
    xb[k] = static_cast<double>(b[v]);
    ++k;
  }
  return pearson(xa, xb);
}

template double map_correlation<float>(const Volume<float>&, const Volume<float>&, const MaskImage&);
template double map_correlation<double>(const Volume<double>&, const Volume<double>&, const MaskImage&);

}  // namespace dkparc
