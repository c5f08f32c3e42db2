#include "dkparc/dwi.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "dkparc/nifti.hpp"

namespace dkparc {
namespace {

std::vector<std::vector<double>> read_number_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gradient file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    std::string token;
    while (ss >> token) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": not a number: '" + token + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::filesystem::path sidecar(const std::filesystem::path& image, const char* ext) {
  auto base = image;
  if (base.extension() == ".gz") base.replace_extension();
  base.replace_extension(ext);
  return base;
}

}  // namespace

void DwiSeries::validate() const {
  if (volumes.empty()) throw DataError("DWI series has no volumes");
  const auto n = static_cast<Eigen::Index>(volumes.size());
  if (bvalues.size() != n || directions.cols() != n)
    throw DataError("gradient table has " + std::to_string(bvalues.size()) + " entries for " + std::to_string(n) +
                    " volumes");
  for (const auto& v : volumes) require_same_grid(volumes.front().grid(), v.grid(), "DWI series");

  int baselines = 0;
  std::vector<Eigen::Vector3d> weighted;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (bvalues[i] <= kBaselineB) {
      ++baselines;
      continue;
    }
    const double norm = directions.col(i).norm();
    if (std::abs(norm - 1.0) > 1e-6)
      throw DataError("gradient direction " + std::to_string(i) + " is not unit length (|g| = " +
                      std::to_string(norm) + ")");
    weighted.push_back(directions.col(i));
  }
  if (baselines == 0) throw ConfigError("DWI series has no b=0 volume");

  // Six independent quadratic forms g g^T are needed to pin down the tensor.
  Eigen::MatrixXd quad(static_cast<Eigen::Index>(weighted.size()), 6);
  for (std::size_t i = 0; i < weighted.size(); ++i) {
    const auto& g = weighted[i];
    quad.row(static_cast<Eigen::Index>(i)) << g.x() * g.x(), 2 * g.x() * g.y(), 2 * g.x() * g.z(), g.y() * g.y(),
        2 * g.y() * g.z(), g.z() * g.z();
  }
  if (weighted.size() < 6 || Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(quad).rank() < 6)
    throw ConfigError("gradient scheme has fewer than 6 independent diffusion directions");
}

Eigen::VectorXd read_bvals(const std::filesystem::path& path) {
  auto rows = read_number_rows(path);
  std::vector<double> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  if (all.empty()) throw FormatError(path.string() + ": no b-values");
  return Eigen::Map<Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));
}

Eigen::Matrix3Xd read_bvecs(const std::filesystem::path& path) {
  auto rows = read_number_rows(path);
  if (rows.size() == 3 && rows[0].size() == rows[1].size() && rows[1].size() == rows[2].size()) {
    Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(rows[0].size()));
    for (int r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c) out(r, static_cast<Eigen::Index>(c)) = rows[r][c];
    return out;
  }
  bool columnar = !rows.empty();
  for (auto& r : rows) columnar = columnar && r.size() == 3;
  if (!columnar) throw FormatError(path.string() + ": expected 3 rows (or N rows of 3) of gradient components");
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (int r = 0; r < 3; ++r) out(r, static_cast<Eigen::Index>(c)) = rows[c][r];
  return out;
}

void write_bvals(const Eigen::VectorXd& bvalues, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10);
  for (Eigen::Index i = 0; i < bvalues.size(); ++i) out << (i ? " " : "") << bvalues[i];
  out << '\n';
}

void write_bvecs(const Eigen::Matrix3Xd& directions, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    for (Eigen::Index c = 0; c < directions.cols(); ++c) out << (c ? " " : "") << directions(r, c);
    out << '\n';
  }
}

DwiSeries read_dwi(const std::filesystem::path& image, std::optional<std::filesystem::path> bval,
                   std::optional<std::filesystem::path> bvec) {
  const auto bval_path = bval.value_or(sidecar(image, ".bval"));
  const auto bvec_path = bvec.value_or(sidecar(image, ".bvec"));
  if (!std::filesystem::exists(bval_path)) throw IoError("missing b-value file " + bval_path.string());
  if (!std::filesystem::exists(bvec_path)) throw IoError("missing b-vector file " + bvec_path.string());

  DwiSeries dwi;
  dwi.volumes = read_nifti_frames<float>(image);
  dwi.bvalues = read_bvals(bval_path);
  dwi.directions = read_bvecs(bvec_path);
  for (Eigen::Index i = 0; i < dwi.directions.cols() && i < dwi.bvalues.size(); ++i) {
    if (dwi.bvalues[i] <= DwiSeries::kBaselineB) continue;
    const double norm = dwi.directions.col(i).norm();
    if (std::abs(norm - 1.0) <= 1e-2) dwi.directions.col(i) /= norm;
  }
  dwi.validate();
  return dwi;
}

void write_dwi(const DwiSeries& dwi, const std::filesystem::path& image) {
  write_nifti_frames(dwi.volumes, image);
  write_bvals(dwi.bvalues, sidecar(image, ".bval"));
  write_bvecs(dwi.directions, sidecar(image, ".bvec"));
}

}  // namespace dkparc
