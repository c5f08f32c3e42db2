#include <doctest.h>

#include <random>

#include "dkparc/tensor.hpp"
#include "support.hpp"

using namespace dkparc;

namespace {

Eigen::Vector3d lambdas(double a, double b, double c) { return {a, b, c}; }

double max_component_error(const Eigen::Matrix3d& truth, const TensorField& f, std::int64_t v) {
  return (tensor_components(truth) - Vector6<double>(f.tensors.col(v))).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_SUITE("tensor_model") {

TEST_CASE("isotropic tensor: signal and recovery") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  const Eigen::Matrix3d iso = 1e-3 * Eigen::Matrix3d::Identity();
  const auto s = synthesize_signal(tensor_components(iso), 1000, b, d);
  for (int i = 1; i < 13; ++i) CHECK(s[i] == doctest::Approx(1000 * std::exp(-1.0)).epsilon(1e-12));
  CHECK(std::abs(s[1] - 367.879) < 5e-4);  // quoted to three decimals

  const Grid g = Grid::axis_aligned({1, 1, 1}, {1, 1, 1});
  DwiSeries dwi;
  dwi.bvalues = b;
  dwi.directions = d;
  for (int i = 0; i < 13; ++i) dwi.volumes.emplace_back(g, Volume<float>::Data::Constant(1, 0));
  // Float storage would cap accuracy at ~1e-8, so feed the double signal through a double fit.
  const TensorDesign design = make_design(b, d);
  Eigen::VectorXd y(static_cast<Eigen::Index>(design.frames.size()));
  for (Eigen::Index r = 0; r < y.size(); ++r) y[r] = std::log(s[design.frames[static_cast<std::size_t>(r)]]);
  const Eigen::VectorXd x = design.solver * y;
  CHECK(x[0] == doctest::Approx(std::log(1000.0)));
  CHECK((x.tail<6>() - tensor_components(iso)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("anisotropic tensor recovered from a voxel series") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  const Eigen::Matrix3d aniso = Eigen::Vector3d(1.7e-3, 0.4e-3, 0.2e-3).asDiagonal();
  const Grid g = Grid::axis_aligned({2, 1, 1}, {1, 1, 1});
  const auto dwi = testing::synthetic_dwi(g, {aniso, aniso}, 1000, b, d);
  const auto f = fit_tensor(dwi);
  REQUIRE(f.valid.all());
  // float32 frames limit the achievable precision on this path.
  CHECK(max_component_error(aniso, f, 0) < 1e-8);
}

TEST_CASE("all-zero voxel is fit-invalid and decomposes to zeros") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  const Grid g = Grid::axis_aligned({2, 1, 1}, {1, 1, 1});
  auto dwi = testing::synthetic_dwi(g, {1e-3 * Eigen::Matrix3d::Identity(), 1e-3 * Eigen::Matrix3d::Identity()}, 1000, b, d);
  for (auto& v : dwi.volumes) v[1] = 0;
  const auto f = fit_tensor(dwi);
  CHECK(f.valid[0]);
  CHECK_FALSE(f.valid[1]);
  const auto e = eigendecompose(f);
  CHECK(e.values.col(1).isZero());
}

TEST_CASE("non-positive samples are clamped, not fatal") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  const Grid g = Grid::axis_aligned({1, 1, 1}, {1, 1, 1});
  auto dwi = testing::synthetic_dwi(g, {1e-3 * Eigen::Matrix3d::Identity()}, 1000, b, d);
  dwi.volumes[4][0] = -5;
  const auto f = fit_tensor(dwi);
  CHECK(f.valid[0]);
  CHECK(f.tensors.col(0).allFinite());
}

TEST_CASE("rank-deficient scheme is a configuration error") {
  Eigen::VectorXd b(6);
  Eigen::Matrix3Xd d(3, 6);
  b << 0, 1000, 1000, 1000, 1000, 1000;
  d.col(0).setZero();
  for (int i = 1; i < 6; ++i) d.col(i) = Eigen::Vector3d(std::cos(i), std::sin(i), 0);
  CHECK_THROWS_AS(make_design(b, d), ConfigError);
}

TEST_CASE("only the b=1000 shell and baselines enter a multi-shell fit") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  Eigen::VectorXd b2(26);
  Eigen::Matrix3Xd d2(3, 26);
  b2 << b, Eigen::VectorXd::Constant(13, 2000);
  b2[13] = 5;  // a second, HCP-style baseline
  d2 << d, d;
  d2.col(13).setZero();
  const auto design = make_design(b2, d2);
  CHECK(design.baselines == std::vector<Eigen::Index>{0, 13});
  CHECK(design.frames.size() == 14);
}

TEST_CASE("Jacobi eigen-decomposition matches the reference solver") {
  std::mt19937_64 rng(2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> oracle;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Matrix3d m = testing::random_spd(rng);
    const auto mine = jacobi_eigen<double>(m);
    oracle.compute(m);
    const Eigen::Vector3d ref = oracle.eigenvalues().reverse();
    CHECK((mine.values - ref).cwiseAbs().maxCoeff() < 1e-12 * ref.cwiseAbs().maxCoeff() + 1e-18);
    const Eigen::Matrix3d back = mine.vectors * mine.values.asDiagonal() * mine.vectors.transpose();
    CHECK((back - m).norm() / m.norm() < 1e-12);
  }
}

TEST_CASE("eigen-decomposition special cases") {
  const auto iso = jacobi_eigen<double>(2.5e-3 * Eigen::Matrix3d::Identity());
  CHECK(iso.values.isApprox(Eigen::Vector3d::Constant(2.5e-3)));
  const auto diag = jacobi_eigen<double>(Eigen::Vector3d(3e-4, 1e-4, 2e-4).asDiagonal());
  CHECK(diag.values.isApprox(Eigen::Vector3d(3e-4, 2e-4, 1e-4)));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Matrix3d r = testing::random_rotation(rng);
    const Eigen::Matrix3d m = r * Eigen::Vector3d(2e-3, 2e-3, 5e-4).asDiagonal() * r.transpose();
    const auto e = jacobi_eigen<double>(m);
    CHECK((e.values - Eigen::Vector3d(2e-3, 2e-3, 5e-4)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(std::abs(std::abs(e.vectors.determinant()) - 1) < 1e-12);
  }
}

TEST_CASE("eigenvalues come out sorted and single precision works too") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Matrix3d m = testing::random_spd(rng);
    const auto e = jacobi_eigen<double>(m);
    CHECK(e.values[0] >= e.values[1]);
    CHECK(e.values[1] >= e.values[2]);
    const auto ef = jacobi_eigen<float>(m.cast<float>());
    CHECK((ef.values.cast<double>() - e.values).cwiseAbs().maxCoeff() < 1e-5 * e.values[0]);
  }
}

TEST_CASE("scalar map formulas on reference eigenvalues") {
  const auto l = lambdas(1.7e-3, 0.4e-3, 0.2e-3);
  CHECK(fractional_anisotropy(l) == doctest::Approx(0.8025).epsilon(1e-4));
  CHECK(linearity(l) == doctest::Approx(0.5652).epsilon(1e-4));
  CHECK(planarity(l) == doctest::Approx(0.1739).epsilon(1e-4));
  CHECK(sphericity(l) == doctest::Approx(0.2609).epsilon(1e-4));
  CHECK(map_value(MapCode::TR, l) == doctest::Approx(2.3e-3));

  const auto iso = lambdas(1e-3, 1e-3, 1e-3);
  CHECK(fractional_anisotropy(iso) == 0);
  CHECK(sphericity(iso) == doctest::Approx(1));
  CHECK(linearity(iso) == 0);
  CHECK(planarity(iso) == 0);
  CHECK(map_value(MapCode::TR, iso) == doctest::Approx(3e-3));

  const auto line = lambdas(1, 0, 0);
  CHECK(fractional_anisotropy(line) == doctest::Approx(1));
  CHECK(linearity(line) == 1);
  CHECK(planarity(line) == 0);
  CHECK(sphericity(line) == 0);

  const auto zero = lambdas(0, 0, 0);
  CHECK(fractional_anisotropy(zero) == 0);
  CHECK(sphericity(zero) == 0);
}

TEST_CASE("map invariants over random eigenvalues") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(1e-5, 3e-3), c(0.1, 10);
  for (int i = 0; i < 20000; ++i) {
    Eigen::Vector3d l(u(rng), u(rng), u(rng));
    std::sort(l.data(), l.data() + 3, std::greater<>());
    CHECK(std::abs(linearity(l) + planarity(l) + sphericity(l) - 1) < 1e-12);
    const double fa = fractional_anisotropy(l);
    CHECK(fa >= 0);
    CHECK(fa <= 1);
    const double k = c(rng);
    const Eigen::Vector3d s = k * l;
    CHECK(std::abs(fractional_anisotropy(s) - fa) < 1e-10);
    CHECK(std::abs(sphericity(s) - sphericity(l)) < 1e-10);
    CHECK(std::abs(map_value(MapCode::TR, s) - k * map_value(MapCode::TR, l)) < 1e-15);
    CHECK(map_value(MapCode::E1, l) >= map_value(MapCode::MD, l));
    CHECK(map_value(MapCode::MD, l) >= map_value(MapCode::E3, l));
  }
}

TEST_CASE("derive_maps over a fitted field") {
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  std::mt19937_64 rng(12);
  const Grid g = Grid::axis_aligned({3, 3, 3}, {1, 1, 1});
  std::vector<Eigen::Matrix3d> tensors;
  for (int i = 0; i < 27; ++i) tensors.push_back(testing::random_spd(rng));
  const auto maps = derive_maps(eigendecompose(fit_tensor(testing::synthetic_dwi(g, tensors, 800, b, d)), true));
  CHECK(maps.codes().size() == 9);
  for (std::int64_t v = 0; v < g.size(); ++v) {
    const double tr = maps.at(MapCode::TR)[v];
    CHECK(std::abs(tr - (maps.at(MapCode::E1)[v] + maps.at(MapCode::E2)[v] + maps.at(MapCode::E3)[v])) <= 1e-12 * tr);
    CHECK(maps.at(MapCode::MD)[v] == tr / 3);
    CHECK(tr == doctest::Approx(tensors[static_cast<std::size_t>(v)].trace()).epsilon(1e-6));
  }
  ScalarMapSet partial = derive_maps(eigendecompose(fit_tensor(testing::synthetic_dwi(g, tensors, 800, b, d))),
                                     std::vector<MapCode>{MapCode::FA});
  CHECK_THROWS_AS(partial.at(MapCode::CS), ConfigError);
}

TEST_CASE("map codes parse in every spelling") {
  CHECK(parse_map_code("F") == MapCode::FA);
  CHECK(parse_map_code("fa") == MapCode::FA);
  CHECK(parse_map_code("S") == MapCode::CS);
  CHECK(parse_map_code("e1") == MapCode::E1);
  CHECK(parse_map_code("trace") == MapCode::TR);
  CHECK_THROWS_AS(parse_map_code("Q"), ArgumentError);
  for (MapCode c : all_map_codes()) {
    CHECK(parse_map_code(short_code(c)) == c);
    CHECK(parse_map_code(file_stem(c)) == c);
  }
}

TEST_CASE("correlation edge cases") {
  const Grid g = Grid::axis_aligned({4, 1, 1}, {1, 1, 1});
  Volume<double> a(g), b(g);
  for (int i = 0; i < 4; ++i) {
    a[i] = i * i;
    b[i] = 5 - i * i;
  }
  const MaskImage all(g, 1);
  CHECK(map_correlation(a, a, all) == doctest::Approx(1));
  CHECK(map_correlation(a, b, all) == doctest::Approx(-1));
  CHECK_THROWS_AS(map_correlation(a, Volume<double>(g, 3.0), all), DataError);
  MaskImage one(g);
  one[0] = 1;
  CHECK_THROWS_AS(map_correlation(a, b, one), DataError);
}

}  // TEST_SUITE
