#include <doctest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "dkparc/ablation.hpp"
#include "dkparc/dwi.hpp"
#include "dkparc/io_util.hpp"
#include "dkparc/metrics.hpp"
#include "dkparc/nifti.hpp"
#include "dkparc/pipeline.hpp"
#include "support.hpp"

using namespace dkparc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) { return "'" + s + "'"; }

/// Runs the CLI with stdout and stderr captured into files under `dir`; returns the exit code.
int run_cli(const testing::TempDir& dir, const std::vector<std::string>& args, std::string* out = nullptr,
            std::string* err = nullptr) {
  std::string cmd = quote(DKPARC_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
  cmd += " > " + quote(o.string()) + " 2> " + quote(e.string());
  const int status = std::system(cmd.c_str());
  if (out) *out = read_text(o);
  if (err) *err = read_text(e);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Grid ras_grid(int n) {
  const double o = -(n - 1) / 2.0;
  return Grid::axis_aligned({n, n, n}, {1, 1, 1}, {o, o, o});
}

/// A parcellation case whose E1 map carries the ground-truth ids, so decode stubs can act as
/// oracle segmenters across the process boundary.
struct DecodeCase {
  static constexpr int kDim = 32;
  testing::TempDir dir;
  LabelVolume truth;  // fine internal ids on the native grid

  DecodeCase() {
    const auto& schema = LabelSchema::dk101();
    const Grid native = ras_grid(kDim);
    const auto conformed_truth = testing::box_phantom(testing::lia_grid(kDim), schema);
    truth = {resample_to(conformed_truth.image, native, GridTransform::identity(), Interpolation::Nearest),
             LabelSpace::FineInternal};
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<float> u(0, 1);
    for (const char* stem : {"fa", "tr", "cs"}) {
      Volume<float> v(native);
      for (std::int64_t i = 0; i < v.size(); ++i) v[i] = u(rng);
      write_nifti(v, dir / (std::string(stem) + ".nii.gz"));
    }
    write_nifti(truth.image.cast<float>(), dir / "e1.nii.gz");
  }

  std::vector<std::string> stub(int channels, int group) const {
    return {DKPARC_STUB, "--channels", std::to_string(channels), "decode", "--source", "3", "--group",
            std::to_string(group)};
  }

  json config() const {
    json fine = json::object();
    for (const auto& g : LabelSchema::dk101().groups())
      if (!g.passthrough) fine[g.name] = {{"command", stub(5, g.id)}};
    return {{"maps", {{"F", "fa.nii.gz"}, {"T", "tr.nii.gz"}, {"S", "cs.nii.gz"}, {"E1", "e1.nii.gz"}}},
            {"conform", {{"dim", kDim}}},
            {"sliding_window", {{"patch", 16}, {"overlap", 0.5}}},
            {"backends", {{"coarse", {{"command", stub(4, 0)}}}, {"fine", fine}}},
            {"output_dir", "out"}};
  }

  fs::path write_config(const json& j, const std::string& name = "config.json") const {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("fit-dti writes the tensor and all nine maps") {
  testing::TempDir dir;
  const Grid g = Grid::axis_aligned({6, 5, 4}, {2, 2, 2});
  Eigen::VectorXd b;
  Eigen::Matrix3Xd d;
  testing::twelve_direction_scheme(b, d);
  // Isotropic tissue everywhere: FA must vanish and MD equals the diffusivity.
  const std::vector<Eigen::Matrix3d> tensors(static_cast<std::size_t>(g.size()), 1e-3 * Eigen::Matrix3d::Identity());
  write_dwi(testing::synthetic_dwi(g, tensors, 1000, b, d), dir / "dwi.nii.gz");

  std::string err;
  REQUIRE(run_cli(dir, {"fit-dti", "--dwi", (dir / "dwi.nii.gz").string(), "--out-dir", (dir / "maps").string()},
                  nullptr, &err) == 0);
  for (const char* stem : {"fa", "tr", "md", "cl", "cp", "cs", "e1", "e2", "e3"})
    CHECK(fs::exists(dir / "maps" / (std::string(stem) + ".nii.gz")));
  CHECK(fs::exists(dir / "maps" / "tensor.nii.gz"));
  const auto fa = read_nifti<float>(dir / "maps" / "fa.nii.gz");
  CHECK(fa.grid().matches(g));
  CHECK(fa.data().abs().maxCoeff() < 1e-5f);
  const auto md = read_nifti<float>(dir / "maps" / "md.nii.gz");
  CHECK((md.data() - 1e-3f).abs().maxCoeff() < 1e-7f);
  CHECK(read_nifti_frames<float>(dir / "maps" / "tensor.nii.gz").size() == 6);

  fs::remove(dir / "dwi.bvec");
  CHECK(run_cli(dir, {"fit-dti", "--dwi", (dir / "dwi.nii.gz").string(), "--out-dir", (dir / "again").string()}) == 2);
  CHECK(run_cli(dir, {"fit-dti", "--out-dir", "x"}) == 2);
  CHECK(run_cli(dir, {"no-such-command"}) == 2);
}

TEST_CASE("parcellate through stub processes reproduces the ground truth") {
  DecodeCase c;
  const auto config = c.write_config(c.config());
  std::string err;
  REQUIRE(run_cli(c.dir, {"parcellate", "--config", config.string()}, nullptr, &err) == 0);
  const auto& schema = LabelSchema::dk101();
  const auto labels = read_nifti<std::int32_t>(c.dir / "out" / "labels.nii.gz");
  CHECK(labels.grid().matches(c.truth.grid()));
  CHECK((labels.data() == to_freesurfer_lut(c.truth, schema).image.data()).all());
  const auto coarse = read_nifti<std::int32_t>(c.dir / "out" / "coarse.nii.gz");
  CHECK((coarse.data() == coarse_project(c.truth, schema).image.data()).all());

  const json manifest = json::parse(slurp(c.dir / "out" / "manifest.json"));
  CHECK(manifest["config_hash"] == PipelineConfig::load(config).hash());

  // A rerun rewrites bit-identical label files.
  const std::string first = slurp(c.dir / "out" / "labels.nii.gz");
  REQUIRE(run_cli(c.dir, {"parcellate", "--config", config.string()}) == 0);
  CHECK(slurp(c.dir / "out" / "labels.nii.gz") == first);
}

TEST_CASE("parcellate exit codes") {
  DecodeCase c;
  json missing = c.config();
  missing["backends"]["fine"].erase("right_cortical");
  std::string err;
  CHECK(run_cli(c.dir, {"parcellate", "--config", c.write_config(missing).string()}, nullptr, &err) == 2);
  CHECK(err.find("right_cortical") != std::string::npos);
  CHECK_FALSE(fs::exists(c.dir / "out"));

  json garbage = c.config();
  garbage["backends"]["coarse"]["command"] = {DKPARC_STUB, "--channels", "4", "fault", "--kind", "garbage"};
  CHECK(run_cli(c.dir, {"parcellate", "--config", c.write_config(garbage).string()}) == 4);

  json wrong_classes = c.config();
  wrong_classes["backends"]["fine"]["central"]["command"] = {DKPARC_STUB, "--channels", "5", "constant", "--scores",
                                                             "1,2,3"};
  CHECK(run_cli(c.dir, {"parcellate", "--config", c.write_config(wrong_classes).string()}, nullptr, &err) == 4);

  json no_maps = c.config();
  no_maps["maps"]["F"] = "absent.nii.gz";
  CHECK(run_cli(c.dir, {"parcellate", "--config", c.write_config(no_maps).string()}) == 2);
  std::ofstream(c.dir / "broken.json") << "{ not json";
  CHECK(run_cli(c.dir, {"parcellate", "--config", (c.dir / "broken.json").string()}) == 2);
}

TEST_CASE("evaluate and rsd match the library") {
  testing::TempDir dir;
  const auto& schema = LabelSchema::dk101();
  const Grid g = testing::lia_grid(24);
  const auto truth = testing::box_phantom(g, schema, 1);
  LabelVolume pred = truth;
  for (std::int64_t v = 0; v < g.size(); v += 7)
    if (pred.image[v]) pred.image[v] = schema.labels().front().id;  // scattered errors
  const auto gt_lut = to_freesurfer_lut(truth, schema), pred_lut = to_freesurfer_lut(pred, schema);
  write_nifti(gt_lut.image, dir / "gt.nii.gz");
  write_nifti(pred_lut.image, dir / "pred.nii.gz");
  Volume<float> fa(g);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.1f, 0.9f);
  for (std::int64_t v = 0; v < g.size(); ++v) fa[v] = u(rng);
  write_nifti(fa, dir / "fa.nii.gz");
  write_nifti(Volume<float>(g, 0.7f), dir / "flat.nii.gz");

  std::string out;
  REQUIRE(run_cli(dir, {"evaluate", "--pred", (dir / "pred.nii.gz").string(), "--gt", (dir / "gt.nii.gz").string(),
                        "--map", "fa=" + (dir / "fa.nii.gz").string(), "--summary", (dir / "summary.json").string()},
                  &out) == 0);
  const std::map<std::string, Volume<double>> maps{{"fa", fa.cast<double>()}};
  const auto reports = evaluate(pred_lut, gt_lut, &schema, maps);
  std::ostringstream expected;
  write_region_csv(expected, reports);
  CHECK(out == expected.str());
  CHECK(json::parse(slurp(dir / "summary.json")) == summary_json(reports));

  REQUIRE(run_cli(dir, {"rsd", "--labels", (dir / "gt.nii.gz").string(), "--map", "fa=" + (dir / "flat.nii.gz").string()},
                  &out) == 0);
  std::istringstream lines(out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "id,name,voxels,fa_mean,fa_std,fa_rsd");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(line.substr(line.rfind(',') + 1) == "0");
  }
  CHECK(rows == static_cast<int>(label_histogram(truth.image).size()) - 1);

  CHECK(run_cli(dir, {"evaluate", "--pred", (dir / "pred.nii.gz").string(), "--gt", (dir / "nope.nii.gz").string()}) == 2);
  CHECK(run_cli(dir, {"rsd", "--labels", (dir / "gt.nii.gz").string(), "--map", "fa"}) == 2);
  // LUT volumes read as internal ids fail label validation, a data error.
  CHECK(run_cli(dir, {"evaluate", "--pred", (dir / "pred.nii.gz").string(), "--gt", (dir / "gt.nii.gz").string(),
                      "--space", "internal"}) == 3);
}

TEST_CASE("postprocess command matches the library chain") {
  testing::TempDir dir;
  const auto& schema = LabelSchema::dk101();
  const Grid g = testing::lia_grid(24);
  const auto truth = testing::box_phantom(g, schema, 1);
  const auto coarse = coarse_project(truth, schema);
  LabelVolume noisy = truth;
  noisy.image(0, 0, 0) = schema.label_count();  // stray voxel outside its group
  write_nifti(to_freesurfer_lut(noisy, schema).image, dir / "noisy.nii.gz");
  write_nifti(coarse.image, dir / "coarse.nii.gz");
  REQUIRE(run_cli(dir, {"postprocess", "--labels", (dir / "noisy.nii.gz").string(), "--coarse",
                        (dir / "coarse.nii.gz").string(), "--out", (dir / "clean.nii.gz").string()}) == 0);
  const auto clean = read_nifti<std::int32_t>(dir / "clean.nii.gz");
  CHECK((clean.data() == to_freesurfer_lut(truth, schema).image.data()).all());
}

TEST_CASE("ablation plan and rank") {
  testing::TempDir dir;
  DecodeCase c;
  const auto base = c.write_config(c.config(), "base.json");
  std::string out;
  REQUIRE(run_cli(dir, {"ablation-plan", "--base", base.string(), "--out-dir", (dir / "plan").string(), "--sizes", "2",
                        "--combination", "T+F+S+E1"},
                  &out) == 0);
  std::istringstream lines(out);
  int files = 0;
  for (std::string line; std::getline(lines, line);) {
    ++files;
    CHECK(fs::exists(line));
  }
  CHECK(files == 29);
  const json planned = json::parse(slurp(dir / "plan" / "T_F_S_E1.json"));
  CHECK(planned["input_maps"] == json({"T", "F", "S", "E1"}));
  CHECK(run_cli(dir, {"ablation-plan", "--base", base.string(), "--out-dir", (dir / "none").string()}) == 2);
  CHECK(run_cli(dir, {"ablation-plan", "--base", base.string(), "--out-dir", (dir / "bad").string(), "--combination",
                      "F+MD"}) == 2);

  std::vector<std::string> args{"ablation-rank", "--runs"};
  const std::vector<std::pair<std::string, double>> runs{{"T+F+S+E1", 76.52}, {"T+F+S+E3", 76.49}, {"F", 74.15}};
  for (const auto& [name, mean] : runs) {
    RunManifest m;
    m.combination = parse_combination(name);
    m.metric = "dsc";
    m.mean = mean;
    const fs::path p = dir / (combination_name(m.combination, "_") + ".run.json");
    std::ofstream(p) << m.to_json().dump();
    args.push_back(p.string());
  }
  REQUIRE(run_cli(dir, args, &out) == 0);
  CHECK(out == "combination,metric,mean,std,rank\nT+F+S+E1,dsc,76.52,0,1\nT+F+S+E3,dsc,76.49,0,2\nF,dsc,74.15,0,3\n");
  args.insert(args.end(), {"--metric", "hd95_mm"});
  CHECK(run_cli(dir, args) == 2);
}

}  // TEST_SUITE
