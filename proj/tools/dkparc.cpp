// dkparc: command-line front end for the parcellation toolkit.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 a processing stage failed,
// 4 a segmenter backend failed or broke the wire protocol.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "dkparc/ablation.hpp"
#include "dkparc/io_util.hpp"
#include "dkparc/metrics.hpp"
#include "dkparc/nifti.hpp"
#include "dkparc/parallel.hpp"
#include "dkparc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dkparc;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;
constexpr int kExitBackend = 4;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Backend:
    case ErrorKind::Contract:
      return kExitBackend;
    case ErrorKind::Data:
    case ErrorKind::Transform:
      return kExitStage;
    default:
      return dynamic_cast<const StageError*>(&e) ? kExitStage : kExitValidation;
  }
}

LabelSpace parse_space(const std::string& s) {
  if (s == "lut") return LabelSpace::FreeSurferLut;
  if (s == "internal") return LabelSpace::FineInternal;
  if (s == "coarse") return LabelSpace::Coarse;
  throw ArgumentError("label space must be lut, internal or coarse");
}

LabelSchema schema_from(const std::string& path) { return path.empty() ? LabelSchema::dk101() : LabelSchema::load(path); }

LabelVolume read_labels(const fs::path& path, LabelSpace space, const LabelSchema& schema) {
  LabelVolume v{read_nifti<std::int32_t>(path), space};
  validate_labels(v, schema);
  return v;
}

// Maps given on the command line as stem=path.
std::map<std::string, Volume<double>> read_maps(const std::vector<std::string>& specs) {
  std::map<std::string, Volume<double>> maps;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("map must be given as name=path, got '" + s + "'");
    maps.emplace(s.substr(0, eq), read_nifti<double>(s.substr(eq + 1)));
  }
  return maps;
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ArgumentError("bad combination size '" + item + "'");
    }
  }
  return out;
}

// --- fit-dti -----------------------------------------------------------------

struct FitArgs {
  std::string dwi, bval, bvec, out_dir;
};

void fit_dti(const FitArgs& a) {
  const auto dwi = read_dwi(a.dwi, a.bval.empty() ? std::nullopt : std::optional<fs::path>(a.bval),
                            a.bvec.empty() ? std::nullopt : std::optional<fs::path>(a.bvec));
  const TensorField field = fit_tensor(dwi);
  const EigenSystem eig = eigendecompose(field);
  const ScalarMapSet maps = derive_maps(eig);
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  write_nifti_frames(tensor_volumes(field), out / "tensor.nii.gz");
  write_nifti(MaskImage(field.grid, MaskImage::Data(field.valid.cast<std::uint8_t>())), out / "mask.nii.gz");
  for (const auto& [code, map] : maps.maps()) write_nifti(map.cast<float>(), out / (file_stem(code) + ".nii.gz"));
}

// --- conform -----------------------------------------------------------------

struct ConformArgs {
  std::string in, out, interp = "auto", transform;
  int dim = 256;
  double spacing = 1.0;
};

void conform_cmd(const ConformArgs& a) {
  const ConformSpec spec{a.dim, a.spacing};
  const GridTransform t = a.transform.empty() ? GridTransform::identity() : read_transform(a.transform);
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        constexpr bool integral = !std::is_floating_point_v<typename V::Data::Scalar>;
        const Interpolation mode = a.interp == "auto" ? (integral ? Interpolation::Nearest : Interpolation::Trilinear)
                                                      : parse_interpolation(a.interp);
        const Eigen::Vector3d centre = t.invertible() ? t.inverse().apply(v.grid().world_center()) : v.grid().world_center();
        write_nifti(resample_to(v, conformed_grid(centre, spec), t, mode), a.out);
      },
      read_nifti_any(a.in));
}

// --- parcellate --------------------------------------------------------------

void parcellate(const std::string& config_path) {
  const PipelineConfig config = PipelineConfig::load(config_path);
  const LabelSchema schema = config.load_schema();
  config.validate(schema);
  PipelineBackends backends = make_backends(config, schema);
  const PipelineInputs inputs = load_inputs(config);
  const PipelineResult r = run_pipeline(inputs, backends, schema, config);
  fs::create_directories(config.output_dir);
  write_nifti(r.labels.image, config.output_dir / "labels.nii.gz");
  write_nifti(r.coarse.image, config.output_dir / "coarse.nii.gz");
  write_text_atomic(config.output_dir / "manifest.json", r.manifest.dump(2) + "\n");
}

// --- postprocess -------------------------------------------------------------

struct PostArgs {
  std::string labels, coarse, out, schema, space = "lut";
  int connectivity = 26;
  int dilation = -1;
};

void postprocess_cmd(const PostArgs& a) {
  const LabelSchema schema = schema_from(a.schema);
  const LabelSpace space = parse_space(a.space);
  if (space == LabelSpace::Coarse) throw ArgumentError("postprocess works on fine labels");
  LabelVolume fine = read_labels(a.labels, space, schema);
  if (space == LabelSpace::FreeSurferLut) fine = from_freesurfer_lut(fine, schema);
  const LabelVolume coarse = read_labels(a.coarse, LabelSpace::Coarse, schema);
  require_same_grid(fine.grid(), coarse.grid(), "postprocess");
  const PostprocessConfig cfg{connectivity_from_int(a.connectivity), a.dilation};
  std::map<int, LabelVolume> cleaned;
  for (int g : schema.fine_groups()) {
    // Each stage only ever predicts its own partition.
    LabelVolume part = fine;
    for (std::int64_t v = 0; v < part.image.size(); ++v)
      if (schema.group_of(part.image[v]) != g) part.image[v] = 0;
    cleaned.emplace(g, postprocess_group(part, coarse, g, cfg));
  }
  LabelVolume merged = merge_fine(coarse, cleaned, schema);
  if (space == LabelSpace::FreeSurferLut) merged = to_freesurfer_lut(merged, schema);
  write_nifti(merged.image, a.out);
}

// --- evaluate / rsd ----------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, schema, space = "lut", out, summary;
  std::vector<std::string> maps;
};

void evaluate_cmd(const EvalArgs& a) {
  const LabelSchema schema = schema_from(a.schema);
  const LabelSpace space = parse_space(a.space);
  const LabelVolume pred = read_labels(a.pred, space, schema);
  const LabelVolume gt = read_labels(a.gt, space, schema);
  const auto reports = evaluate(pred, gt, &schema, read_maps(a.maps));
  std::ostringstream csv;
  write_region_csv(csv, reports);
  if (a.out.empty()) std::cout << csv.str();
  else write_text_atomic(a.out, csv.str());
  if (!a.summary.empty()) write_text_atomic(a.summary, summary_json(reports).dump(2) + "\n");
}

struct RsdArgs {
  std::string labels, schema, space = "lut", out;
  std::vector<std::string> maps;
};

void rsd_cmd(const RsdArgs& a) {
  const LabelSchema schema = schema_from(a.schema);
  const LabelVolume labels = read_labels(a.labels, parse_space(a.space), schema);
  std::ostringstream csv;
  write_rsd_csv(csv, labels, &schema, read_maps(a.maps));
  if (a.out.empty()) std::cout << csv.str();
  else write_text_atomic(a.out, csv.str());
}

// --- ablation ----------------------------------------------------------------

struct PlanArgs {
  std::string base, out_dir, codes = "F,T,S,L,P,E1,E2,E3", sizes;
  std::vector<std::string> combinations;
};

void ablation_plan(const PlanArgs& a) {
  const nlohmann::json base = nlohmann::json::parse(read_text(a.base), nullptr, false);
  if (base.is_discarded()) throw ConfigError("base config is not valid JSON: " + a.base);
  PipelineConfig::from_json(base, fs::absolute(a.base).parent_path());
  std::vector<Combination> combos;
  if (!a.sizes.empty()) {
    const Combination pool = parse_combination(a.codes);
    combos = enumerate_combinations(pool, parse_sizes(a.sizes));
  }
  for (const auto& c : a.combinations) combos.push_back(parse_combination(c));
  if (combos.empty()) throw ArgumentError("nothing to plan: give --sizes or --combination");
  for (const auto& p : emit_manifest_set(combos, base, a.out_dir)) std::cout << p.string() << "\n";
}

struct RankArgs {
  std::vector<std::string> runs;
  std::string metric = "dsc", out;
};

void ablation_rank(const RankArgs& a) {
  std::vector<RunManifest> runs;
  for (const auto& path : a.runs) {
    const auto j = nlohmann::json::parse(read_text(path), nullptr, false);
    if (j.is_discarded()) throw ArgumentError("run manifest is not valid JSON: " + path);
    runs.push_back(RunManifest::from_json(j));
  }
  std::ostringstream csv;
  write_leaderboard_csv(csv, rank_runs(runs, a.metric));
  if (a.out.empty()) std::cout << csv.str();
  else write_text_atomic(a.out, csv.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-MRI brain parcellation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for voxel-parallel kernels")->check(CLI::PositiveNumber);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit-dti", "fit diffusion tensors and write the scalar maps");
  fit_cmd->add_option("--dwi", fit.dwi, "4D diffusion-weighted NIfTI")->required();
  fit_cmd->add_option("--bval", fit.bval, "b-values (default: next to the image)");
  fit_cmd->add_option("--bvec", fit.bvec, "gradient directions (default: next to the image)");
  fit_cmd->add_option("--out-dir", fit.out_dir, "output directory")->required();

  ConformArgs conform;
  auto* conform_sub = app.add_subcommand("conform", "resample a volume onto the conformed LIA grid");
  conform_sub->add_option("--in", conform.in)->required();
  conform_sub->add_option("--out", conform.out)->required();
  conform_sub->add_option("--interp", conform.interp, "nearest, trilinear or auto (by voxel type)");
  conform_sub->add_option("--transform", conform.transform, "conformed-to-native world transform");
  conform_sub->add_option("--dim", conform.dim)->check(CLI::PositiveNumber);
  conform_sub->add_option("--spacing", conform.spacing)->check(CLI::PositiveNumber);

  std::string config_path;
  auto* parc = app.add_subcommand("parcellate", "run the two-stage parcellation pipeline");
  parc->add_option("--config", config_path, "pipeline config JSON")->required();

  PostArgs post;
  auto* post_cmd = app.add_subcommand("postprocess", "restrict, dilate and keep largest components per group");
  post_cmd->add_option("--labels", post.labels, "fine labels on the coarse grid")->required();
  post_cmd->add_option("--coarse", post.coarse, "coarse group labels")->required();
  post_cmd->add_option("--out", post.out)->required();
  post_cmd->add_option("--schema", post.schema);
  post_cmd->add_option("--space", post.space, "lut or internal");
  post_cmd->add_option("--connectivity", post.connectivity);
  post_cmd->add_option("--dilation-iterations", post.dilation);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "per-region DSC, HD95 and RSD");
  eval_cmd->add_option("--pred", eval.pred)->required();
  eval_cmd->add_option("--gt", eval.gt)->required();
  eval_cmd->add_option("--schema", eval.schema);
  eval_cmd->add_option("--space", eval.space, "lut, internal or coarse");
  eval_cmd->add_option("--map", eval.maps, "scalar map for RSD as name=path (fa, md, cs)");
  eval_cmd->add_option("--out", eval.out, "CSV path (default stdout)");
  eval_cmd->add_option("--summary", eval.summary, "macro summary JSON path");

  RsdArgs rsd_args;
  auto* rsd_sub = app.add_subcommand("rsd", "relative standard deviation of maps within regions");
  rsd_sub->add_option("--labels", rsd_args.labels)->required();
  rsd_sub->add_option("--map", rsd_args.maps, "name=path")->required();
  rsd_sub->add_option("--schema", rsd_args.schema);
  rsd_sub->add_option("--space", rsd_args.space);
  rsd_sub->add_option("--out", rsd_args.out);

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("ablation-plan", "write one pipeline config per input-map combination");
  plan_cmd->add_option("--base", plan.base, "base pipeline config")->required();
  plan_cmd->add_option("--out-dir", plan.out_dir)->required();
  plan_cmd->add_option("--codes", plan.codes, "code pool for enumeration");
  plan_cmd->add_option("--sizes", plan.sizes, "comma-separated subset sizes");
  plan_cmd->add_option("--combination", plan.combinations, "explicit combination such as T+F+S+E1");

  RankArgs rank;
  auto* rank_cmd = app.add_subcommand("ablation-rank", "rank run manifests into a leaderboard");
  rank_cmd->add_option("--runs", rank.runs)->required();
  rank_cmd->add_option("--metric", rank.metric);
  rank_cmd->add_option("--out", rank.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    set_thread_count(threads);
    if (*fit_cmd) fit_dti(fit);
    else if (*conform_sub) conform_cmd(conform);
    else if (*parc) parcellate(config_path);
    else if (*post_cmd) postprocess_cmd(post);
    else if (*eval_cmd) evaluate_cmd(eval);
    else if (*rsd_sub) rsd_cmd(rsd_args);
    else if (*plan_cmd) ablation_plan(plan);
    else if (*rank_cmd) ablation_rank(rank);
  } catch (const Error& e) {
    std::cerr << "dkparc: " << to_string(e.kind()) << " error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "dkparc: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
