#include "dkparc/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "dkparc/ablation.hpp"
#include "dkparc/nifti.hpp"

namespace dkparc {
namespace {

using Clock = std::chrono::steady_clock;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

BackendSpec parse_backend(const nlohmann::json& j, const std::filesystem::path& base, const std::string& what) {
  BackendSpec spec;
  if (!j.is_object() || !j.contains("command")) throw ConfigError(what + ": backend needs a \"command\"");
  const auto& cmd = j.at("command");
  if (cmd.is_string()) spec.command = {cmd.get<std::string>()};
  else spec.command = cmd.get<std::vector<std::string>>();
  if (spec.command.empty() || spec.command.front().empty()) throw ConfigError(what + ": empty backend command");
  // Paths with a directory part are relative to the config; bare names go through PATH.
  if (spec.command.front().find('/') != std::string::npos) spec.command.front() = resolve(base, spec.command.front()).string();
  if (j.contains("patch")) spec.patch = SlidingWindowConfig::from_json({{"patch", j.at("patch")}}).patch;
  if (j.contains("timeout_seconds")) spec.timeout_seconds = j.at("timeout_seconds").get<double>();
  return spec;
}

template <typename F>
auto in_stage(const std::string& stage, nlohmann::json& timings, F&& body) {
  const auto t0 = Clock::now();
  auto record = [&] {
    timings[stage] = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      record();
    } else {
      auto r = body();
      record();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const std::exception& e) {
    throw StageError(stage, DataError(e.what()));
  }
}

}  // namespace

int group_for_key(const LabelSchema& schema, const std::string& key) {
  for (const auto& g : schema.groups())
    if (g.name == key || std::to_string(g.id) == key) return g.id;
  return 0;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  PipelineConfig c;
  c.source = j;
  try {
    if (j.contains("dwi")) c.dwi = resolve(base, j.at("dwi").get<std::string>());
    if (j.contains("bval")) c.bval = resolve(base, j.at("bval").get<std::string>());
    if (j.contains("bvec")) c.bvec = resolve(base, j.at("bvec").get<std::string>());
    if (j.contains("maps"))
      for (const auto& [code, path] : j.at("maps").items()) c.maps[parse_map_code(code)] = resolve(base, path.get<std::string>());
    if (j.contains("input_maps")) {
      c.input_maps.clear();
      for (const auto& code : j.at("input_maps")) c.input_maps.push_back(parse_map_code(code.get<std::string>()));
    }
    if (j.contains("transform")) c.transform = resolve(base, j.at("transform").get<std::string>());
    if (j.contains("schema")) c.schema = resolve(base, j.at("schema").get<std::string>());
    if (j.contains("conform")) {
      c.conform.dim = j.at("conform").value("dim", c.conform.dim);
      c.conform.spacing = j.at("conform").value("spacing", c.conform.spacing);
    }
    if (j.contains("fit")) {
      c.fit.target_shell = j.at("fit").value("target_shell", c.fit.target_shell);
      c.fit.shell_tolerance = j.at("fit").value("shell_tolerance", c.fit.shell_tolerance);
    }
    if (j.contains("sliding_window")) c.window = SlidingWindowConfig::from_json(j.at("sliding_window"));
    if (j.contains("postprocess")) c.postprocess = PostprocessConfig::from_json(j.at("postprocess"));
    if (j.contains("backends")) {
      const auto& b = j.at("backends");
      if (b.contains("coarse")) c.coarse_backend = parse_backend(b.at("coarse"), base, "coarse");
      if (b.contains("fine"))
        for (const auto& [key, spec] : b.at("fine").items()) c.fine_backends[key] = parse_backend(spec, base, key);
    }
    if (j.contains("output_dir")) c.output_dir = resolve(base, j.at("output_dir").get<std::string>());
    else c.output_dir = resolve(base, "out");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }

  if (c.dwi.has_value() == !c.maps.empty())
    throw ConfigError("pipeline config needs exactly one of \"dwi\" or \"maps\"");
  if (c.input_maps.empty()) throw ConfigError("input_maps is empty");
  for (std::size_t i = 0; i < c.input_maps.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (c.input_maps[i] == c.input_maps[k]) throw ConfigError("input map " + short_code(c.input_maps[i]) + " listed twice");
  if (c.conform.dim <= 0 || !(c.conform.spacing > 0)) throw ConfigError("conform dim and spacing must be positive");
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, std::filesystem::absolute(path).parent_path());
}

std::string PipelineConfig::hash() const { return config_hash(source); }

LabelSchema PipelineConfig::load_schema() const { return schema ? LabelSchema::load(*schema) : LabelSchema::dk101(); }

void PipelineConfig::validate(const LabelSchema& s) const {
  auto require = [](const std::optional<std::filesystem::path>& p, const char* what) {
    if (p && !std::filesystem::exists(*p)) throw ConfigError(std::string(what) + " not found: " + p->string());
  };
  require(dwi, "DWI image");
  require(bval, "b-value file");
  require(bvec, "b-vector file");
  require(transform, "transform");
  require(schema, "schema");
  if (!dwi) {
    for (MapCode code : input_maps) {
      auto it = maps.find(code);
      if (it == maps.end()) throw ConfigError("input map " + short_code(code) + " has no source file");
      require(it->second, "map");
    }
  }
  if (!coarse_backend) throw ConfigError("no backend configured for the coarse stage");
  std::map<int, std::string> seen;
  for (const auto& [key, _] : fine_backends) {
    const int g = group_for_key(s, key);
    if (g == 0 || s.group(g).passthrough) throw ConfigError("fine backend '" + key + "' names no fine group");
    if (!seen.emplace(g, key).second) throw ConfigError("group " + key + " has two fine backends");
  }
  for (int g : s.fine_groups())
    if (!seen.count(g)) throw ConfigError("no backend configured for fine group " + std::to_string(g) + " (" + s.group(g).name + ")");
}

void PipelineBackends::require_complete(const LabelSchema& schema) const {
  if (!coarse) throw ConfigError("no backend supplied for the coarse stage");
  for (int g : schema.fine_groups())
    if (!fine.count(g) || !fine.at(g))
      throw ConfigError("no backend supplied for fine group " + std::to_string(g) + " (" + schema.group(g).name + ")");
}

PipelineBackends make_backends(const PipelineConfig& config, const LabelSchema& schema) {
  config.validate(schema);
  const auto timeout = backend_timeout_from_env(std::chrono::milliseconds(600000));
  auto make = [&](const BackendSpec& spec, int channels, int classes) {
    LaunchSpec launch;
    launch.command = spec.command;
    launch.input_channels = channels;
    launch.classes = classes;
    launch.patch = spec.patch;
    launch.timeout = spec.timeout_seconds ? std::chrono::milliseconds(static_cast<std::int64_t>(*spec.timeout_seconds * 1000))
                                          : timeout;
    return std::make_unique<ProcessBackend>(std::move(launch));
  };
  const int maps = static_cast<int>(config.input_maps.size());
  PipelineBackends b;
  b.coarse = make(*config.coarse_backend, maps, LabelSchema::kGroupCount + 1);
  for (const auto& [key, spec] : config.fine_backends) {
    const int g = group_for_key(schema, key);
    b.fine[g] = make(spec, maps + 1, static_cast<int>(schema.partition(g).size()) + 1);
  }
  return b;
}

const Grid& PipelineInputs::native_grid() const {
  if (dwi) return dwi->grid();
  if (maps.empty()) throw ConfigError("pipeline has no inputs");
  return maps.begin()->second.grid();
}

PipelineInputs load_inputs(const PipelineConfig& config) {
  PipelineInputs in;
  if (config.dwi) {
    in.dwi = read_dwi(*config.dwi, config.bval, config.bvec);
  } else {
    for (MapCode code : config.input_maps) {
      auto v = read_nifti<float>(config.maps.at(code));
      if (!in.maps.empty()) require_same_grid(in.maps.begin()->second.grid(), v.grid(), "input maps");
      in.maps.emplace(code, std::move(v));
    }
  }
  if (config.transform) in.conformed_to_native = read_transform(*config.transform);
  return in;
}

PipelineResult run_pipeline(const PipelineInputs& inputs, PipelineBackends& backends, const LabelSchema& schema,
                            const PipelineConfig& config) {
  backends.require_complete(schema);
  config.window.validate();
  nlohmann::json timings = nlohmann::json::object();

  const Grid native = inputs.native_grid();
  const GridTransform& to_native_world = inputs.conformed_to_native;
  const Eigen::Vector3d centre =
      to_native_world.invertible() ? to_native_world.inverse().apply(native.world_center()) : native.world_center();
  const Grid conformed = conformed_grid(centre, config.conform);

  std::vector<Volume<float>> channels = in_stage("conform", timings, [&] {
    std::vector<Volume<float>> out;
    if (inputs.dwi) {
      DwiSeries series = *inputs.dwi;
      for (auto& v : series.volumes) v = resample_to(v, conformed, to_native_world, Interpolation::Trilinear);
      const auto maps = derive_maps(eigendecompose(fit_tensor(series, config.fit)), config.input_maps);
      out = select_channels(maps, config.input_maps);
    } else {
      for (MapCode code : config.input_maps) {
        auto it = inputs.maps.find(code);
        if (it == inputs.maps.end()) throw ConfigError("input map " + short_code(code) + " was not loaded");
        out.push_back(resample_to(it->second, conformed, to_native_world, Interpolation::Trilinear));
      }
    }
    return out;
  });

  const LabelVolume coarse =
      in_stage("coarse", timings, [&] { return run_coarse(channels, *backends.coarse, config.window); });

  std::map<int, LabelVolume> fine;
  {
    const auto stack = build_fine_input(channels, coarse);
    for (int g : schema.fine_groups()) {
      const std::string stage = "fine:" + schema.group(g).name;
      fine.emplace(g, in_stage(stage, timings, [&] {
                     const auto raw = run_fine(stack, g, *backends.fine.at(g), schema, config.window);
                     return postprocess_group(raw, coarse, g, config.postprocess);
                   }));
    }
  }

  PipelineResult result;
  result.fine_conformed = in_stage("merge", timings, [&] { return merge_fine(coarse, fine, schema); });
  in_stage("native", timings, [&] {
    result.labels = to_freesurfer_lut(to_native(result.fine_conformed, to_native_world, native), schema);
    result.coarse = to_native(coarse, to_native_world, native);
  });

  nlohmann::json backends_json;
  backends_json["coarse"] = backends.coarse->identity();
  for (const auto& [g, b] : backends.fine) backends_json[schema.group(g).name] = b->identity();
  nlohmann::json maps_json = nlohmann::json::array();
  for (MapCode c : config.input_maps) maps_json.push_back(short_code(c));
  result.manifest = {{"config_hash", config.hash()},
                     {"schema", schema.name()},
                     {"input_maps", maps_json},
                     {"conformed_dims", {conformed.dims()[0], conformed.dims()[1], conformed.dims()[2]}},
                     {"native_dims", {native.dims()[0], native.dims()[1], native.dims()[2]}},
                     {"sliding_window", config.window.to_json()},
                     {"postprocess", config.postprocess.to_json()},
                     {"backends", backends_json},
                     {"timings_ms", timings}};
  return result;
}

}  // namespace dkparc
