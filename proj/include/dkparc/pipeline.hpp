#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkparc/backend.hpp"
#include "dkparc/inference.hpp"
#include "dkparc/postprocess.hpp"
#include "dkparc/resample.hpp"
#include "dkparc/tensor.hpp"

namespace dkparc {

struct BackendSpec {
  std::vector<std::string> command;
  std::optional<Eigen::Vector3i> patch;
  std::optional<double> timeout_seconds;
};

/// Everything one parcellation run needs. Relative paths in the JSON are resolved against
/// the directory of the config file.
///
///   {
///     "dwi": "dwi.nii.gz", "bval": "dwi.bval", "bvec": "dwi.bvec",   // or
///     "maps": {"F": "fa.nii.gz", "T": "tr.nii.gz", ...},
///     "input_maps": ["F", "T", "S", "E1"],
///     "transform": "conformed_to_native.json",                       // optional, default identity
///     "schema": "schema.json",                                       // optional, default DK-101
///     "conform": {"dim": 256, "spacing": 1.0},
///     "sliding_window": {"patch": 128, "overlap": 0.5, "sigma_fraction": 0.125},
///     "postprocess": {"connectivity": 26, "dilation_iterations": -1},
///     "backends": {"coarse": {"command": [...]}, "fine": {"left_cortical": {...}, ...}},
///     "output_dir": "out"
///   }
struct PipelineConfig {
  std::optional<std::filesystem::path> dwi, bval, bvec;
  std::map<MapCode, std::filesystem::path> maps;
  std::vector<MapCode> input_maps = default_input_maps();
  std::optional<std::filesystem::path> transform;
  std::optional<std::filesystem::path> schema;
  ConformSpec conform;
  FitOptions fit;
  SlidingWindowConfig window;
  PostprocessConfig postprocess;
  std::optional<BackendSpec> coarse_backend;
  std::map<std::string, BackendSpec> fine_backends;  // keyed by group name or id, as written
  std::filesystem::path output_dir = "out";
  nlohmann::json source = nlohmann::json::object();  // the document as read

  /// Throws ConfigError for malformed or inconsistent content. Does not touch the filesystem.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);

  /// Hash of the document as read; identical configs give identical hashes.
  std::string hash() const;
  LabelSchema load_schema() const;
  /// Referenced files exist, every stage has a backend and every input map has a source.
  /// Throws ConfigError naming the first problem.
  void validate(const LabelSchema& schema) const;
};

/// Backends for the coarse stage and each fine group.
struct PipelineBackends {
  std::unique_ptr<SegmenterBackend> coarse;
  std::map<int, std::unique_ptr<SegmenterBackend>> fine;

  /// Throws ConfigError when any stage lacks a backend.
  void require_complete(const LabelSchema& schema) const;
};

/// Process backends as described by the config. Input channel counts follow the map list.
PipelineBackends make_backends(const PipelineConfig& config, const LabelSchema& schema);

/// Native-space inputs.
struct PipelineInputs {
  std::optional<DwiSeries> dwi;
  std::map<MapCode, Volume<float>> maps;
  GridTransform conformed_to_native;

  const Grid& native_grid() const;
};

PipelineInputs load_inputs(const PipelineConfig& config);

struct PipelineResult {
  LabelVolume labels;            // native grid, lookup-table ids
  LabelVolume coarse;            // native grid, group ids
  LabelVolume fine_conformed;    // conformed grid, internal ids
  nlohmann::json manifest;
};

/// conform -> (fit + derive) -> coarse -> 5 x fine -> post-process -> merge -> native -> lookup table.
/// Failures are rethrown as StageError naming the stage. Missing backends are reported before
/// any computation.
PipelineResult run_pipeline(const PipelineInputs& inputs, PipelineBackends& backends, const LabelSchema& schema,
                            const PipelineConfig& config);

/// Resolves a fine-backend key (group name or id) to a group id, or 0 if it names none.
int group_for_key(const LabelSchema& schema, const std::string& key);

}  // namespace dkparc
