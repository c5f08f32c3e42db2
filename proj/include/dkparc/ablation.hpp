#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkparc/tensor.hpp"

namespace dkparc {

/// Ordered set of input maps for one experiment.
using Combination = std::vector<MapCode>;

/// Codes an ablation may draw from, in canonical order: F, T, S, L, P, E1, E2, E3.
/// MD is left out because it is the trace divided by three.
const std::vector<MapCode>& ablation_vocabulary();

/// Codes joined by `separator`, in the combination's own order ("T+F+S+E1").
std::string combination_name(const Combination& combination, const std::string& separator = "+");

/// Accepts codes separated by '+', '_' or ','. Throws ArgumentError for an empty list, a
/// duplicate, or a code outside the vocabulary.
Combination parse_combination(const std::string& text);
void validate_combination(const Combination& combination);

/// Every subset of each requested size, each in vocabulary order. Sizes are processed in the
/// order given; repeated sizes and codes contribute once. Throws ArgumentError when a size is
/// not in 1..|codes|.
std::vector<Combination> enumerate_combinations(std::span<const MapCode> codes, std::span<const int> sizes);

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Outcome of one experiment. Scores come from metric reports; nothing here runs a model.
struct RunManifest {
  Combination combination;
  std::string config_hash;
  std::string metric;  // dsc, hd95_mm, rsd_fa, ...
  double mean = 0;
  double std = 0;
  nlohmann::json regions = nlohmann::json::array();
  std::string created;  // free-form timestamp, informational

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// True for metrics where larger is better (dsc); hd95 and rsd metrics rank ascending.
/// Throws ArgumentError for an unknown metric.
bool higher_is_better(const std::string& metric);

struct LeaderboardEntry {
  RunManifest run;
  int rank = 0;  // 1-based, unique
};

/// Best first; equal scores go to fewer channels, then to the lexicographically smaller name.
/// Throws ArgumentError when runs report different metrics or `metric` disagrees with them.
std::vector<LeaderboardEntry> rank_runs(std::span<const RunManifest> runs, const std::string& metric);

/// Columns: combination,metric,mean,std,rank.
void write_leaderboard_csv(std::ostream& out, const std::vector<LeaderboardEntry>& board);

/// One pipeline config per combination, identical to `base` except for "input_maps", written
/// to `dir/<codes joined by _>.json`. Output is byte-identical across runs.
std::vector<std::filesystem::path> emit_manifest_set(std::span<const Combination> combinations,
                                                     const nlohmann::json& base, const std::filesystem::path& dir);

}  // namespace dkparc
