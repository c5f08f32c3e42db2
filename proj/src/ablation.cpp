#include "dkparc/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "dkparc/io_util.hpp"
#include "dkparc/metrics.hpp"

namespace dkparc {

const std::vector<MapCode>& ablation_vocabulary() {
  static const std::vector<MapCode> codes{MapCode::FA, MapCode::TR, MapCode::CS, MapCode::CL,
                                          MapCode::CP, MapCode::E1, MapCode::E2, MapCode::E3};
  return codes;
}

std::string combination_name(const Combination& combination, const std::string& separator) {
  std::string out;
  for (std::size_t i = 0; i < combination.size(); ++i) out += (i ? separator : "") + short_code(combination[i]);
  return out;
}

void validate_combination(const Combination& combination) {
  if (combination.empty()) throw ArgumentError("a combination needs at least one map");
  const auto& vocab = ablation_vocabulary();
  std::set<MapCode> seen;
  for (MapCode c : combination) {
    if (std::find(vocab.begin(), vocab.end(), c) == vocab.end())
      throw ArgumentError("map " + short_code(c) + " is not in the ablation vocabulary");
    if (!seen.insert(c).second) throw ArgumentError("map " + short_code(c) + " appears twice in a combination");
  }
}

Combination parse_combination(const std::string& text) {
  Combination out;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) out.push_back(parse_map_code(token));
    token.clear();
  };
  for (char c : text) {
    if (c == '+' || c == '_' || c == ',') flush();
    else if (!std::isspace(static_cast<unsigned char>(c))) token += c;
  }
  flush();
  validate_combination(out);
  return out;
}

std::vector<Combination> enumerate_combinations(std::span<const MapCode> codes, std::span<const int> sizes) {
  // Canonical order and no repeats.
  Combination pool;
  for (MapCode v : ablation_vocabulary())
    if (std::find(codes.begin(), codes.end(), v) != codes.end()) pool.push_back(v);
  for (MapCode c : codes)
    if (std::find(pool.begin(), pool.end(), c) == pool.end())
      throw ArgumentError("map " + short_code(c) + " is not in the ablation vocabulary");

  const int n = static_cast<int>(pool.size());
  std::vector<Combination> out;
  std::set<int> done;
  for (int k : sizes) {
    if (k < 1 || k > n)
      throw ArgumentError("combination size " + std::to_string(k) + " is outside 1.." + std::to_string(n));
    if (!done.insert(k).second) continue;
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
      Combination c;
      for (int i : idx) c.push_back(pool[static_cast<std::size_t>(i)]);
      out.push_back(std::move(c));
      int i = k - 1;
      while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
      if (i < 0) break;
      ++idx[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json codes = nlohmann::json::array();
  for (MapCode c : combination) codes.push_back(short_code(c));
  return {{"combination", codes}, {"config_hash", config_hash},  {"metric", metric},
          {"mean", mean},         {"std", std},                   {"regions", regions},
          {"created", created}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    for (const auto& c : j.at("combination")) m.combination.push_back(parse_map_code(c.get<std::string>()));
    m.config_hash = j.value("config_hash", std::string());
    m.metric = j.at("metric").get<std::string>();
    m.mean = j.at("mean").get<double>();
    m.std = j.value("std", 0.0);
    m.regions = j.value("regions", nlohmann::json::array());
    m.created = j.value("created", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed run manifest: ") + e.what());
  }
  validate_combination(m.combination);
  return m;
}

bool higher_is_better(const std::string& metric) {
  if (metric.rfind("dsc", 0) == 0) return true;
  if (metric.rfind("hd95", 0) == 0 || metric.rfind("rsd", 0) == 0) return false;
  throw ArgumentError("unknown metric '" + metric + "'");
}

std::vector<LeaderboardEntry> rank_runs(std::span<const RunManifest> runs, const std::string& metric) {
  const bool descending = higher_is_better(metric);
  for (const auto& r : runs)
    if (r.metric != metric)
      throw ArgumentError("run " + combination_name(r.combination) + " reports " + r.metric + ", ranking " + metric);
  std::vector<LeaderboardEntry> board;
  for (const auto& r : runs) board.push_back({r, 0});
  std::sort(board.begin(), board.end(), [&](const LeaderboardEntry& a, const LeaderboardEntry& b) {
    if (a.run.mean != b.run.mean) return descending ? a.run.mean > b.run.mean : a.run.mean < b.run.mean;
    if (a.run.combination.size() != b.run.combination.size()) return a.run.combination.size() < b.run.combination.size();
    return combination_name(a.run.combination) < combination_name(b.run.combination);
  });
  for (std::size_t i = 0; i < board.size(); ++i) board[i].rank = static_cast<int>(i) + 1;
  return board;
}

void write_leaderboard_csv(std::ostream& out, const std::vector<LeaderboardEntry>& board) {
  out << "combination,metric,mean,std,rank\n";
  for (const auto& e : board)
    out << combination_name(e.run.combination) << ',' << e.run.metric << ',' << format_number(e.run.mean) << ','
        << format_number(e.run.std) << ',' << e.rank << '\n';
}

std::vector<std::filesystem::path> emit_manifest_set(std::span<const Combination> combinations,
                                                     const nlohmann::json& base, const std::filesystem::path& dir) {
  if (!base.is_object()) throw ConfigError("base config must be a JSON object");
  const std::string base_hash = config_hash(base);
  std::vector<std::filesystem::path> written;
  std::set<std::string> names;
  for (const auto& c : combinations) {
    validate_combination(c);
    const std::string stem = combination_name(c, "_");
    if (!names.insert(stem).second) throw ArgumentError("combination " + stem + " requested twice");
    nlohmann::json config = base;
    config["input_maps"] = nlohmann::json::array();
    for (MapCode code : c) config["input_maps"].push_back(short_code(code));
    config["base_config_hash"] = base_hash;
    const auto path = dir / (stem + ".json");
    write_text_atomic(path, config.dump(2) + "\n");
    written.push_back(path);
  }
  return written;
}

}  // namespace dkparc
