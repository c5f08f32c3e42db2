#include "dkparc/inference.hpp"

#include <cmath>
#include <sstream>

namespace dkparc {
namespace {

std::string describe(const Eigen::Vector3i& v) {
  std::ostringstream s;
  s << "(" << v[0] << "," << v[1] << "," << v[2] << ")";
  return s.str();
}

// Scores that already form a distribution pass through; anything else is treated as logits.
void normalise_scores(Eigen::ArrayXXf& scores) {
  const int k = static_cast<int>(scores.cols());
  for (Eigen::Index v = 0; v < scores.rows(); ++v) {
    auto row = scores.row(v);
    const double sum = row.template cast<double>().sum();
    if (row.minCoeff() >= 0.0f && std::abs(sum - 1.0) <= 1e-3) continue;
    const float peak = row.maxCoeff();
    double total = 0;
    for (int c = 0; c < k; ++c) total += std::exp(static_cast<double>(row[c] - peak));
    for (int c = 0; c < k; ++c) row[c] = static_cast<float>(std::exp(static_cast<double>(row[c] - peak)) / total);
  }
}

}  // namespace

void SlidingWindowConfig::validate() const {
  if ((patch.array() <= 0).any()) throw ConfigError("patch shape must be positive, got " + describe(patch));
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)");
  if (!(sigma_fraction > 0.0)) throw ConfigError("gaussian sigma fraction must be positive");
}

nlohmann::json SlidingWindowConfig::to_json() const {
  return {{"patch", {patch[0], patch[1], patch[2]}}, {"overlap", overlap}, {"sigma_fraction", sigma_fraction}};
}

SlidingWindowConfig SlidingWindowConfig::from_json(const nlohmann::json& j) {
  SlidingWindowConfig c;
  try {
    if (j.contains("patch")) {
      const auto& p = j.at("patch");
      if (p.is_number_integer()) c.patch.setConstant(p.get<int>());
      else if (p.is_array() && p.size() == 3) c.patch = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>()};
      else throw ConfigError("patch must be an integer or three integers");
    }
    c.overlap = j.value("overlap", c.overlap);
    c.sigma_fraction = j.value("sigma_fraction", c.sigma_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sliding window config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::ArrayXf gaussian_weight(const Eigen::Vector3i& shape, double sigma_fraction) {
  if (!(sigma_fraction > 0.0)) throw ConfigError("gaussian sigma fraction must be positive");
  std::array<Eigen::ArrayXd, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const double sigma = shape[a] * sigma_fraction;
    const double centre = (shape[a] - 1) / 2.0;
    axis[a] = Eigen::ArrayXd::LinSpaced(shape[a], 0, shape[a] - 1);
    axis[a] = (-(axis[a] - centre).square() / (2 * sigma * sigma)).exp();
  }
  Eigen::ArrayXf w(std::int64_t{shape[0]} * shape[1] * shape[2]);
  std::int64_t i = 0;
  for (int z = 0; z < shape[2]; ++z)
    for (int y = 0; y < shape[1]; ++y)
      for (int x = 0; x < shape[0]; ++x)
        // Underflow far from the centre would leave voxels with no weight at all.
        w[i++] = std::max(static_cast<float>(axis[0][x] * axis[1][y] * axis[2][z]), std::numeric_limits<float>::min());
  return w;
}

std::vector<int> tile_starts(int extent, int patch, double overlap) {
  if (extent < patch) throw ArgumentError("extent is smaller than the patch");
  const int stride = std::max(1, static_cast<int>(std::floor(patch * (1.0 - overlap))));
  std::vector<int> starts;
  for (int s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

LabelImage ProbabilityVolume::argmax() const {
  LabelImage out(grid);
  for (Eigen::Index v = 0; v < probabilities.rows(); ++v) {
    Eigen::Index best = 0;
    probabilities.row(v).maxCoeff(&best);
    out[v] = static_cast<std::int32_t>(best);
  }
  return out;
}

Volume<float> ProbabilityVolume::channel(int k) const {
  return Volume<float>(grid, Volume<float>::Data(probabilities.col(k)));
}

ProbabilityVolume sliding_window_predict(std::span<const Volume<float>> channels, SegmenterBackend& backend,
                                         const SlidingWindowConfig& config) {
  config.validate();
  if (channels.empty()) throw ArgumentError("sliding window prediction needs at least one channel");
  const Grid& grid = channels.front().grid();
  for (const auto& c : channels) require_same_grid(grid, c.grid(), "sliding window input");
  const int in_channels = static_cast<int>(channels.size());
  if (backend.input_channels() != in_channels)
    throw ContractError(backend.identity() + " takes " + std::to_string(backend.input_channels()) +
                        " channels, stage supplies " + std::to_string(in_channels));
  if (auto p = backend.patch_shape(); p && *p != config.patch)
    throw ContractError(backend.identity() + " was built for patch " + describe(*p) + ", configured " +
                        describe(config.patch));
  const int classes = backend.classes();
  if (classes < 1) throw ContractError(backend.identity() + " declares no classes");

  const Eigen::Vector3i dims = grid.dims();
  const Eigen::Vector3i& patch = config.patch;
  const Eigen::Vector3i padded = dims.cwiseMax(patch);
  const Eigen::ArrayXf weight = gaussian_weight(patch, config.sigma_fraction);
  std::array<std::vector<int>, 3> starts;
  for (int a = 0; a < 3; ++a) starts[a] = tile_starts(padded[a], patch[a], config.overlap);

  ProbabilityVolume result;
  result.grid = grid;
  result.probabilities.setZero(grid.size(), classes);
  result.weight.setZero(grid.size());

  Patch input(patch, in_channels);
  for (int sz : starts[2])
    for (int sy : starts[1])
      for (int sx : starts[0]) {
        const Eigen::Vector3i origin(sx, sy, sz);
        input.values.setZero();
        for (int z = 0; z < patch[2] && sz + z < dims[2]; ++z)
          for (int y = 0; y < patch[1] && sy + y < dims[1]; ++y)
            for (int x = 0; x < patch[0] && sx + x < dims[0]; ++x) {
              const auto src = grid.index(sx + x, sy + y, sz + z);
              const auto dst = input.index(x, y, z);
              for (int c = 0; c < in_channels; ++c) input.values(dst, c) = channels[static_cast<std::size_t>(c)][src];
            }

        Patch out = backend.predict(input, TileContext{origin, padded});
        if (out.shape != patch || out.channels() != classes || out.voxels() != input.voxels())
          throw ContractError(backend.identity() + " returned shape " + describe(out.shape) + " x " +
                              std::to_string(out.channels()) + " for tile " + describe(origin) + ", expected " +
                              describe(patch) + " x " + std::to_string(classes));
        if (!out.values.allFinite())
          throw BackendError(backend.identity() + " returned non-finite scores for tile at " + describe(origin));
        normalise_scores(out.values);

        for (int z = 0; z < patch[2] && sz + z < dims[2]; ++z)
          for (int y = 0; y < patch[1] && sy + y < dims[1]; ++y)
            for (int x = 0; x < patch[0] && sx + x < dims[0]; ++x) {
              const auto dst = grid.index(sx + x, sy + y, sz + z);
              const auto src = out.index(x, y, z);
              const float w = weight[src];
              result.weight[dst] += w;
              result.probabilities.row(dst) += w * out.values.row(src);
            }
      }

  for (Eigen::Index v = 0; v < result.probabilities.rows(); ++v) {
    if (!(result.weight[v] > 0)) continue;
    auto row = result.probabilities.row(v);
    const Eigen::ArrayXd p = row.transpose().cast<double>() / static_cast<double>(result.weight[v]);
    row = (p / p.sum()).cast<float>().transpose();
  }
  return result;
}

const std::vector<MapCode>& default_input_maps() {
  static const std::vector<MapCode> codes{MapCode::FA, MapCode::TR, MapCode::CS, MapCode::E1};
  return codes;
}

std::vector<Volume<float>> select_channels(const ScalarMapSet& maps, std::span<const MapCode> codes) {
  std::vector<Volume<float>> out;
  for (MapCode code : codes) out.push_back(maps.at(code).cast<float>());
  return out;
}

LabelVolume run_coarse(std::span<const Volume<float>> maps, SegmenterBackend& backend,
                       const SlidingWindowConfig& config) {
  if (backend.classes() != LabelSchema::kGroupCount + 1)
    throw ContractError("coarse backend " + backend.identity() + " emits " + std::to_string(backend.classes()) +
                        " classes, expected " + std::to_string(LabelSchema::kGroupCount + 1));
  return {sliding_window_predict(maps, backend, config).argmax(), LabelSpace::Coarse};
}

LabelVolume run_coarse(const ScalarMapSet& maps, SegmenterBackend& backend, const SlidingWindowConfig& config,
                       std::span<const MapCode> codes) {
  const auto channels = select_channels(maps, codes);
  return run_coarse(channels, backend, config);
}

std::vector<Volume<float>> build_fine_input(std::span<const Volume<float>> maps, const LabelVolume& coarse) {
  if (coarse.space != LabelSpace::Coarse) throw DataError("fine input expects a coarse label volume");
  std::vector<Volume<float>> stack;
  for (const auto& m : maps) {
    require_same_grid(coarse.grid(), m.grid(), "fine input");
    stack.push_back(m);
  }
  stack.push_back(coarse.image.with_data(coarse.image.data().cast<float>() / float(LabelSchema::kGroupCount)));
  return stack;
}

LabelVolume run_fine(std::span<const Volume<float>> stack, int group, SegmenterBackend& backend,
                     const LabelSchema& schema, const SlidingWindowConfig& config) {
  if (group < 1 || group > LabelSchema::kGroupCount || schema.group(group).passthrough)
    throw ConfigError("group " + std::to_string(group) + " is not predicted by a fine stage");
  const auto& partition = schema.partition(group);
  const int expected = static_cast<int>(partition.size()) + 1;
  if (backend.classes() != expected)
    throw ContractError("fine backend " + backend.identity() + " for group " + std::to_string(group) + " emits " +
                        std::to_string(backend.classes()) + " classes, partition needs " + std::to_string(expected));
  const LabelImage classes = sliding_window_predict(stack, backend, config).argmax();
  LabelVolume out{LabelImage(classes.grid()), LabelSpace::FineInternal};
  for (Eigen::Index v = 0; v < classes.size(); ++v) {
    const int c = classes[v];
    out.image[v] = c == 0 ? 0 : partition[static_cast<std::size_t>(c - 1)];
  }
  return out;
}

}  // namespace dkparc
