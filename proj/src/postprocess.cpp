#include "dkparc/postprocess.hpp"

#include <map>
#include <tuple>

namespace dkparc {
namespace {

std::vector<Eigen::Vector3i> neighbour_offsets(Connectivity c) {
  std::vector<Eigen::Vector3i> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int order = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (order == 0) continue;
        if (c == Connectivity::Six && order > 1) continue;
        if (c == Connectivity::Eighteen && order > 2) continue;
        out.emplace_back(dx, dy, dz);
      }
  return out;
}

template <typename Visit>
void for_each_neighbour(const Grid& g, std::int64_t index, const std::vector<Eigen::Vector3i>& offsets, Visit&& visit) {
  const Eigen::Vector3i p = g.coords(index);
  for (const auto& o : offsets) {
    const Eigen::Vector3i q = p + o;
    if (g.contains(q[0], q[1], q[2])) visit(g.index(q[0], q[1], q[2]));
  }
}

}  // namespace

Connectivity connectivity_from_int(int n) {
  switch (n) {
    case 6: return Connectivity::Six;
    case 18: return Connectivity::Eighteen;
    case 26: return Connectivity::TwentySix;
    default: throw ConfigError("connectivity must be 6, 18 or 26, got " + std::to_string(n));
  }
}

nlohmann::json PostprocessConfig::to_json() const {
  return {{"connectivity", static_cast<int>(connectivity)}, {"dilation_iterations", dilation_iterations}};
}

PostprocessConfig PostprocessConfig::from_json(const nlohmann::json& j) {
  PostprocessConfig c;
  try {
    c.connectivity = connectivity_from_int(j.value("connectivity", 26));
    c.dilation_iterations = j.value("dilation_iterations", -1);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("postprocess config: ") + e.what());
  }
  return c;
}

MaskImage group_mask(const LabelVolume& coarse, int group) {
  if (coarse.space != LabelSpace::Coarse) throw DataError("group_mask expects a coarse label volume");
  return coarse.image.with_data((coarse.image.data() == group).cast<std::uint8_t>());
}

LabelVolume restrict_to_coarse(const LabelVolume& fine, const LabelVolume& coarse, int group) {
  require_same_grid(fine.grid(), coarse.grid(), "restrict_to_coarse");
  if (coarse.space != LabelSpace::Coarse) throw DataError("restrict_to_coarse expects a coarse label volume");
  return {fine.image.with_data((coarse.image.data() == group).select(fine.image.data(), 0)), fine.space};
}

LabelVolume dilate_into_mask(const LabelVolume& fine, const MaskImage& mask, int max_iterations) {
  require_same_grid(fine.grid(), mask.grid(), "dilate_into_mask");
  const Grid& g = fine.grid();
  const auto six = neighbour_offsets(Connectivity::Six);
  LabelVolume out = fine;
  auto& labels = out.image;

  std::vector<std::int64_t> frontier;
  std::vector<std::uint8_t> queued(static_cast<std::size_t>(g.size()), 0);
  auto consider = [&](std::int64_t v) {
    if (mask[v] && labels[v] == 0 && !queued[static_cast<std::size_t>(v)]) {
      queued[static_cast<std::size_t>(v)] = 1;
      frontier.push_back(v);
    }
  };
  for (std::int64_t v = 0; v < g.size(); ++v)
    if (labels[v] != 0) for_each_neighbour(g, v, six, consider);

  std::vector<std::pair<std::int64_t, std::int32_t>> grown;
  for (int iteration = 0; !frontier.empty() && (max_iterations < 0 || iteration < max_iterations); ++iteration) {
    std::sort(frontier.begin(), frontier.end());
    grown.clear();
    for (auto v : frontier) {
      std::int32_t best = 0;
      for_each_neighbour(g, v, six, [&](std::int64_t n) {
        if (labels[n] != 0 && (best == 0 || labels[n] < best)) best = labels[n];
      });
      grown.emplace_back(v, best);
    }
    // Apply after the sweep so every voxel of this shell sees the same previous state.
    for (const auto& [v, label] : grown) labels[v] = label;
    frontier.clear();
    for (const auto& [v, _] : grown) for_each_neighbour(g, v, six, consider);
  }
  return out;
}

LabelVolume largest_component(const LabelVolume& labels, Connectivity connectivity) {
  const Grid& g = labels.grid();
  const auto offsets = neighbour_offsets(connectivity);
  const auto& data = labels.image.data();
  std::vector<std::int32_t> component(static_cast<std::size_t>(g.size()), -1);

  struct Component {
    std::int32_t label;
    std::int64_t size;
    std::tuple<int, int, int> first;  // lexicographically smallest (x, y, z)
  };
  std::vector<Component> components;
  std::vector<std::int64_t> stack;
  for (std::int64_t seed = 0; seed < g.size(); ++seed) {
    if (data[seed] == 0 || component[static_cast<std::size_t>(seed)] >= 0) continue;
    const auto id = static_cast<std::int32_t>(components.size());
    const Eigen::Vector3i s = g.coords(seed);
    Component c{data[seed], 0, {s[0], s[1], s[2]}};
    component[static_cast<std::size_t>(seed)] = id;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      ++c.size;
      const Eigen::Vector3i p = g.coords(v);
      c.first = std::min(c.first, std::make_tuple(p[0], p[1], p[2]));
      for_each_neighbour(g, v, offsets, [&](std::int64_t n) {
        if (data[n] == c.label && component[static_cast<std::size_t>(n)] < 0) {
          component[static_cast<std::size_t>(n)] = id;
          stack.push_back(n);
        }
      });
    }
    components.push_back(c);
  }

  std::map<std::int32_t, std::int32_t> keep;  // label -> winning component
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(components.size()); ++id) {
    const auto& c = components[static_cast<std::size_t>(id)];
    auto [it, inserted] = keep.emplace(c.label, id);
    if (inserted) continue;
    const auto& best = components[static_cast<std::size_t>(it->second)];
    if (c.size > best.size || (c.size == best.size && c.first < best.first)) it->second = id;
  }

  LabelVolume out = labels;
  for (std::int64_t v = 0; v < g.size(); ++v) {
    const auto id = component[static_cast<std::size_t>(v)];
    if (id >= 0 && keep.at(data[v]) != id) out.image[v] = 0;
  }
  return out;
}

LabelVolume postprocess_group(const LabelVolume& fine, const LabelVolume& coarse, int group,
                              const PostprocessConfig& config) {
  const MaskImage mask = group_mask(coarse, group);
  LabelVolume labels = restrict_to_coarse(fine, coarse, group);
  labels = dilate_into_mask(labels, mask, config.dilation_iterations);
  labels = largest_component(labels, config.connectivity);
  return dilate_into_mask(labels, mask, config.dilation_iterations);
}

LabelVolume to_native(const LabelVolume& labels, const GridTransform& conformed_to_native, const Grid& native) {
  if (!conformed_to_native.invertible())
    throw TransformError("cannot restore native space: transform has no inverse");
  return {resample_to(labels.image, native, conformed_to_native.inverse(), Interpolation::Nearest), labels.space};
}

}  // namespace dkparc
