#include "dkparc/labels.hpp"

#include <fstream>
#include <set>

namespace dkparc {

// Defined in the generated translation unit that embeds data/dk101_schema.json.
extern const char* const kDk101SchemaJson;

namespace {

Hemisphere parse_hemisphere(const std::string& s) {
  if (s == "left") return Hemisphere::Left;
  if (s == "right") return Hemisphere::Right;
  if (s == "none" || s.empty()) return Hemisphere::None;
  throw SchemaError("unknown hemisphere tag '" + s + "'");
}

const char* hemisphere_name(Hemisphere h) {
  switch (h) {
    case Hemisphere::Left: return "left";
    case Hemisphere::Right: return "right";
    case Hemisphere::None: return "none";
  }
  return "none";
}

std::string describe(const FineLabel& l) { return "label " + std::to_string(l.id) + " (" + l.name + ")"; }

}  // namespace

LabelSchema::LabelSchema(std::string name, std::vector<FineLabel> labels, std::vector<CoarseGroup> groups)
    : name_(std::move(name)), labels_(std::move(labels)), groups_(std::move(groups)) {
  if (labels_.empty()) throw SchemaError("schema has no fine labels");
  std::sort(labels_.begin(), labels_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& l = labels_[i];
    if (i > 0 && labels_[i - 1].id == l.id) throw SchemaError("duplicate fine label id " + std::to_string(l.id));
    if (l.id != static_cast<int>(i) + 1)
      throw SchemaError("fine label ids must be contiguous from 1; " + describe(l) + " breaks the sequence");
    if (l.lut <= 0) throw SchemaError(describe(l) + " has non-positive lookup-table id");
    if (!internal_of_lut_.emplace(l.lut, l.id).second)
      throw SchemaError(describe(l) + " reuses lookup-table id " + std::to_string(l.lut));
  }

  if (static_cast<int>(groups_.size()) != kGroupCount)
    throw SchemaError("expected 7 groups, found " + std::to_string(groups_.size()));
  std::sort(groups_.begin(), groups_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (int g = 0; g < kGroupCount; ++g)
    if (groups_[g].id != g + 1) throw SchemaError("group ids must be exactly 1..7");

  group_of_.assign(labels_.size() + 1, 0);
  std::vector<Hemisphere> passthrough_sides;
  for (const auto& g : groups_) {
    if (g.labels.empty()) throw SchemaError("group " + std::to_string(g.id) + " (" + g.name + ") has no labels");
    if (g.passthrough) {
      if (g.labels.size() != 1)
        throw SchemaError("passthrough group " + std::to_string(g.id) + " must hold exactly one label");
    }
    for (int id : g.labels) {
      if (id < 1 || id > label_count())
        throw SchemaError("group " + std::to_string(g.id) + " references unknown label " + std::to_string(id));
      if (group_of_[id] != 0)
        throw SchemaError(describe(label(id)) + " appears in groups " + std::to_string(group_of_[id]) + " and " +
                          std::to_string(g.id));
      group_of_[id] = g.id;
    }
    if (g.passthrough) passthrough_sides.push_back(label(g.labels.front()).hemisphere);
  }
  for (const auto& l : labels_)
    if (group_of_[l.id] == 0) throw SchemaError(describe(l) + " is not mapped to any group");

  if (passthrough_sides.size() != 2)
    throw SchemaError("expected 2 passthrough (white-matter) groups, found " + std::to_string(passthrough_sides.size()));
  const std::set<Hemisphere> sides(passthrough_sides.begin(), passthrough_sides.end());
  if (sides != std::set<Hemisphere>{Hemisphere::Left, Hemisphere::Right})
    throw SchemaError("passthrough labels must be one left and one right hemisphere label");
}

LabelSchema LabelSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FineLabel> labels;
    for (const auto& l : j.at("labels")) {
      labels.push_back({l.at("id").get<int>(), l.at("lut").get<int>(), l.at("name").get<std::string>(),
                        parse_hemisphere(l.value("hemisphere", std::string("none")))});
    }
    std::vector<CoarseGroup> groups;
    for (const auto& g : j.at("groups")) {
      const auto stage = g.value("stage", std::string("fine"));
      if (stage != "fine" && stage != "coarse") throw SchemaError("group stage must be 'fine' or 'coarse'");
      groups.push_back({g.at("id").get<int>(), g.at("name").get<std::string>(), stage == "coarse",
                        g.at("labels").get<std::vector<int>>()});
    }
    return LabelSchema(j.value("name", std::string("unnamed")), std::move(labels), std::move(groups));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
}

LabelSchema LabelSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

const LabelSchema& LabelSchema::dk101() {
  static const LabelSchema schema = from_json(nlohmann::json::parse(kDk101SchemaJson));
  return schema;
}

nlohmann::json LabelSchema::to_json() const {
  nlohmann::json j;
  j["name"] = name_;
  auto& labels = j["labels"] = nlohmann::json::array();
  for (const auto& l : labels_)
    labels.push_back({{"id", l.id}, {"lut", l.lut}, {"name", l.name}, {"hemisphere", hemisphere_name(l.hemisphere)}});
  auto& groups = j["groups"] = nlohmann::json::array();
  for (const auto& g : groups_)
    groups.push_back(
        {{"id", g.id}, {"name", g.name}, {"stage", g.passthrough ? "coarse" : "fine"}, {"labels", g.labels}});
  return j;
}

const FineLabel& LabelSchema::label(int id) const {
  if (!is_fine_label(id)) throw DataError("unknown fine label " + std::to_string(id));
  return labels_[static_cast<std::size_t>(id - 1)];
}

const CoarseGroup& LabelSchema::group(int id) const {
  if (id < 1 || id > kGroupCount) throw DataError("unknown coarse group " + std::to_string(id));
  return groups_[static_cast<std::size_t>(id - 1)];
}

int LabelSchema::group_of(int fine_id) const {
  if (fine_id == 0) return 0;
  if (!is_fine_label(fine_id)) throw DataError("voxel value " + std::to_string(fine_id) + " is not a fine label");
  return group_of_[static_cast<std::size_t>(fine_id)];
}

std::vector<int> LabelSchema::fine_groups() const {
  std::vector<int> out;
  for (const auto& g : groups_)
    if (!g.passthrough) out.push_back(g.id);
  return out;
}

int LabelSchema::passthrough_label(int group) const {
  const auto& g = this->group(group);
  if (!g.passthrough) throw ArgumentError("group " + std::to_string(group) + " is not a passthrough group");
  return g.labels.front();
}

int LabelSchema::lut_of(int fine_id) const { return label(fine_id).lut; }

int LabelSchema::internal_of_lut(int lut) const {
  auto it = internal_of_lut_.find(lut);
  if (it == internal_of_lut_.end()) throw DataError("lookup-table id " + std::to_string(lut) + " is not in the schema");
  return it->second;
}

bool LabelSchema::has_lut(int lut) const { return internal_of_lut_.count(lut) != 0; }

const char* to_string(LabelSpace space) {
  switch (space) {
    case LabelSpace::FineInternal: return "fine-internal";
    case LabelSpace::Coarse: return "coarse";
    case LabelSpace::FreeSurferLut: return "freesurfer-lut";
  }
  return "?";
}

void validate_labels(const LabelVolume& labels, const LabelSchema& schema) {
  const auto& data = labels.image.data();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const int v = data[i];
    if (v == 0) continue;
    bool ok = false;
    switch (labels.space) {
      case LabelSpace::FineInternal: ok = schema.is_fine_label(v); break;
      case LabelSpace::Coarse: ok = v >= 1 && v <= LabelSchema::kGroupCount; break;
      case LabelSpace::FreeSurferLut: ok = schema.has_lut(v); break;
    }
    if (!ok)
      throw DataError("voxel value " + std::to_string(v) + " is not a " + to_string(labels.space) + " label");
  }
}

LabelVolume coarse_project(const LabelVolume& fine, const LabelSchema& schema) {
  if (fine.space != LabelSpace::FineInternal) throw DataError("coarse_project expects fine-internal labels");
  LabelVolume out{LabelImage(fine.grid()), LabelSpace::Coarse};
  const auto& in = fine.image.data();
  auto& dst = out.image.data();
  for (Eigen::Index i = 0; i < in.size(); ++i) dst[i] = schema.group_of(in[i]);
  return out;
}

LabelVolume merge_fine(const LabelVolume& coarse, const std::map<int, LabelVolume>& fine_results,
                       const LabelSchema& schema) {
  if (coarse.space != LabelSpace::Coarse) throw DataError("merge_fine expects a coarse label volume");
  for (int g : schema.fine_groups()) {
    auto it = fine_results.find(g);
    if (it == fine_results.end())
      throw ConfigError("merge_fine: no fine result for group " + std::to_string(g) + " (" + schema.group(g).name + ")");
    require_same_grid(coarse.grid(), it->second.grid(), "merge_fine");
    const auto& part = schema.partition(g);
    const std::set<int> allowed(part.begin(), part.end());
    const auto& data = it->second.image.data();
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (data[i] != 0 && !allowed.count(data[i]))
        throw DataError("merge_fine: group " + std::to_string(g) + " result contains label " + std::to_string(data[i]) +
                        " outside its partition");
  }

  LabelVolume out{LabelImage(coarse.grid()), LabelSpace::FineInternal};
  const auto& c = coarse.image.data();
  auto& dst = out.image.data();
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const int g = c[i];
    if (g == 0) continue;
    if (g < 1 || g > LabelSchema::kGroupCount) throw DataError("coarse voxel value " + std::to_string(g) + " is not a group");
    const auto& group = schema.group(g);
    dst[i] = group.passthrough ? group.labels.front() : fine_results.at(g).image[i];
  }
  return out;
}

LabelVolume to_freesurfer_lut(const LabelVolume& labels, const LabelSchema& schema) {
  if (labels.space != LabelSpace::FineInternal) throw DataError("to_freesurfer_lut expects fine-internal labels");
  LabelVolume out{LabelImage(labels.grid()), LabelSpace::FreeSurferLut};
  const auto& in = labels.image.data();
  auto& dst = out.image.data();
  for (Eigen::Index i = 0; i < in.size(); ++i) dst[i] = in[i] == 0 ? 0 : schema.lut_of(in[i]);
  return out;
}

LabelVolume from_freesurfer_lut(const LabelVolume& labels, const LabelSchema& schema) {
  if (labels.space != LabelSpace::FreeSurferLut) throw DataError("from_freesurfer_lut expects lookup-table labels");
  LabelVolume out{LabelImage(labels.grid()), LabelSpace::FineInternal};
  const auto& in = labels.image.data();
  auto& dst = out.image.data();
  for (Eigen::Index i = 0; i < in.size(); ++i) dst[i] = in[i] == 0 ? 0 : schema.internal_of_lut(in[i]);
  return out;
}

std::map<int, std::int64_t> label_histogram(const LabelImage& labels) {
  std::map<int, std::int64_t> h;
  for (Eigen::Index i = 0; i < labels.data().size(); ++i) ++h[labels.data()[i]];
  return h;
}

}  // namespace dkparc
