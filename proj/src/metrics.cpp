#include "dkparc/metrics.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "dkparc/parallel.hpp"

namespace dkparc {
namespace {

constexpr double kFar = std::numeric_limits<double>::infinity();

struct Box {
  Eigen::Vector3i lo = Eigen::Vector3i::Constant(std::numeric_limits<int>::max());
  Eigen::Vector3i hi = Eigen::Vector3i::Constant(-1);
  bool empty() const { return hi[0] < 0; }
  void add(const Eigen::Vector3i& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
};

Box bounding_box(const MaskImage& mask) {
  Box b;
  for (std::int64_t v = 0; v < mask.size(); ++v)
    if (mask[v]) b.add(mask.grid().coords(v));
  return b;
}

bool on_boundary(const MaskImage& mask, int x, int y, int z) {
  static constexpr int kSix[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (const auto& o : kSix)
    if (!mask.at_or(x + o[0], y + o[1], z + o[2], 0)) return true;
  return false;
}

// Lower envelope of parabolas w^2 (q - p)^2 + f(p) over the finite sites of one line.
void distance_1d(std::vector<double>& f, double w2, std::vector<int>& v, std::vector<double>& z, std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kFar) continue;
    while (k >= 0) {
      const int p = v[k];
      const double s = ((f[q] + w2 * q * q) - (f[p] + w2 * p * p)) / (2 * w2 * (q - p));
      if (s <= z[k]) --k;
      else break;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kFar : ((f[q] + w2 * q * q) - (f[v[k - 1]] + w2 * v[k - 1] * v[k - 1])) / (2 * w2 * (q - v[k - 1]));
    z[k + 1] = kFar;
  }
  if (k < 0) return;  // no site on this line; stays at infinity
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = q - v[j];
    out[q] = w2 * d * d + f[v[j]];
  }
  f.swap(out);
}

// Squared distance (mm^2) from every voxel of the box to the nearest site.
std::vector<double> squared_distance_transform(std::vector<double> f, const Eigen::Vector3i& n,
                                               const Eigen::Vector3d& spacing) {
  auto at = [&](int x, int y, int z) -> double& { return f[static_cast<std::size_t>(x + n[0] * (y + std::int64_t{n[1]} * z))]; };
  const int longest = n.maxCoeff();
  std::vector<double> line, out;
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> zs(static_cast<std::size_t>(longest) + 1);
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    const double w2 = spacing[axis] * spacing[axis];
    line.resize(static_cast<std::size_t>(n[axis]));
    out.assign(static_cast<std::size_t>(n[axis]), kFar);
    for (int j = 0; j < n[b]; ++j)
      for (int i = 0; i < n[a]; ++i) {
        Eigen::Vector3i p;
        p[a] = i;
        p[b] = j;
        for (int t = 0; t < n[axis]; ++t) {
          p[axis] = t;
          line[static_cast<std::size_t>(t)] = at(p[0], p[1], p[2]);
        }
        out.assign(line.size(), kFar);
        distance_1d(line, w2, v, zs, out);
        for (int t = 0; t < n[axis]; ++t) {
          p[axis] = t;
          at(p[0], p[1], p[2]) = line[static_cast<std::size_t>(t)];
        }
      }
  }
  return f;
}

std::vector<double> directed_in_box(const MaskImage& from, const MaskImage& to, const Eigen::Vector3d& spacing,
                                    const Box& box) {
  const Eigen::Vector3i n = box.hi - box.lo + Eigen::Vector3i::Ones();
  std::vector<double> sites(static_cast<std::size_t>(std::int64_t{n[0]} * n[1] * n[2]), kFar);
  std::vector<std::int64_t> queries;
  std::int64_t i = 0;
  for (int z = 0; z < n[2]; ++z)
    for (int y = 0; y < n[1]; ++y)
      for (int x = 0; x < n[0]; ++x, ++i) {
        const int gx = box.lo[0] + x, gy = box.lo[1] + y, gz = box.lo[2] + z;
        if (to(gx, gy, gz) && on_boundary(to, gx, gy, gz)) sites[static_cast<std::size_t>(i)] = 0;
        if (from(gx, gy, gz) && on_boundary(from, gx, gy, gz)) queries.push_back(i);
      }
  const auto d2 = squared_distance_transform(std::move(sites), n, spacing);
  std::vector<double> out;
  out.reserve(queries.size());
  for (auto q : queries) out.push_back(std::sqrt(d2[static_cast<std::size_t>(q)]));
  return out;
}

MaskImage label_mask(const LabelImage& labels, int label) {
  return labels.with_data((labels.data() == label).cast<std::uint8_t>());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

double dsc(const LabelImage& pred, const LabelImage& gt, int label) {
  require_same_grid(pred.grid(), gt.grid(), "dsc");
  const auto p = pred.data() == label;
  const auto g = gt.data() == label;
  const auto np = p.count(), ng = g.count();
  if (np == 0 && ng == 0) return 1.0;
  const auto both = (p && g).count();
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::vector<Eigen::Vector3i> boundary_voxels(const MaskImage& mask) {
  std::vector<Eigen::Vector3i> out;
  for (std::int64_t v = 0; v < mask.size(); ++v) {
    if (!mask[v]) continue;
    const Eigen::Vector3i p = mask.grid().coords(v);
    if (on_boundary(mask, p[0], p[1], p[2])) out.push_back(p);
  }
  return out;
}

std::vector<double> directed_surface_distances(const MaskImage& from, const MaskImage& to,
                                               const Eigen::Vector3d& spacing) {
  require_same_grid(from.grid(), to.grid(), "surface distance");
  Box box = bounding_box(from);
  const Box other = bounding_box(to);
  if (box.empty() || other.empty()) return {};
  box.add(other.lo);
  box.add(other.hi);
  return directed_in_box(from, to, spacing, box);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const MaskImage& pred, const MaskImage& gt, const Eigen::Vector3d& spacing) {
  require_same_grid(pred.grid(), gt.grid(), "hd95");
  Box box = bounding_box(pred);
  const Box other = bounding_box(gt);
  if (box.empty() || other.empty()) return std::nullopt;
  box.add(other.lo);
  box.add(other.hi);
  auto pooled = directed_in_box(pred, gt, spacing, box);
  const auto back = directed_in_box(gt, pred, spacing, box);
  pooled.insert(pooled.end(), back.begin(), back.end());
  return percentile(std::move(pooled), 0.95);
}

std::optional<double> hd95(const LabelImage& pred, const LabelImage& gt, int label,
                           std::optional<Eigen::Vector3d> spacing) {
  require_same_grid(pred.grid(), gt.grid(), "hd95");
  return hd95(label_mask(pred, label), label_mask(gt, label), spacing.value_or(pred.grid().spacing()));
}

template <typename Scalar>
std::map<int, RegionStats> rsd(const Volume<Scalar>& map, const LabelImage& labels) {
  require_same_grid(map.grid(), labels.grid(), "rsd");
  std::map<int, RegionStats> stats;
  for (std::int64_t v = 0; v < labels.size(); ++v) {
    if (labels[v] == 0) continue;
    auto& s = stats[labels[v]];
    ++s.voxels;
    s.mean += static_cast<double>(map[v]);
  }
  for (auto& [_, s] : stats) s.mean /= static_cast<double>(s.voxels);
  for (std::int64_t v = 0; v < labels.size(); ++v) {
    if (labels[v] == 0) continue;
    auto& s = stats[labels[v]];
    const double d = static_cast<double>(map[v]) - s.mean;
    s.std += d * d;
  }
  for (auto& [_, s] : stats) {
    s.std = std::sqrt(s.std / static_cast<double>(s.voxels));
    if (s.voxels >= 2 && std::abs(s.mean) > 1e-12) s.rsd = s.std / s.mean;
  }
  return stats;
}

template std::map<int, RegionStats> rsd<float>(const Volume<float>&, const LabelImage&);
template std::map<int, RegionStats> rsd<double>(const Volume<double>&, const LabelImage&);

std::string label_name(const LabelSchema* schema, LabelSpace space, int id) {
  if (schema) {
    if (space == LabelSpace::FreeSurferLut && schema->has_lut(id)) return schema->label(schema->internal_of_lut(id)).name;
    if (space == LabelSpace::FineInternal && schema->is_fine_label(id)) return schema->label(id).name;
    if (space == LabelSpace::Coarse && id >= 1 && id <= LabelSchema::kGroupCount) return schema->group(id).name;
  }
  return "label " + std::to_string(id);
}

const std::vector<std::string>& report_rsd_maps() {
  static const std::vector<std::string> maps{"fa", "md", "cs"};
  return maps;
}

std::vector<RegionReport> evaluate(const LabelVolume& pred, const LabelVolume& gt, const LabelSchema* schema,
                                   const std::map<std::string, Volume<double>>& maps) {
  require_same_grid(pred.grid(), gt.grid(), "evaluate");
  if (pred.space != gt.space) throw DataError("prediction and reference are in different label spaces");
  std::set<int> ids;
  for (const auto* img : {&pred.image, &gt.image})
    for (std::int64_t v = 0; v < img->size(); ++v)
      if ((*img)[v] != 0) ids.insert((*img)[v]);
  const std::vector<int> labels(ids.begin(), ids.end());

  std::map<std::string, std::map<int, RegionStats>> rsd_tables;
  for (const auto& [stem, map] : maps) rsd_tables[stem] = rsd(map, pred.image);

  std::vector<RegionReport> reports(labels.size());
  parallel_for(static_cast<std::int64_t>(labels.size()), [&](std::int64_t begin, std::int64_t end) {
    for (auto i = begin; i < end; ++i) {
      const int id = labels[static_cast<std::size_t>(i)];
      auto& r = reports[static_cast<std::size_t>(i)];
      r.id = id;
      r.name = label_name(schema, pred.space, id);
      r.voxels_pred = (pred.image.data() == id).count();
      r.voxels_gt = (gt.image.data() == id).count();
      r.dsc = dsc(pred.image, gt.image, id);
      r.hd95_mm = hd95(pred.image, gt.image, id);
      for (const auto& stem : report_rsd_maps()) {
        auto t = rsd_tables.find(stem);
        std::optional<double> value;
        if (t != rsd_tables.end())
          if (auto s = t->second.find(id); s != t->second.end()) value = s->second.rsd;
        r.rsd[stem] = value;
      }
    }
  });
  return reports;
}

MetricSummary aggregate(std::span<const std::optional<double>> values) {
  MetricSummary s;
  double sum = 0;
  for (const auto& v : values) {
    if (!v) {
      ++s.undefined;
      continue;
    }
    ++s.defined;
    sum += *v;
  }
  if (s.defined == 0) throw DataError("cannot summarise: no region has a defined value");
  s.mean = sum / s.defined;
  double squares = 0;
  for (const auto& v : values)
    if (v) squares += (*v - s.mean) * (*v - s.mean);
  s.std = std::sqrt(squares / s.defined);
  return s;
}

nlohmann::json summary_json(const std::vector<RegionReport>& reports) {
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> columns{{"dsc", {}}, {"hd95_mm", {}}};
  for (const auto& stem : report_rsd_maps()) columns.emplace_back("rsd_" + stem, std::vector<std::optional<double>>{});
  for (const auto& r : reports) {
    columns[0].second.push_back(r.dsc);
    columns[1].second.push_back(r.hd95_mm);
    for (std::size_t m = 0; m < report_rsd_maps().size(); ++m) columns[m + 2].second.push_back(r.rsd.at(report_rsd_maps()[m]));
  }
  nlohmann::json j;
  j["regions"] = reports.size();
  for (const auto& [name, values] : columns) {
    const auto undefined = std::count_if(values.begin(), values.end(), [](const auto& v) { return !v; });
    if (undefined == static_cast<std::ptrdiff_t>(values.size())) {
      j["metrics"][name] = {{"mean", nullptr}, {"std", nullptr}, {"defined", 0}, {"undefined", undefined}};
      continue;
    }
    const auto s = aggregate(values);
    j["metrics"][name] = {{"mean", s.mean}, {"std", s.std}, {"defined", s.defined}, {"undefined", s.undefined}};
  }
  return j;
}

void write_region_csv(std::ostream& out, const std::vector<RegionReport>& reports) {
  out << "id,name,voxels_pred,voxels_gt,dsc,hd95_mm,rsd_fa,rsd_md,rsd_cs\n";
  for (const auto& r : reports) {
    out << r.id << ',' << csv_field(r.name) << ',' << r.voxels_pred << ',' << r.voxels_gt << ',' << format_number(r.dsc)
        << ',' << format_optional(r.hd95_mm);
    for (const auto& stem : report_rsd_maps()) {
      auto it = r.rsd.find(stem);
      out << ',' << (it == r.rsd.end() ? "NA" : format_optional(it->second));
    }
    out << '\n';
  }
}

void write_rsd_csv(std::ostream& out, const LabelVolume& labels, const LabelSchema* schema,
                   const std::map<std::string, Volume<double>>& maps) {
  std::map<std::string, std::map<int, RegionStats>> tables;
  for (const auto& [stem, map] : maps) tables[stem] = rsd(map, labels.image);
  out << "id,name,voxels";
  for (const auto& [stem, _] : maps) out << ',' << stem << "_mean," << stem << "_std," << stem << "_rsd";
  out << '\n';
  std::map<int, std::int64_t> counts = label_histogram(labels.image);
  counts.erase(0);
  for (const auto& [id, voxels] : counts) {
    out << id << ',' << csv_field(label_name(schema, labels.space, id)) << ',' << voxels;
    for (const auto& [stem, table] : tables) {
      const auto& s = table.at(id);
      out << ',' << format_number(s.mean) << ',' << format_number(s.std) << ',' << format_optional(s.rsd);
    }
    out << '\n';
  }
}

}  // namespace dkparc
