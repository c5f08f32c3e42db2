#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkparc/labels.hpp"

namespace dkparc {

/// Dice overlap of one label. 1 when both masks are empty, 0 when exactly one is.
double dsc(const LabelImage& pred, const LabelImage& gt, int label);

/// Voxels of `mask` that touch a non-mask 6-neighbour or the edge of the volume.
std::vector<Eigen::Vector3i> boundary_voxels(const MaskImage& mask);

/// Distance in mm from every boundary voxel of `from` to the nearest boundary voxel of `to`,
/// in index order of `from`. Exact (separable squared distance transform).
std::vector<double> directed_surface_distances(const MaskImage& from, const MaskImage& to,
                                               const Eigen::Vector3d& spacing);

/// Linear interpolation between closest ranks at position (n-1) q. Throws DataError when empty.
double percentile(std::vector<double> values, double q);

/// 95th percentile of the pooled distances in both directions, in mm. nullopt when either
/// mask is empty. `spacing` defaults to the grid's.
std::optional<double> hd95(const LabelImage& pred, const LabelImage& gt, int label,
                           std::optional<Eigen::Vector3d> spacing = std::nullopt);
std::optional<double> hd95(const MaskImage& pred, const MaskImage& gt, const Eigen::Vector3d& spacing);

struct RegionStats {
  std::int64_t voxels = 0;
  double mean = 0;
  double std = 0;              // population
  std::optional<double> rsd;   // std / mean; undefined for |mean| <= 1e-12 or fewer than 2 voxels
};

/// Per nonzero label statistics of `map` inside each region.
template <typename Scalar>
std::map<int, RegionStats> rsd(const Volume<Scalar>& map, const LabelImage& labels);

struct RegionReport {
  int id = 0;
  std::string name;
  std::int64_t voxels_pred = 0;
  std::int64_t voxels_gt = 0;
  double dsc = 0;
  std::optional<double> hd95_mm;
  std::map<std::string, std::optional<double>> rsd;  // keyed by map stem: fa, md, cs
};

/// Display name of a label value in the given space; falls back to "label <id>".
std::string label_name(const LabelSchema* schema, LabelSpace space, int id);

/// The RSD columns of the region report, in order.
const std::vector<std::string>& report_rsd_maps();

/// One report per label present in either volume. RSD columns are computed inside the
/// predicted regions for each map supplied in `maps` (keyed by stem); others stay undefined.
std::vector<RegionReport> evaluate(const LabelVolume& pred, const LabelVolume& gt, const LabelSchema* schema,
                                   const std::map<std::string, Volume<double>>& maps = {});

struct MetricSummary {
  double mean = 0;
  double std = 0;  // population
  int defined = 0;
  int undefined = 0;
};

/// Unweighted mean and population standard deviation of the defined values.
/// Throws DataError when none is defined.
MetricSummary aggregate(std::span<const std::optional<double>> values);

/// Summary per report column (dsc, hd95_mm, rsd_*). Columns with no defined value are null.
nlohmann::json summary_json(const std::vector<RegionReport>& reports);

/// Frozen columns: id,name,voxels_pred,voxels_gt,dsc,hd95_mm,rsd_fa,rsd_md,rsd_cs. Undefined is NA.
void write_region_csv(std::ostream& out, const std::vector<RegionReport>& reports);

/// id,name,voxels then <stem>_mean,<stem>_std,<stem>_rsd for each map, over labels of `labels`.
void write_rsd_csv(std::ostream& out, const LabelVolume& labels, const LabelSchema* schema,
                   const std::map<std::string, Volume<double>>& maps);

/// Shortest round-trip decimal for a double, as used in every CSV.
std::string format_number(double value);

}  // namespace dkparc
