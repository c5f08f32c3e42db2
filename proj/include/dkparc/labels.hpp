#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkparc/volume.hpp"

namespace dkparc {

enum class Hemisphere { Left, Right, None };

struct FineLabel {
  int id = 0;   // internal id, 1..N
  int lut = 0;  // FreeSurfer lookup-table id
  std::string name;
  Hemisphere hemisphere = Hemisphere::None;
};

struct CoarseGroup {
  int id = 0;  // 1..7
  std::string name;
  bool passthrough = false;  // assigned directly by the coarse stage
  std::vector<int> labels;   // fine internal ids, in prediction-class order
};

/// Fine label inventory, the seven-group coarse projection and the per-group partitions.
///
/// Groups 1..7 are fixed in this order: left WM, right WM, left cortical, right cortical,
/// central, left remaining, right remaining. The two white-matter groups are passthrough
/// groups holding exactly one fine label each; the other five are predicted by fine stages.
/// Every invariant is checked at construction, so a LabelSchema value is always consistent.
class LabelSchema {
 public:
  static constexpr int kGroupCount = 7;

  LabelSchema(std::string name, std::vector<FineLabel> labels, std::vector<CoarseGroup> groups);

  static LabelSchema from_json(const nlohmann::json& j);
  static LabelSchema load(const std::filesystem::path& path);
  /// The bundled DK-101 schema.
  static const LabelSchema& dk101();
  nlohmann::json to_json() const;

  const std::string& name() const { return name_; }
  const std::vector<FineLabel>& labels() const { return labels_; }
  const std::vector<CoarseGroup>& groups() const { return groups_; }
  const FineLabel& label(int id) const;
  const CoarseGroup& group(int id) const;
  int label_count() const { return static_cast<int>(labels_.size()); }

  /// Coarse group of a fine internal id; 0 maps to 0. Throws DataError for unknown ids.
  int group_of(int fine_id) const;
  bool is_fine_label(int id) const { return id >= 1 && id <= label_count(); }
  /// Group ids predicted by fine stages, ascending.
  std::vector<int> fine_groups() const;
  /// The fine label a passthrough group is assigned; throws ArgumentError for other groups.
  int passthrough_label(int group) const;
  /// Fine internal ids a fine stage predicts, in class order (class c -> labels[c-1]).
  const std::vector<int>& partition(int group) const { return this->group(group).labels; }

  int lut_of(int fine_id) const;
  /// Throws DataError when `lut` is not in the schema.
  int internal_of_lut(int lut) const;
  bool has_lut(int lut) const;

 private:
  std::string name_;
  std::vector<FineLabel> labels_;
  std::vector<CoarseGroup> groups_;
  std::vector<int> group_of_;          // indexed by internal id
  std::map<int, int> internal_of_lut_;
};

enum class LabelSpace { FineInternal, Coarse, FreeSurferLut };

const char* to_string(LabelSpace space);

/// Integer label image tagged with the label space its values belong to.
struct LabelVolume {
  LabelImage image;
  LabelSpace space = LabelSpace::FineInternal;

  const Grid& grid() const { return image.grid(); }
};

/// Throws DataError on the first nonzero voxel that is not a label of the declared space.
void validate_labels(const LabelVolume& labels, const LabelSchema& schema);

LabelVolume coarse_project(const LabelVolume& fine, const LabelSchema& schema);

/// Assembles the full fine volume: passthrough labels wherever the coarse volume names a
/// white-matter group, the matching group's fine result elsewhere, 0 on coarse background.
/// `fine_results` holds one volume per fine group (keyed by group id).
LabelVolume merge_fine(const LabelVolume& coarse, const std::map<int, LabelVolume>& fine_results,
                       const LabelSchema& schema);

LabelVolume to_freesurfer_lut(const LabelVolume& labels, const LabelSchema& schema);
LabelVolume from_freesurfer_lut(const LabelVolume& labels, const LabelSchema& schema);

/// Voxel count per label value (background included under key 0).
std::map<int, std::int64_t> label_histogram(const LabelImage& labels);

}  // namespace dkparc
