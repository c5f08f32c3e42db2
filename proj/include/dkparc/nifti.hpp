#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "dkparc/volume.hpp"

namespace dkparc {

/// NIfTI-1 datatype codes understood by the reader.
enum class NiftiType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
  Int8 = 256,
  UInt16 = 512,
  UInt32 = 768,
};

/// Decoded header fields that matter to this library.
struct NiftiInfo {
  Grid grid;
  int frames = 1;  // dim[4] (and higher dims folded in)
  NiftiType datatype = NiftiType::Float32;
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  std::int64_t vox_offset = 352;
  bool byte_swapped = false;
  short sform_code = 0;
  short qform_code = 0;
  bool single_file = true;  // "n+1"; false for "ni1" header/image pairs
};

/// Reads and validates only the header. Files ending in .gz are inflated transparently.
NiftiInfo read_nifti_info(const std::filesystem::path& path);

/// Reads a 3D volume, converting the stored datatype to Scalar with scl_slope/scl_inter applied.
/// Integer targets round to nearest. Throws FormatError for 4D files with more than one frame.
template <typename Scalar>
Volume<Scalar> read_nifti(const std::filesystem::path& path);

/// Reads every frame of a 3D or 4D file.
template <typename Scalar>
std::vector<Volume<Scalar>> read_nifti_frames(const std::filesystem::path& path);

/// Volume in its on-disk type where that type is one of the carrier types; other integer
/// codes widen to int32, float64 and scaled data decode to float32.
using AnyVolume = std::variant<Volume<float>, Volume<std::int32_t>, Volume<std::uint8_t>>;
AnyVolume read_nifti_any(const std::filesystem::path& path);

/// Single-file little-endian NIfTI-1 with sform and qform set from the grid affine
/// and no intensity scaling. A ".gz" suffix writes gzip.
template <typename Scalar>
void write_nifti(const Volume<Scalar>& volume, const std::filesystem::path& path);

/// 4D variant; all frames must share one grid.
template <typename Scalar>
void write_nifti_frames(const std::vector<Volume<Scalar>>& frames, const std::filesystem::path& path);

constexpr std::int16_t nifti_code(DataType type) {
  switch (type) {
    case DataType::UInt8: return 2;
    case DataType::Int32: return 8;
    case DataType::Float32: return 16;
    case DataType::Float64: return 64;
  }
  return 0;
}

}  // namespace dkparc
