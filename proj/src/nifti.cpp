#include "dkparc/nifti.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

namespace dkparc {
namespace {

static_assert(std::endian::native == std::endian::little, "NIfTI writer assumes a little-endian host");

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

// Byte offsets into the 348-byte NIfTI-1 header.
namespace off {
constexpr int sizeof_hdr = 0;
constexpr int dim_info = 39;
constexpr int dim = 40;
constexpr int datatype = 70;
constexpr int bitpix = 72;
constexpr int pixdim = 76;
constexpr int vox_offset = 108;
constexpr int scl_slope = 112;
constexpr int scl_inter = 116;
constexpr int xyzt_units = 123;
constexpr int descrip = 148;
constexpr int qform_code = 252;
constexpr int sform_code = 254;
constexpr int quatern_b = 256;
constexpr int qoffset_x = 268;
constexpr int srow_x = 280;
constexpr int magic = 344;
}  // namespace off

bool has_gz_suffix(const std::filesystem::path& path) { return path.extension() == ".gz"; }

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

GzHandle open_for_read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

std::int64_t read_exact(gzFile f, void* dst, std::int64_t bytes) {
  auto* out = static_cast<char*>(dst);
  std::int64_t total = 0;
  while (total < bytes) {
    const auto chunk = static_cast<unsigned>(std::min<std::int64_t>(bytes - total, 1 << 30));
    const int got = gzread(f, out + total, chunk);
    if (got < 0) throw IoError("read failure (zlib)");
    if (got == 0) break;
    total += got;
  }
  return total;
}

template <typename T>
T load(const std::array<char, kHeaderSize>& h, int offset, bool swap) {
  T value;
  std::memcpy(&value, h.data() + offset, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&value);
    std::reverse(b, b + sizeof(T));
  }
  return value;
}

template <typename T>
void store(std::array<char, kHeaderSize>& h, int offset, T value) {
  std::memcpy(h.data() + offset, &value, sizeof(T));
}

int bytes_per_voxel(NiftiType type) {
  switch (type) {
    case NiftiType::UInt8:
    case NiftiType::Int8: return 1;
    case NiftiType::Int16:
    case NiftiType::UInt16: return 2;
    case NiftiType::Int32:
    case NiftiType::UInt32:
    case NiftiType::Float32: return 4;
    case NiftiType::Float64: return 8;
  }
  return 0;
}

bool known_type(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: case 256: case 512: case 768: return true;
    default: return false;
  }
}

Eigen::Matrix4d quaternion_affine(const std::array<char, kHeaderSize>& h, bool swap, const Eigen::Vector3d& spacing,
                                  double qfac) {
  const double b = load<float>(h, off::quatern_b, swap);
  const double c = load<float>(h, off::quatern_b + 4, swap);
  const double d = load<float>(h, off::quatern_b + 8, swap);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  Eigen::Matrix3d r = Eigen::Quaterniond(a, b, c, d).normalized().toRotationMatrix();
  if (qfac < 0) r.col(2) *= -1;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r * spacing.asDiagonal();
  for (int i = 0; i < 3; ++i) m(i, 3) = load<float>(h, off::qoffset_x + 4 * i, swap);
  return m;
}

struct ParsedHeader {
  NiftiInfo info;
  std::int64_t voxels_per_frame = 0;
};

ParsedHeader parse_header(const std::array<char, kHeaderSize>& h, const std::string& name) {
  bool swap = false;
  auto size = load<std::int32_t>(h, off::sizeof_hdr, false);
  if (size != kHeaderSize) {
    size = load<std::int32_t>(h, off::sizeof_hdr, true);
    if (size != kHeaderSize) throw FormatError(name + ": sizeof_hdr is not 348");
    swap = true;
  }
  const char* magic = h.data() + off::magic;
  if (std::memcmp(magic, "n+1\0", 4) != 0 && std::memcmp(magic, "ni1\0", 4) != 0)
    throw FormatError(name + ": bad NIfTI-1 magic");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h, off::dim + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError(name + ": dim[0] out of range");
  Eigen::Vector3i dims = Eigen::Vector3i::Ones();
  for (int i = 0; i < std::min<int>(dim[0], 3); ++i) {
    if (dim[i + 1] < 1) throw FormatError(name + ": non-positive dimension");
    dims[i] = dim[i + 1];
  }
  int frames = 1;
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] < 1) throw FormatError(name + ": non-positive dimension");
    frames *= dim[i];
  }

  const auto code = load<std::int16_t>(h, off::datatype, swap);
  if (!known_type(code)) throw UnsupportedError(name + ": unsupported datatype code " + std::to_string(code));

  Eigen::Vector3d spacing;
  for (int i = 0; i < 3; ++i) {
    spacing[i] = std::abs(load<float>(h, off::pixdim + 4 * (i + 1), swap));
    if (!(spacing[i] > 0)) spacing[i] = 1.0;
  }
  double qfac = load<float>(h, off::pixdim, swap);
  qfac = qfac < 0 ? -1.0 : 1.0;

  ParsedHeader out;
  NiftiInfo& info = out.info;
  info.frames = frames;
  info.datatype = static_cast<NiftiType>(code);
  info.byte_swapped = swap;
  info.sform_code = load<std::int16_t>(h, off::sform_code, swap);
  info.qform_code = load<std::int16_t>(h, off::qform_code, swap);
  info.vox_offset = static_cast<std::int64_t>(load<float>(h, off::vox_offset, swap));
  info.single_file = std::memcmp(magic, "n+1\0", 4) == 0;
  if (info.single_file && info.vox_offset < kHeaderSize)
    throw FormatError(name + ": vox_offset inside header");
  info.scl_slope = load<float>(h, off::scl_slope, swap);
  info.scl_inter = load<float>(h, off::scl_inter, swap);
  if (info.scl_slope == 0.0 || !std::isfinite(info.scl_slope)) {
    info.scl_slope = 1.0;
    info.scl_inter = 0.0;
  }

  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  if (info.sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) affine(r, c) = load<float>(h, off::srow_x + 16 * r + 4 * c, swap);
  } else if (info.qform_code > 0) {
    affine = quaternion_affine(h, swap, spacing, qfac);
  } else {
    affine.topLeftCorner<3, 3>() = spacing.asDiagonal();
  }
  try {
    info.grid = Grid(dims, affine);
  } catch (const DataError& e) {
    throw FormatError(name + ": " + e.what());
  }
  out.voxels_per_frame = info.grid.size();
  return out;
}

template <typename Raw, typename Scalar>
void decode_typed(const char* bytes, std::int64_t n, bool swap, double slope, double inter,
                  typename Volume<Scalar>::Data& out) {
  const bool scaled = slope != 1.0 || inter != 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    Raw raw;
    std::memcpy(&raw, bytes + i * sizeof(Raw), sizeof(Raw));
    if (swap && sizeof(Raw) > 1) {
      auto* b = reinterpret_cast<unsigned char*>(&raw);
      std::reverse(b, b + sizeof(Raw));
    }
    if constexpr (std::is_same_v<Raw, Scalar>) {
      if (!scaled) {
        out[i] = raw;
        continue;
      }
    }
    const double value = scaled ? slope * static_cast<double>(raw) + inter : static_cast<double>(raw);
    if constexpr (std::is_integral_v<Scalar>)
      out[i] = static_cast<Scalar>(std::lround(value));
    else
      out[i] = static_cast<Scalar>(value);
  }
}

template <typename Scalar>
typename Volume<Scalar>::Data decode(const std::vector<char>& bytes, const NiftiInfo& info, std::int64_t n) {
  typename Volume<Scalar>::Data out(n);
  const auto s = info.byte_swapped;
  const auto m = info.scl_slope, b = info.scl_inter;
  switch (info.datatype) {
    case NiftiType::UInt8: decode_typed<std::uint8_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::Int8: decode_typed<std::int8_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::Int16: decode_typed<std::int16_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::UInt16: decode_typed<std::uint16_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::Int32: decode_typed<std::int32_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::UInt32: decode_typed<std::uint32_t, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::Float32: decode_typed<float, Scalar>(bytes.data(), n, s, m, b, out); break;
    case NiftiType::Float64: decode_typed<double, Scalar>(bytes.data(), n, s, m, b, out); break;
  }
  return out;
}

struct RawImage {
  NiftiInfo info;
  std::vector<char> payload;
};

RawImage read_raw(const std::filesystem::path& path) {
  auto f = open_for_read(path);
  std::array<char, kHeaderSize> h{};
  if (read_exact(f.get(), h.data(), kHeaderSize) != kHeaderSize)
    throw FormatError(path.string() + ": file shorter than a NIfTI-1 header");
  auto parsed = parse_header(h, path.string());
  std::int64_t skip = std::max<std::int64_t>(parsed.info.vox_offset - kHeaderSize, 0);
  if (!parsed.info.single_file) {
    auto image = path;
    if (image.extension() == ".gz") image.replace_extension();
    image.replace_extension(".img");
    f = open_for_read(image);
    skip = std::max<std::int64_t>(parsed.info.vox_offset, 0);
  }
  std::vector<char> discard(static_cast<std::size_t>(skip));
  if (read_exact(f.get(), discard.data(), skip) != skip)
    throw TruncationError(path.string() + ": file ends before vox_offset");
  const std::int64_t bytes = parsed.voxels_per_frame * parsed.info.frames * bytes_per_voxel(parsed.info.datatype);
  RawImage raw{parsed.info, std::vector<char>(static_cast<std::size_t>(bytes))};
  const auto got = read_exact(f.get(), raw.payload.data(), bytes);
  if (got != bytes)
    throw TruncationError(path.string() + ": payload has " + std::to_string(got) + " bytes, header implies " +
                          std::to_string(bytes));
  return raw;
}

template <typename Scalar>
std::vector<Volume<Scalar>> split_frames(const RawImage& raw) {
  const std::int64_t n = raw.info.grid.size();
  const std::int64_t frame_bytes = n * bytes_per_voxel(raw.info.datatype);
  std::vector<Volume<Scalar>> frames;
  frames.reserve(raw.info.frames);
  for (int t = 0; t < raw.info.frames; ++t) {
    std::vector<char> slice(raw.payload.begin() + t * frame_bytes, raw.payload.begin() + (t + 1) * frame_bytes);
    frames.emplace_back(raw.info.grid, decode<Scalar>(slice, raw.info, n));
  }
  return frames;
}

std::array<char, kHeaderSize> make_header(const Grid& grid, int frames, DataType type) {
  std::array<char, kHeaderSize> h{};
  store<std::int32_t>(h, off::sizeof_hdr, kHeaderSize);
  h[off::dim_info] = 0;
  std::array<std::int16_t, 8> dim{static_cast<std::int16_t>(frames > 1 ? 4 : 3),
                                  static_cast<std::int16_t>(grid.dims()[0]),
                                  static_cast<std::int16_t>(grid.dims()[1]),
                                  static_cast<std::int16_t>(grid.dims()[2]),
                                  static_cast<std::int16_t>(frames),
                                  1,
                                  1,
                                  1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h, off::dim + 2 * i, dim[i]);
  const std::int16_t code = nifti_code(type);
  store<std::int16_t>(h, off::datatype, code);
  store<std::int16_t>(h, off::bitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(static_cast<NiftiType>(code))));

  const Eigen::Matrix4d& a = grid.affine();
  const Eigen::Vector3d spacing = grid.spacing();
  Eigen::Matrix3d r = a.topLeftCorner<3, 3>() * spacing.cwiseInverse().asDiagonal();
  // Nearest proper rotation; qform cannot carry shear.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  float qfac = 1.0f;
  if (r.determinant() < 0) {
    qfac = -1.0f;
    r.col(2) *= -1;
  }
  Eigen::Quaterniond q(r);
  if (q.w() < 0) q.coeffs() *= -1;

  store<float>(h, off::pixdim, qfac);
  for (int i = 0; i < 3; ++i) store<float>(h, off::pixdim + 4 * (i + 1), static_cast<float>(spacing[i]));
  for (int i = 4; i < 8; ++i) store<float>(h, off::pixdim + 4 * i, 1.0f);
  store<float>(h, off::vox_offset, static_cast<float>(kDataOffset));
  store<float>(h, off::scl_slope, 1.0f);
  store<float>(h, off::scl_inter, 0.0f);
  h[off::xyzt_units] = 2;  // mm
  std::strncpy(h.data() + off::descrip, "dkparc", 79);
  store<std::int16_t>(h, off::qform_code, 1);
  store<std::int16_t>(h, off::sform_code, 1);
  store<float>(h, off::quatern_b, static_cast<float>(q.x()));
  store<float>(h, off::quatern_b + 4, static_cast<float>(q.y()));
  store<float>(h, off::quatern_b + 8, static_cast<float>(q.z()));
  for (int i = 0; i < 3; ++i) store<float>(h, off::qoffset_x + 4 * i, static_cast<float>(a(i, 3)));
  for (int r_ = 0; r_ < 3; ++r_)
    for (int c = 0; c < 4; ++c) store<float>(h, off::srow_x + 16 * r_ + 4 * c, static_cast<float>(a(r_, c)));
  std::memcpy(h.data() + off::magic, "n+1\0", 4);
  return h;
}

void write_bytes(const std::filesystem::path& path, const std::array<char, kHeaderSize>& header,
                 const std::vector<const char*>& chunks, std::int64_t chunk_bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".partial");
  const char extension[4] = {0, 0, 0, 0};
  if (has_gz_suffix(path)) {
    GzHandle f(gzopen(tmp.c_str(), "wb6"));
    if (!f) throw IoError("cannot write " + path.string());
    bool ok = gzwrite(f.get(), header.data(), kHeaderSize) == kHeaderSize && gzwrite(f.get(), extension, 4) == 4;
    for (const char* chunk : chunks) {
      for (std::int64_t done = 0; ok && done < chunk_bytes;) {
        const auto n = static_cast<unsigned>(std::min<std::int64_t>(chunk_bytes - done, 1 << 30));
        ok = gzwrite(f.get(), chunk + done, n) == static_cast<int>(n);
        done += n;
      }
    }
    if (!ok) throw IoError("write failure: " + path.string());
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(header.data(), kHeaderSize);
    out.write(extension, 4);
    for (const char* chunk : chunks) out.write(chunk, chunk_bytes);
    if (!out) throw IoError("write failure: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move output into place: " + path.string());
}

}  // namespace

NiftiInfo read_nifti_info(const std::filesystem::path& path) {
  auto f = open_for_read(path);
  std::array<char, kHeaderSize> h{};
  if (read_exact(f.get(), h.data(), kHeaderSize) != kHeaderSize)
    throw FormatError(path.string() + ": file shorter than a NIfTI-1 header");
  return parse_header(h, path.string()).info;
}

template <typename Scalar>
Volume<Scalar> read_nifti(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  if (raw.info.frames != 1)
    throw FormatError(path.string() + ": expected a 3D volume, found " + std::to_string(raw.info.frames) + " frames");
  return Volume<Scalar>(raw.info.grid, decode<Scalar>(raw.payload, raw.info, raw.info.grid.size()));
}

template <typename Scalar>
std::vector<Volume<Scalar>> read_nifti_frames(const std::filesystem::path& path) {
  return split_frames<Scalar>(read_raw(path));
}

AnyVolume read_nifti_any(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  if (raw.info.frames != 1)
    throw FormatError(path.string() + ": expected a 3D volume, found " + std::to_string(raw.info.frames) + " frames");
  const auto n = raw.info.grid.size();
  const bool scaled = raw.info.scl_slope != 1.0 || raw.info.scl_inter != 0.0;
  if (!scaled && raw.info.datatype == NiftiType::UInt8)
    return Volume<std::uint8_t>(raw.info.grid, decode<std::uint8_t>(raw.payload, raw.info, n));
  if (!scaled && (raw.info.datatype == NiftiType::Int32 || raw.info.datatype == NiftiType::Int16 ||
                  raw.info.datatype == NiftiType::Int8 || raw.info.datatype == NiftiType::UInt16))
    return Volume<std::int32_t>(raw.info.grid, decode<std::int32_t>(raw.payload, raw.info, n));
  return Volume<float>(raw.info.grid, decode<float>(raw.payload, raw.info, n));
}

template <typename Scalar>
void write_nifti(const Volume<Scalar>& volume, const std::filesystem::path& path) {
  const auto header = make_header(volume.grid(), 1, Volume<Scalar>::data_type());
  write_bytes(path, header, {reinterpret_cast<const char*>(volume.data().data())},
              volume.size() * static_cast<std::int64_t>(sizeof(Scalar)));
}

template <typename Scalar>
void write_nifti_frames(const std::vector<Volume<Scalar>>& frames, const std::filesystem::path& path) {
  if (frames.empty()) throw DataError("no frames to write");
  std::vector<const char*> chunks;
  for (const auto& f : frames) {
    require_same_grid(frames.front().grid(), f.grid(), "write_nifti_frames");
    chunks.push_back(reinterpret_cast<const char*>(f.data().data()));
  }
  const auto header = make_header(frames.front().grid(), static_cast<int>(frames.size()), Volume<Scalar>::data_type());
  write_bytes(path, header, chunks, frames.front().size() * static_cast<std::int64_t>(sizeof(Scalar)));
}

#define DKPARC_INSTANTIATE(T)                                                                    \
  template Volume<T> read_nifti<T>(const std::filesystem::path&);                               \
  template std::vector<Volume<T>> read_nifti_frames<T>(const std::filesystem::path&);           \
  template void write_nifti<T>(const Volume<T>&, const std::filesystem::path&);                 \
  template void write_nifti_frames<T>(const std::vector<Volume<T>>&, const std::filesystem::path&);

DKPARC_INSTANTIATE(float)
DKPARC_INSTANTIATE(double)
DKPARC_INSTANTIATE(std::int32_t)
DKPARC_INSTANTIATE(std::uint8_t)

#undef DKPARC_INSTANTIATE

}  // namespace dkparc
