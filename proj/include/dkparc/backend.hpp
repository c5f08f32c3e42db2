#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dkparc/labels.hpp"
#include "dkparc/volume.hpp"

namespace dkparc {

/// Multi-channel block of voxels. `values` is voxels x channels and column-major, so the
/// buffer is channel-major with x fastest inside each channel, the wire layout as-is.
struct Patch {
  Eigen::Vector3i shape = Eigen::Vector3i::Zero();
  Eigen::ArrayXXf values;

  Patch() = default;
  Patch(const Eigen::Vector3i& s, int channels)
      : shape(s), values(Eigen::ArrayXXf::Zero(std::int64_t{s[0]} * s[1] * s[2], channels)) {}

  int channels() const { return static_cast<int>(values.cols()); }
  std::int64_t voxels() const { return values.rows(); }
  std::int64_t index(int x, int y, int z) const { return x + std::int64_t{shape[0]} * (y + std::int64_t{shape[1]} * z); }
};

/// Where a tile sits in the (zero-padded) volume being predicted. Not part of the wire
/// protocol; in-process backends may use it.
struct TileContext {
  Eigen::Vector3i origin = Eigen::Vector3i::Zero();
  Eigen::Vector3i volume_dims = Eigen::Vector3i::Zero();
};

/// Patch-in, class-scores-out predictor standing in for a trained network.
/// Implementations must be deterministic and return `classes()` finite scores per voxel,
/// either probabilities or logits.
class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  virtual int input_channels() const = 0;
  virtual int classes() const = 0;
  /// Patch shape the backend was built for, if it insists on one.
  virtual std::optional<Eigen::Vector3i> patch_shape() const { return std::nullopt; }
  /// Stable description recorded in run manifests.
  virtual std::string identity() const = 0;
  virtual Patch predict(const Patch& input, const TileContext& tile) = 0;
};

/// Same score vector at every voxel.
class ConstantBackend : public SegmenterBackend {
 public:
  ConstantBackend(int input_channels, std::vector<float> scores);
  int input_channels() const override { return channels_; }
  int classes() const override { return static_cast<int>(scores_.size()); }
  std::string identity() const override;
  Patch predict(const Patch& input, const TileContext& tile) override;

 private:
  int channels_;
  std::vector<float> scores_;
};

/// One-hot scores read from a class-index volume at the tile's position. Voxels in the
/// padding beyond the volume are class 0.
class LabelOracleBackend : public SegmenterBackend {
 public:
  LabelOracleBackend(int input_channels, int classes, LabelImage class_map);
  int input_channels() const override { return channels_; }
  int classes() const override { return classes_; }
  std::string identity() const override { return "label-oracle"; }
  Patch predict(const Patch& input, const TileContext& tile) override;

 private:
  int channels_;
  int classes_;
  LabelImage class_map_;
};

/// Decodes fine internal label ids stored verbatim in one input channel and emits one-hot
/// scores for a coarse or fine stage. Lets an oracle run behind the wire protocol, where
/// tile positions are unavailable. `group == 0` selects the coarse stage.
class SchemaDecodeBackend : public SegmenterBackend {
 public:
  SchemaDecodeBackend(const LabelSchema& schema, int input_channels, int source_channel, int group);
  int input_channels() const override { return channels_; }
  int classes() const override { return classes_; }
  std::string identity() const override;
  Patch predict(const Patch& input, const TileContext& tile) override;

 private:
  int channels_;
  int source_channel_;
  int group_;
  int classes_;
  std::vector<int> class_of_label_;  // indexed by fine internal id
};

// ---------------------------------------------------------------------------
// Wire protocol
//
// Every message is a 28-byte little-endian header followed by a float32 payload:
//   bytes  0..3   magic "DKPT"
//   bytes  4..7   uint32 channel count of the payload (C in a request, K in a response)
//   bytes  8..11  uint32 class count K
//   bytes 12..23  uint32 nx, ny, nz
//   bytes 24..27  uint32 dtype, 1 = float32
// Payload: channel-major, x fastest within each channel; channels*nx*ny*nz floats.

namespace protocol {
inline constexpr std::array<char, 4> kMagic{'D', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFloat32 = 1;
inline constexpr std::size_t kHeaderBytes = 28;

struct Header {
  std::uint32_t channels = 0;
  std::uint32_t classes = 0;
  Eigen::Vector3i shape = Eigen::Vector3i::Zero();
  std::uint32_t dtype = kFloat32;
};

std::array<char, kHeaderBytes> encode_header(const Header& header);
/// Throws BackendError on bad magic, dtype or dimensions.
Header decode_header(const std::array<char, kHeaderBytes>& bytes);

/// Header then payload.
void write_message(std::ostream& out, const Patch& patch, int classes);
/// Returns nullopt on a clean end of stream before any header byte; throws BackendError otherwise.
std::optional<Patch> read_message(std::istream& in, Header* header = nullptr);

/// Request/response loop for implementing a backend executable: reads requests from `in`
/// until end of stream and writes one response per request to `out`.
void serve(SegmenterBackend& backend, std::istream& in, std::ostream& out);
}  // namespace protocol

/// How to launch an external backend executable.
struct LaunchSpec {
  std::vector<std::string> command;  // argv; command[0] is resolved through PATH
  int input_channels = 0;
  int classes = 0;
  std::optional<Eigen::Vector3i> patch;
  std::chrono::milliseconds timeout{600000};
};

/// Reads DKPARC_BACKEND_TIMEOUT (seconds) if set, otherwise returns `fallback`.
std::chrono::milliseconds backend_timeout_from_env(std::chrono::milliseconds fallback);

/// Long-lived child process speaking the wire protocol over its stdin/stdout. Started on
/// the first request; one request in flight at a time. Protocol and process failures throw
/// BackendError; shape/class disagreements throw ContractError.
class ProcessBackend : public SegmenterBackend {
 public:
  explicit ProcessBackend(LaunchSpec spec);
  ~ProcessBackend() override;
  ProcessBackend(const ProcessBackend&) = delete;
  ProcessBackend& operator=(const ProcessBackend&) = delete;

  int input_channels() const override { return spec_.input_channels; }
  int classes() const override { return spec_.classes; }
  std::optional<Eigen::Vector3i> patch_shape() const override { return spec_.patch; }
  std::string identity() const override;
  Patch predict(const Patch& input, const TileContext& tile) override;

 private:
  void start();
  void stop();
  void write_all(const char* data, std::size_t bytes);
  void read_all(char* data, std::size_t bytes);

  LaunchSpec spec_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
};

}  // namespace dkparc
