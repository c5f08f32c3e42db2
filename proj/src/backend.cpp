#include "dkparc/backend.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

namespace dkparc {
namespace {

void put_u32(char* dst, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
}

std::uint32_t get_u32(const char* src) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
  return v;
}

Patch one_hot(const Eigen::Vector3i& shape, int classes, const std::vector<int>& class_per_voxel) {
  Patch out(shape, classes);
  for (std::size_t v = 0; v < class_per_voxel.size(); ++v)
    out.values(static_cast<Eigen::Index>(v), class_per_voxel[v]) = 1.0f;
  return out;
}

}  // namespace

ConstantBackend::ConstantBackend(int input_channels, std::vector<float> scores)
    : channels_(input_channels), scores_(std::move(scores)) {
  if (scores_.empty()) throw ArgumentError("constant backend needs at least one class score");
}

std::string ConstantBackend::identity() const {
  std::ostringstream s;
  s << "constant(";
  for (std::size_t i = 0; i < scores_.size(); ++i) s << (i ? "," : "") << scores_[i];
  s << ")";
  return s.str();
}

Patch ConstantBackend::predict(const Patch& input, const TileContext&) {
  Patch out(input.shape, classes());
  for (int k = 0; k < classes(); ++k) out.values.col(k).setConstant(scores_[static_cast<std::size_t>(k)]);
  return out;
}

LabelOracleBackend::LabelOracleBackend(int input_channels, int classes, LabelImage class_map)
    : channels_(input_channels), classes_(classes), class_map_(std::move(class_map)) {
  if ((class_map_.data() < 0).any() || (class_map_.data() >= classes_).any())
    throw ArgumentError("oracle class map has values outside [0, classes)");
}

Patch LabelOracleBackend::predict(const Patch& input, const TileContext& tile) {
  std::vector<int> cls(static_cast<std::size_t>(input.voxels()), 0);
  for (int z = 0; z < input.shape[2]; ++z)
    for (int y = 0; y < input.shape[1]; ++y)
      for (int x = 0; x < input.shape[0]; ++x)
        cls[static_cast<std::size_t>(input.index(x, y, z))] =
            class_map_.at_or(tile.origin[0] + x, tile.origin[1] + y, tile.origin[2] + z, 0);
  return one_hot(input.shape, classes_, cls);
}

SchemaDecodeBackend::SchemaDecodeBackend(const LabelSchema& schema, int input_channels, int source_channel, int group)
    : channels_(input_channels), source_channel_(source_channel), group_(group) {
  if (source_channel < 0 || source_channel >= input_channels)
    throw ArgumentError("decode channel " + std::to_string(source_channel) + " is out of range");
  class_of_label_.assign(static_cast<std::size_t>(schema.label_count()) + 1, 0);
  if (group == 0) {
    classes_ = LabelSchema::kGroupCount + 1;
    for (const auto& l : schema.labels()) class_of_label_[static_cast<std::size_t>(l.id)] = schema.group_of(l.id);
  } else {
    if (schema.group(group).passthrough)
      throw ConfigError("group " + std::to_string(group) + " is assigned by the coarse stage, not decoded");
    const auto& part = schema.partition(group);
    classes_ = static_cast<int>(part.size()) + 1;
    for (std::size_t c = 0; c < part.size(); ++c) class_of_label_[static_cast<std::size_t>(part[c])] = static_cast<int>(c) + 1;
  }
}

std::string SchemaDecodeBackend::identity() const {
  return "schema-decode(channel=" + std::to_string(source_channel_) + ",group=" + std::to_string(group_) + ")";
}

Patch SchemaDecodeBackend::predict(const Patch& input, const TileContext&) {
  std::vector<int> cls(static_cast<std::size_t>(input.voxels()), 0);
  const auto max_id = static_cast<long>(class_of_label_.size()) - 1;
  for (std::int64_t v = 0; v < input.voxels(); ++v) {
    const long id = std::lround(input.values(v, source_channel_));
    if (id > 0 && id <= max_id) cls[static_cast<std::size_t>(v)] = class_of_label_[static_cast<std::size_t>(id)];
  }
  return one_hot(input.shape, classes_, cls);
}

namespace protocol {

std::array<char, kHeaderBytes> encode_header(const Header& header) {
  std::array<char, kHeaderBytes> b{};
  std::memcpy(b.data(), kMagic.data(), 4);
  put_u32(b.data() + 4, header.channels);
  put_u32(b.data() + 8, header.classes);
  for (int a = 0; a < 3; ++a) put_u32(b.data() + 12 + 4 * a, static_cast<std::uint32_t>(header.shape[a]));
  put_u32(b.data() + 24, header.dtype);
  return b;
}

Header decode_header(const std::array<char, kHeaderBytes>& b) {
  if (std::memcmp(b.data(), kMagic.data(), 4) != 0) throw BackendError("protocol: bad magic");
  Header h;
  h.channels = get_u32(b.data() + 4);
  h.classes = get_u32(b.data() + 8);
  for (int a = 0; a < 3; ++a) {
    const auto d = get_u32(b.data() + 12 + 4 * a);
    if (d == 0 || d > 4096) throw BackendError("protocol: spatial dimension out of range");
    h.shape[a] = static_cast<int>(d);
  }
  h.dtype = get_u32(b.data() + 24);
  if (h.dtype != kFloat32) throw BackendError("protocol: unsupported dtype " + std::to_string(h.dtype));
  if (h.channels == 0 || h.channels > 4096) throw BackendError("protocol: channel count out of range");
  return h;
}

void write_message(std::ostream& out, const Patch& patch, int classes) {
  Header h;
  h.channels = static_cast<std::uint32_t>(patch.channels());
  h.classes = static_cast<std::uint32_t>(classes);
  h.shape = patch.shape;
  const auto header = encode_header(h);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(patch.values.data()),
            static_cast<std::streamsize>(patch.values.size() * sizeof(float)));
  out.flush();
  if (!out) throw BackendError("protocol: write failed");
}

std::optional<Patch> read_message(std::istream& in, Header* header_out) {
  std::array<char, kHeaderBytes> bytes{};
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() == 0 && in.eof()) return std::nullopt;
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw BackendError("protocol: truncated header");
  const Header h = decode_header(bytes);
  Patch patch(h.shape, static_cast<int>(h.channels));
  const auto payload = static_cast<std::streamsize>(patch.values.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(patch.values.data()), payload);
  if (in.gcount() != payload) throw BackendError("protocol: truncated payload");
  if (header_out) *header_out = h;
  return patch;
}

void serve(SegmenterBackend& backend, std::istream& in, std::ostream& out) {
  Header h;
  while (auto request = read_message(in, &h)) {
    if (static_cast<int>(h.channels) != backend.input_channels())
      throw ContractError("request has " + std::to_string(h.channels) + " channels, backend expects " +
                          std::to_string(backend.input_channels()));
    // A class-count disagreement is answered as-is; the host owns that check.
    TileContext tile;
    tile.volume_dims = request->shape;
    const Patch response = backend.predict(*request, tile);
    write_message(out, response, backend.classes());
  }
}

}  // namespace protocol

std::chrono::milliseconds backend_timeout_from_env(std::chrono::milliseconds fallback) {
  const char* v = std::getenv("DKPARC_BACKEND_TIMEOUT");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const double seconds = std::strtod(v, &end);
  if (end == v || *end != '\0' || !(seconds > 0))
    throw ConfigError(std::string("DKPARC_BACKEND_TIMEOUT must be a positive number of seconds, got '") + v + "'");
  return std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
}

ProcessBackend::ProcessBackend(LaunchSpec spec) : spec_(std::move(spec)) {
  if (spec_.command.empty()) throw ConfigError("backend launch spec has an empty command");
  if (spec_.input_channels <= 0 || spec_.classes <= 0)
    throw ConfigError("backend launch spec needs positive input channel and class counts");
}

ProcessBackend::~ProcessBackend() { stop(); }

std::string ProcessBackend::identity() const {
  std::string s = "process:";
  for (std::size_t i = 0; i < spec_.command.size(); ++i) s += (i ? " " : "") + spec_.command[i];
  return s;
}

void ProcessBackend::start() {
  // A backend that exits early must surface as EPIPE, not kill the host.
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw BackendError("pipe() failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw BackendError("pipe() failed");
  }
  std::vector<char*> argv;
  for (auto& a : spec_.command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw BackendError("fork() failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

void ProcessBackend::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void ProcessBackend::write_all(const char* data, std::size_t bytes) {
  std::size_t done = 0;
  while (done < bytes) {
    pollfd p{to_child_, POLLOUT, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(spec_.timeout.count()));
    if (ready == 0) throw BackendError("backend timed out accepting a request (" + identity() + ")");
    if (ready < 0 && errno == EINTR) continue;
    const auto n = ::write(to_child_, data + done, bytes - done);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw BackendError("backend closed its input (" + identity() + ")");
    }
    done += static_cast<std::size_t>(n);
  }
}

void ProcessBackend::read_all(char* data, std::size_t bytes) {
  std::size_t done = 0;
  while (done < bytes) {
    pollfd p{from_child_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(spec_.timeout.count()));
    if (ready == 0) throw BackendError("backend timed out producing a response (" + identity() + ")");
    if (ready < 0 && errno == EINTR) continue;
    const auto n = ::read(from_child_, data + done, bytes - done);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw BackendError("read from backend failed (" + identity() + ")");
    }
    if (n == 0) throw BackendError("backend exited mid-response (" + identity() + ")");
    done += static_cast<std::size_t>(n);
  }
}

Patch ProcessBackend::predict(const Patch& input, const TileContext&) {
  if (input.channels() != spec_.input_channels)
    throw ContractError("request has " + std::to_string(input.channels()) + " channels, backend declares " +
                        std::to_string(spec_.input_channels));
  if (pid_ < 0) start();

  protocol::Header request;
  request.channels = static_cast<std::uint32_t>(input.channels());
  request.classes = static_cast<std::uint32_t>(spec_.classes);
  request.shape = input.shape;
  const auto header = protocol::encode_header(request);
  write_all(header.data(), header.size());
  write_all(reinterpret_cast<const char*>(input.values.data()), static_cast<std::size_t>(input.values.size()) * sizeof(float));

  std::array<char, protocol::kHeaderBytes> reply{};
  read_all(reply.data(), reply.size());
  const auto h = protocol::decode_header(reply);
  if (h.shape != input.shape) throw ContractError("backend replied with a different patch shape (" + identity() + ")");
  if (static_cast<int>(h.channels) != spec_.classes || static_cast<int>(h.classes) != spec_.classes)
    throw ContractError("backend replied with " + std::to_string(h.channels) + " channels, expected " +
                        std::to_string(spec_.classes) + " (" + identity() + ")");
  Patch out(h.shape, spec_.classes);
  read_all(reinterpret_cast<char*>(out.values.data()), static_cast<std::size_t>(out.values.size()) * sizeof(float));
  return out;
}

}  // namespace dkparc
