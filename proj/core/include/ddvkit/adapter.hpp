#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddvkit/model.hpp"

namespace ddv {

/// External model adapter: strict request/response over a local stream.
///
///   frame    = u32 LE header length, header JSON, raw LE float32 payload
///   request  = {n, shape, dtype:"f32"}   payload n * numel(shape) floats
///   response = {n, out_dim, dtype:"f32"} payload n * out_dim floats
///   error    = {error, kind}             no payload
///
/// The session opens with a hello frame {protocol} from the client, answered
/// by {protocol, model_id, shape, out_dim} or an error frame.
inline constexpr std::string_view kAdapterProtocol = "ddvkit-adapter/1";
inline constexpr std::size_t kMaxHeaderBytes = 1 << 20;

struct Frame {
  nlohmann::json header = nlohmann::json::object();
  std::vector<float> payload;
};

// Payload length implied by a header; throws ProtocolError on bad fields.
std::size_t payload_floats(const nlohmann::json& header);

std::string encode_frame(const Frame& frame);

/// Owns one or two file descriptors (the same fd for sockets).
class Channel {
 public:
  Channel(int read_fd, int write_fd, bool owns = true);
  explicit Channel(int fd) : Channel(fd, fd, true) {}
  Channel(Channel&& other) noexcept;
  Channel& operator=(Channel&&) = delete;
  Channel(const Channel&) = delete;
  ~Channel();

  void send(const Frame& frame);
  void send_bytes(std::string_view bytes);
  // timeout <= 0 waits forever. nullopt on clean EOF before the first byte.
  // UnreachableError on timeout or mid-frame EOF, ProtocolError on garbage.
  std::optional<Frame> receive(std::chrono::milliseconds timeout);
  void close();

 private:
  void read_exact(char* out, std::size_t n, std::chrono::steady_clock::time_point deadline,
                  bool timed, bool* eof_at_start);

  int read_fd_ = -1;
  int write_fd_ = -1;
  bool owns_ = true;
};

struct AdapterOptions {
  std::chrono::milliseconds timeout{30000};  // per batch
  std::size_t batch_size = 200;
  std::string protocol{kAdapterProtocol};
};

/// A suspect reachable only through the adapter protocol.
class RemoteModel final : public Classifier {
 public:
  // Performs the hello exchange; `child` is reaped on destruction.
  RemoteModel(Channel channel, const AdapterOptions& options, int child_pid = -1);
  ~RemoteModel() override;

  const std::string& id() const override { return id_; }
  const Shape& input_shape() const override { return input_shape_; }
  std::size_t output_dim() const override { return output_dim_; }
  Tensor forward(const Tensor& batch) const override;

  std::size_t requests() const;

 private:
  mutable std::mutex mu_;
  mutable Channel channel_;
  mutable bool broken_ = false;
  mutable std::size_t requests_ = 0;
  AdapterOptions options_;
  int child_ = -1;
  std::string id_;
  Shape input_shape_;
  std::size_t output_dim_ = 0;
};

/// argv[0] is looked up on PATH; the child speaks the protocol on stdin/stdout.
std::unique_ptr<RemoteModel> spawn_adapter(const std::vector<std::string>& argv,
                                           const AdapterOptions& options = {});
std::unique_ptr<RemoteModel> connect_adapter(const std::string& socket_path,
                                             const AdapterOptions& options = {});
/// "unix:<path>" or "exec:<command line>" (split on whitespace).
bool is_endpoint(const std::string& spec);
std::unique_ptr<RemoteModel> open_endpoint(const std::string& spec, const AdapterOptions& options = {});

/// Serves one session until the client closes. Returns the number of batch
/// requests answered. A malformed frame is answered with an error frame and
/// then raised as ProtocolError.
std::size_t serve_session(const Classifier& model, Channel& channel,
                          std::string_view protocol = kAdapterProtocol);
/// Accepts sessions on a unix socket, each on its own thread; 0 = forever.
void serve_unix(const Classifier& model, const std::string& socket_path, std::size_t max_sessions = 0);

/// Returns each input row truncated to its first out_dim values.
class EchoClassifier final : public Classifier {
 public:
  EchoClassifier(Shape input_shape, std::size_t out_dim, std::string id = "echo");
  const std::string& id() const override { return id_; }
  const Shape& input_shape() const override { return input_shape_; }
  std::size_t output_dim() const override { return out_dim_; }
  Tensor forward(const Tensor& batch) const override;

 private:
  std::string id_;
  Shape input_shape_;
  std::size_t out_dim_;
};

}  // namespace ddv
