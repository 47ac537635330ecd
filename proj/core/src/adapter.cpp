#include "ddvkit/adapter.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <sstream>
#include <thread>

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"

namespace ddv {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

Shape shape_field(const json& h, const char* key) {
  const auto it = h.find(key);
  if (it == h.end() || !it->is_array()) throw ProtocolError(std::string("header field '") + key + "' missing");
  Shape s;
  for (const auto& d : *it) {
    if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) {
      throw ProtocolError(std::string("header field '") + key + "' must hold positive integers");
    }
    s.push_back(d.get<std::size_t>());
  }
  return s;
}

std::size_t count_field(const json& h, const char* key) {
  const auto it = h.find(key);
  if (it == h.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw ProtocolError(std::string("header field '") + key + "' missing or not a count");
  }
  return it->get<std::size_t>();
}

Frame error_frame(const std::string& kind, const std::string& message) {
  return {json{{"error", message}, {"kind", kind}}, {}};
}

[[noreturn]] void raise_remote(const json& h) {
  const std::string kind = h.value("kind", std::string{"protocol"});
  const std::string msg = "adapter refused: " + h.value("error", std::string{"unknown error"});
  if (kind == "shape") throw ShapeError(msg);
  throw ProtocolError(msg);
}

}  // namespace

std::size_t payload_floats(const json& h) {
  if (!h.is_object()) throw ProtocolError("frame header is not a JSON object");
  if (!h.contains("n")) return 0;
  if (h.contains("dtype") && h["dtype"] != "f32") throw ProtocolError("unsupported dtype " + h["dtype"].dump());
  const std::size_t n = count_field(h, "n");
  if (h.contains("shape")) return n * numel(shape_field(h, "shape"));
  if (h.contains("out_dim")) return n * count_field(h, "out_dim");
  throw ProtocolError("frame header has 'n' but neither 'shape' nor 'out_dim'");
}

std::string encode_frame(const Frame& frame) {
  const std::string header = frame.header.dump();
  if (payload_floats(frame.header) != frame.payload.size()) {
    throw InvalidArgument("frame payload does not match its header");
  }
  const auto len = static_cast<std::uint32_t>(header.size());
  std::string out(4, '\0');
  std::memcpy(out.data(), &len, 4);
  out += header;
  append_le_f32(out, frame.payload);
  return out;
}

Channel::Channel(int read_fd, int write_fd, bool owns)
    : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {}

Channel::Channel(Channel&& o) noexcept : read_fd_(o.read_fd_), write_fd_(o.write_fd_), owns_(o.owns_) {
  o.read_fd_ = o.write_fd_ = -1;
}

Channel::~Channel() { close(); }

void Channel::close() {
  if (owns_) {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  }
  read_fd_ = write_fd_ = -1;
}

void Channel::send_bytes(std::string_view bytes) {
  if (write_fd_ < 0) throw UnreachableError("adapter channel is closed");
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t w = ::send(write_fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (w < 0 && errno == ENOTSOCK) w = ::write(write_fd_, bytes.data() + done, bytes.size() - done);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw UnreachableError(sys_error("adapter write failed"));
    }
    done += static_cast<std::size_t>(w);
  }
}

void Channel::send(const Frame& frame) { send_bytes(encode_frame(frame)); }

void Channel::read_exact(char* out, std::size_t n, Clock::time_point deadline, bool timed,
                         bool* eof_at_start) {
  std::size_t got = 0;
  while (got < n) {
    int wait_ms = -1;
    if (timed) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) throw UnreachableError("adapter timed out");
      wait_ms = static_cast<int>(std::min<long long>(left.count(), 1 << 30));
    }
    pollfd p{read_fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, wait_ms);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw UnreachableError(sys_error("adapter poll failed"));
    }
    if (r == 0) throw UnreachableError("adapter timed out");
    const ssize_t k = ::read(read_fd_, out + got, n - got);
    if (k < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw UnreachableError(sys_error("adapter read failed"));
    }
    if (k == 0) {
      if (got == 0 && eof_at_start) {
        *eof_at_start = true;
        return;
      }
      throw UnreachableError("adapter closed the connection mid-frame");
    }
    got += static_cast<std::size_t>(k);
  }
}

std::optional<Frame> Channel::receive(std::chrono::milliseconds timeout) {
  if (read_fd_ < 0) throw UnreachableError("adapter channel is closed");
  const bool timed = timeout.count() > 0;
  const auto deadline = Clock::now() + timeout;
  char len_bytes[4];
  bool eof = false;
  read_exact(len_bytes, 4, deadline, timed, &eof);
  if (eof) return std::nullopt;
  std::uint32_t len = 0;
  std::memcpy(&len, len_bytes, 4);
  if (len == 0 || len > kMaxHeaderBytes) {
    throw ProtocolError("frame header length " + std::to_string(len) + " out of range");
  }
  std::string header(len, '\0');
  read_exact(header.data(), len, deadline, timed, nullptr);
  Frame f;
  try {
    f.header = json::parse(header);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("frame header is not JSON: ") + e.what());
  }
  const std::size_t floats = payload_floats(f.header);
  if (floats > (std::size_t{1} << 31)) throw ProtocolError("frame payload too large");
  std::string payload(floats * sizeof(float), '\0');
  if (floats > 0) read_exact(payload.data(), payload.size(), deadline, timed, nullptr);
  f.payload = read_le_f32(payload);
  return f;
}

RemoteModel::RemoteModel(Channel channel, const AdapterOptions& options, int child_pid)
    : channel_(std::move(channel)), options_(options), child_(child_pid) {
  if (options_.batch_size == 0) throw InvalidArgument("adapter batch size must be positive");
  channel_.send({json{{"protocol", options_.protocol}}, {}});
  auto reply = channel_.receive(options_.timeout);
  if (!reply) throw UnreachableError("adapter closed the connection during the handshake");
  const json& h = reply->header;
  if (h.contains("error")) raise_remote(h);
  if (h.value("protocol", std::string{}) != options_.protocol) {
    throw ProtocolError("adapter speaks '" + h.value("protocol", std::string{"?"}) + "', expected '" +
                        options_.protocol + "'");
  }
  id_ = h.value("model_id", std::string{"remote"});
  input_shape_ = shape_field(h, "shape");
  output_dim_ = count_field(h, "out_dim");
}

RemoteModel::~RemoteModel() {
  channel_.close();
  if (child_ > 0) {
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(child_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, nullptr, 0);
  }
}

std::size_t RemoteModel::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

Tensor RemoteModel::forward(const Tensor& batch) const {
  const Shape& s = batch.shape();
  if (s.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), s.begin() + 1)) {
    throw ShapeError("adapter expects batches of " + to_string(input_shape_) + ", got " + to_string(s));
  }
  std::lock_guard lock(mu_);
  if (broken_) throw ProtocolError("adapter session was aborted");
  const std::size_t n = s[0];
  const std::size_t row = numel(input_shape_);
  Tensor out({n, output_dim_});
  try {
    for (std::size_t start = 0; start < n; start += options_.batch_size) {
      const std::size_t k = std::min(options_.batch_size, n - start);
      Frame req;
      req.header = json{{"n", k}, {"shape", input_shape_}, {"dtype", "f32"}};
      const auto in = batch.data().subspan(start * row, k * row);
      req.payload.assign(in.begin(), in.end());
      channel_.send(req);
      auto reply = channel_.receive(options_.timeout);
      if (!reply) throw UnreachableError("adapter closed the connection");
      const json& h = reply->header;
      if (h.contains("error")) raise_remote(h);
      if (!h.contains("out_dim") || count_field(h, "n") != k || count_field(h, "out_dim") != output_dim_) {
        throw ProtocolError("adapter response header " + h.dump() + " does not match the request");
      }
      std::copy(reply->payload.begin(), reply->payload.end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * output_dim_));
      ++requests_;
    }
  } catch (const ShapeError&) {
    throw;
  } catch (...) {
    broken_ = true;
    channel_.close();
    throw;
  }
  return out;
}

std::unique_ptr<RemoteModel> spawn_adapter(const std::vector<std::string>& argv, const AdapterOptions& options) {
  if (argv.empty()) throw InvalidArgument("empty adapter command");
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) throw IoError(sys_error("socketpair"));
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw IoError(sys_error("fork"));
  }
  if (pid == 0) {
    ::dup2(sv[1], STDIN_FILENO);
    ::dup2(sv[1], STDOUT_FILENO);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(sv[1]);
  Channel ch(sv[0]);
  try {
    return std::make_unique<RemoteModel>(std::move(ch), options, pid);
  } catch (...) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    throw;
  }
}

namespace {
sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw InvalidArgument("socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}
}  // namespace

std::unique_ptr<RemoteModel> connect_adapter(const std::string& path, const AdapterOptions& options) {
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw IoError(sys_error("socket"));
  Channel ch(fd);
  const auto addr = unix_address(path);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw UnreachableError(sys_error("cannot connect to '" + path + "'"));
  }
  return std::make_unique<RemoteModel>(std::move(ch), options);
}

bool is_endpoint(const std::string& spec) {
  return spec.starts_with("unix:") || spec.starts_with("exec:");
}

std::unique_ptr<RemoteModel> open_endpoint(const std::string& spec, const AdapterOptions& options) {
  if (spec.starts_with("unix:")) return connect_adapter(spec.substr(5), options);
  if (spec.starts_with("exec:")) {
    std::istringstream in(spec.substr(5));
    std::vector<std::string> argv;
    for (std::string a; in >> a;) argv.push_back(a);
    return spawn_adapter(argv, options);
  }
  throw InvalidArgument("endpoint must start with 'unix:' or 'exec:', got '" + spec + "'");
}

std::size_t serve_session(const Classifier& model, Channel& channel, std::string_view protocol) {
  auto abort = [&](const std::string& msg) {
    try {
      channel.send(error_frame("protocol", msg));
    } catch (const Error&) {
    }
    throw ProtocolError(msg);
  };
  std::optional<Frame> hello;
  try {
    hello = channel.receive(std::chrono::milliseconds(0));
  } catch (const ProtocolError& e) {
    abort(e.what());
  }
  if (!hello) return 0;
  const std::string asked = hello->header.value("protocol", std::string{});
  if (asked != protocol) {
    channel.send(error_frame("version", "protocol '" + asked + "' is not supported; this adapter speaks '" +
                                            std::string(protocol) + "'"));
    return 0;
  }
  channel.send({json{{"protocol", protocol},
                     {"model_id", model.id()},
                     {"shape", model.input_shape()},
                     {"out_dim", model.output_dim()}},
                {}});
  std::size_t served = 0;
  for (;;) {
    std::optional<Frame> req;
    try {
      req = channel.receive(std::chrono::milliseconds(0));
    } catch (const ProtocolError& e) {
      abort(e.what());
    }
    if (!req) return served;
    const json& h = req->header;
    Shape shape;
    std::size_t n = 0;
    try {
      if (!h.contains("n") || !h.contains("shape")) throw ProtocolError("request header needs 'n' and 'shape'");
      shape = shape_field(h, "shape");
      n = count_field(h, "n");
    } catch (const ProtocolError& e) {
      abort(e.what());
    }
    if (shape != model.input_shape()) {
      channel.send(error_frame("shape", "expected samples of shape " + to_string(model.input_shape()) +
                                            ", got " + to_string(shape)));
      continue;
    }
    Tensor out;
    try {
      out = model.forward(Tensor(batched(n, shape), std::move(req->payload)));
    } catch (const Error& e) {
      channel.send(error_frame(e.kind(), e.what()));
      continue;
    }
    channel.send({json{{"n", n}, {"out_dim", model.output_dim()}, {"dtype", "f32"}}, out.values()});
    ++served;
  }
}

void serve_unix(const Classifier& model, const std::string& path, std::size_t max_sessions) {
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw IoError(sys_error("socket"));
  Channel listener(fd);
  const auto addr = unix_address(path);
  ::unlink(path.c_str());
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw IoError(sys_error("cannot bind '" + path + "'"));
  }
  if (::listen(fd, 4) != 0) throw IoError(sys_error("listen"));
  std::vector<std::thread> sessions;
  for (std::size_t s = 0; max_sessions == 0 || s < max_sessions; ++s) {
    const int c = ::accept4(fd, nullptr, nullptr, SOCK_CLOEXEC);
    if (c < 0) {
      if (errno == EINTR) continue;
      throw IoError(sys_error("accept"));
    }
    sessions.emplace_back([&model, c] {
      Channel session(c);
      try {
        serve_session(model, session);
      } catch (const Error&) {
        // one bad session does not take the server down
      }
    });
  }
  for (auto& t : sessions) t.join();
  ::unlink(path.c_str());
}

EchoClassifier::EchoClassifier(Shape input_shape, std::size_t out_dim, std::string id)
    : id_(std::move(id)), input_shape_(std::move(input_shape)), out_dim_(out_dim) {
  if (out_dim_ == 0 || out_dim_ > numel(input_shape_)) {
    throw InvalidArgument("echo out_dim must be in [1, " + std::to_string(numel(input_shape_)) + "]");
  }
}

Tensor EchoClassifier::forward(const Tensor& batch) const {
  const std::size_t n = batch.rows();
  Tensor out({n, out_dim_});
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = batch.row(i);
    std::copy_n(r.begin(), out_dim_, out.row(i).begin());
  }
  return out;
}

}  // namespace ddv
