#include "drp/external_restorer.hpp"

#include <csignal>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include <netdb.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

namespace drp {
namespace {

// A dead peer must surface as an error return from write(), not a signal.
void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

struct Pipes {
  int to_child_read = -1, to_child_write = -1;
  int from_child_read = -1, from_child_write = -1;
};

[[noreturn]] void exec_child(const std::vector<std::string>& command, const Pipes& p) {
  ::dup2(p.to_child_read, STDIN_FILENO);
  ::dup2(p.from_child_write, STDOUT_FILENO);
  ::close(p.to_child_read);
  ::close(p.to_child_write);
  ::close(p.from_child_read);
  ::close(p.from_child_write);
  std::vector<char*> argv;
  argv.reserve(command.size() + 1);
  for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  ::execvp(argv[0], argv.data());
  ::_exit(127);
}

int connect_tcp(const std::string& address) {
  // address = "tcp:host:port"
  const std::string rest = address.substr(4);
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos)
    throw PeerError(PeerErrorKind::handshake, "address must be tcp:host:port");
  const std::string host = rest.substr(0, colon);
  const std::string port = rest.substr(colon + 1);

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0)
    throw PeerError(PeerErrorKind::handshake,
                    "cannot resolve " + host + ": " + gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0)
    throw PeerError(PeerErrorKind::handshake, "cannot connect to " + address);
  return fd;
}

WireTensor to_wire(const Image& img) {
  const Shape& s = img.shape();
  WireTensor t;
  t.dims = {static_cast<uint32_t>(s.channels), static_cast<uint32_t>(s.height),
            static_cast<uint32_t>(s.width)};
  t.values.reserve(img.data().size());
  for (double v : img.data()) t.values.push_back(static_cast<float>(v));
  return t;
}

}  // namespace

ExternalRestorer::ExternalRestorer(const PeerEndpoint& endpoint, Shape input,
                                   Shape output, int timeout_ms)
    : input_(input), output_(output) {
  ignore_sigpipe_once();
  const bool has_cmd = !endpoint.command.empty();
  const bool has_addr = !endpoint.address.empty();
  if (has_cmd == has_addr)
    throw std::invalid_argument("peer endpoint needs exactly one of command or address");

  if (has_cmd) {
    Pipes p;
    int a[2], b[2];
    if (::pipe(a) != 0 || ::pipe(b) != 0)
      throw PeerError(PeerErrorKind::handshake, "pipe creation failed");
    p.to_child_read = a[0];
    p.to_child_write = a[1];
    p.from_child_read = b[0];
    p.from_child_write = b[1];

    child_ = ::fork();
    if (child_ < 0) throw PeerError(PeerErrorKind::handshake, "fork failed");
    if (child_ == 0) exec_child(endpoint.command, p);

    ::close(p.to_child_read);
    ::close(p.from_child_write);
    read_fd_ = p.from_child_read;
    write_fd_ = p.to_child_write;
  } else {
    if (endpoint.address.rfind("tcp:", 0) != 0)
      throw PeerError(PeerErrorKind::handshake,
                      "unsupported address scheme: " + endpoint.address);
    read_fd_ = write_fd_ = connect_tcp(endpoint.address);
  }

  io_ = std::make_unique<FdStream>(read_fd_, write_fd_, timeout_ms);

  try {
    write_request(*io_, kOpcodePing, nullptr);
    WireTensor ignored;
    const uint8_t status = read_response(*io_, &ignored);
    if (status != kStatusOk)
      throw PeerError(PeerErrorKind::handshake, "peer rejected the ping");
  } catch (const PeerError& e) {
    shutdown();
    if (e.kind() == PeerErrorKind::handshake) throw;
    throw PeerError(PeerErrorKind::handshake,
                    std::string("handshake failed: ") + e.what());
  }
}

ExternalRestorer::~ExternalRestorer() { shutdown(); }

void ExternalRestorer::shutdown() noexcept {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
  if (child_ > 0) {
    // Closing the pipes asks the child to exit. A healthy peer leaves
    // within a poll tick; an unresponsive one is reaped by force so
    // teardown stays bounded.
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_, &status, WNOHANG) != 0) {
        child_ = -1;
        return;
      }
      ::usleep(10 * 1000);
    }
    ::kill(child_, SIGKILL);
    ::waitpid(child_, &status, 0);
    child_ = -1;
  }
}

Image ExternalRestorer::restore(const Image& s) {
  if (!(s.shape() == input_))
    throw std::invalid_argument("external restore: expected shape " + input_.str() +
                                ", got " + s.shape().str());
  const WireTensor req = to_wire(s);
  write_request(*io_, kOpcodeRestore, &req);

  WireTensor reply;
  const uint8_t status = read_response(*io_, &reply);
  if (status != kStatusOk)
    throw PeerError(PeerErrorKind::protocol,
                    "peer returned status " + std::to_string(int(status)));

  const Shape want = output_;
  if (reply.dims.size() != 3 ||
      reply.dims[0] != static_cast<uint32_t>(want.channels) ||
      reply.dims[1] != static_cast<uint32_t>(want.height) ||
      reply.dims[2] != static_cast<uint32_t>(want.width))
    throw PeerError(PeerErrorKind::shape_mismatch,
                    "peer replied with an unexpected tensor shape");

  Image out(want);
  for (size_t i = 0; i < reply.values.size(); ++i)
    out.data()[i] = static_cast<double>(reply.values[i]);
  return out;
}

std::unique_ptr<RestorationOperator> external_restorer(
    const PeerEndpoint& endpoint, Shape input, Shape output, int timeout_ms) {
  return std::make_unique<ExternalRestorer>(endpoint, input, output, timeout_ms);
}

}  // namespace drp
