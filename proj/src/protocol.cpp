#include "drp/protocol.hpp"

#include <cerrno>
#include <cstring>

#include <poll.h>
#include <unistd.h>

namespace drp {
namespace {

constexpr char kMagic[4] = {'D', 'R', 'P', '1'};
constexpr uint8_t kMaxNdim = 8;
constexpr uint64_t kMaxElements = 1ULL << 28;  // 1 GiB of f32 payload

void put_u32le(uint32_t v, std::vector<uint8_t>& out) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

uint32_t get_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// f32 copied through its bit pattern; the payload is IEEE-754 little-endian.
void put_f32le(float v, std::vector<uint8_t>& out) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(bits, out);
}

float get_f32le(const uint8_t* p) {
  const uint32_t bits = get_u32le(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_frame(FdStream& io, uint8_t tag, const WireTensor* tensor) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  buf.push_back(tag);
  if (tensor == nullptr) {
    buf.push_back(0);  // ndim
  } else {
    if (tensor->dims.size() > kMaxNdim)
      throw PeerError(PeerErrorKind::protocol, "outgoing tensor has too many dims");
    if (tensor->element_count() != tensor->values.size())
      throw PeerError(PeerErrorKind::protocol, "outgoing tensor dims/payload mismatch");
    buf.push_back(static_cast<uint8_t>(tensor->dims.size()));
    for (uint32_t d : tensor->dims) put_u32le(d, buf);
    buf.reserve(buf.size() + 4 * tensor->values.size());
    for (float v : tensor->values) put_f32le(v, buf);
  }
  io.write_all(buf.data(), buf.size());
}

WireTensor read_tensor_body(FdStream& io) {
  uint8_t ndim = 0;
  io.read_exact(&ndim, 1);
  if (ndim > kMaxNdim)
    throw PeerError(PeerErrorKind::protocol, "frame declares too many dims");
  WireTensor t;
  t.dims.resize(ndim);
  if (ndim > 0) {
    std::vector<uint8_t> raw(4 * static_cast<size_t>(ndim));
    io.read_exact(raw.data(), raw.size());
    for (int i = 0; i < ndim; ++i) t.dims[i] = get_u32le(raw.data() + 4 * i);
  }
  const uint64_t count = t.element_count();
  if (count > kMaxElements)
    throw PeerError(PeerErrorKind::protocol, "frame payload too large");
  t.values.resize(count);
  if (count > 0) {
    std::vector<uint8_t> raw(4 * count);
    io.read_exact(raw.data(), raw.size());
    for (uint64_t i = 0; i < count; ++i) t.values[i] = get_f32le(raw.data() + 4 * i);
  }
  return t;
}

}  // namespace

const char* peer_error_kind_name(PeerErrorKind kind) {
  switch (kind) {
    case PeerErrorKind::handshake: return "handshake";
    case PeerErrorKind::timeout: return "timeout";
    case PeerErrorKind::shape_mismatch: return "shape_mismatch";
    case PeerErrorKind::crashed: return "crashed";
    case PeerErrorKind::protocol: return "protocol";
  }
  return "unknown";
}

uint64_t WireTensor::element_count() const {
  uint64_t n = 1;
  for (uint32_t d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

void FdStream::read_exact(void* buf, size_t len) {
  auto* p = static_cast<uint8_t*>(buf);
  size_t got = 0;
  while (got < len) {
    pollfd pfd{read_fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, timeout_ms_);
    if (pr == 0) throw PeerError(PeerErrorKind::timeout, "read timed out");
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw PeerError(PeerErrorKind::crashed, std::string("poll: ") + std::strerror(errno));
    }
    const ssize_t n = ::read(read_fd_, p + got, len - got);
    if (n == 0)
      throw PeerError(PeerErrorKind::crashed, "peer closed the connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw PeerError(PeerErrorKind::crashed, std::string("read: ") + std::strerror(errno));
    }
    got += static_cast<size_t>(n);
  }
}

void FdStream::write_all(const void* buf, size_t len) {
  const auto* p = static_cast<const uint8_t*>(buf);
  size_t sent = 0;
  while (sent < len) {
    pollfd pfd{write_fd_, POLLOUT, 0};
    const int pr = ::poll(&pfd, 1, timeout_ms_);
    if (pr == 0) throw PeerError(PeerErrorKind::timeout, "write timed out");
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw PeerError(PeerErrorKind::crashed, std::string("poll: ") + std::strerror(errno));
    }
    const ssize_t n = ::write(write_fd_, p + sent, len - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE)
        throw PeerError(PeerErrorKind::crashed, "peer closed the connection");
      throw PeerError(PeerErrorKind::crashed, std::string("write: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(n);
  }
}

bool FdStream::wait_readable() {
  pollfd pfd{read_fd_, POLLIN, 0};
  for (;;) {
    const int pr = ::poll(&pfd, 1, timeout_ms_);
    if (pr < 0 && errno == EINTR) continue;
    return pr > 0;
  }
}

void write_request(FdStream& io, uint8_t opcode, const WireTensor* tensor) {
  write_frame(io, opcode, tensor);
}

void write_response(FdStream& io, uint8_t status, const WireTensor* tensor) {
  write_frame(io, status, status == kStatusOk ? tensor : nullptr);
}

bool read_request(FdStream& io, Request* out) {
  uint8_t head[5];
  // Peek-free EOF detection: read the first byte by itself; EOF here means
  // the client is done, EOF anywhere later is a broken frame.
  try {
    io.read_exact(head, 1);
  } catch (const PeerError& e) {
    if (e.kind() == PeerErrorKind::crashed) return false;
    throw;
  }
  io.read_exact(head + 1, 4);
  if (std::memcmp(head, kMagic, 4) != 0)
    throw PeerError(PeerErrorKind::protocol, "bad magic in request");
  out->opcode = head[4];
  out->tensor = read_tensor_body(io);
  return true;
}

uint8_t read_response(FdStream& io, WireTensor* tensor) {
  uint8_t head[5];
  io.read_exact(head, 5);
  if (std::memcmp(head, kMagic, 4) != 0)
    throw PeerError(PeerErrorKind::protocol, "bad magic in response");
  const uint8_t status = head[4];
  WireTensor t = read_tensor_body(io);
  if (status == kStatusOk && tensor != nullptr) *tensor = std::move(t);
  return status;
}

void serve_restorer(int in_fd, int out_fd,
                    const std::function<WireTensor(const WireTensor&)>& fn) {
  // A serving loop should not die while waiting for a slow client, so the
  // deadline is effectively disabled on this side.
  FdStream io(in_fd, out_fd, -1);
  Request req;
  while (read_request(io, &req)) {
    if (req.opcode == kOpcodePing) {
      write_response(io, kStatusOk, nullptr);
      continue;
    }
    if (req.opcode != kOpcodeRestore) {
      write_response(io, kStatusError, nullptr);
      continue;
    }
    try {
      const WireTensor out = fn(req.tensor);
      write_response(io, kStatusOk, &out);
    } catch (const std::exception&) {
      write_response(io, kStatusError, nullptr);
    }
  }
}

}  // namespace drp
