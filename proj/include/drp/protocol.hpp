#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace drp {

enum class PeerErrorKind {
  handshake,       // ping exchange failed at startup
  timeout,         // peer alive but silent past the deadline
  shape_mismatch,  // reply tensor has the wrong shape
  crashed,         // connection closed or process died mid-exchange
  protocol,        // malformed frame or nonzero peer status
};

class PeerError : public std::runtime_error {
 public:
  PeerError(PeerErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  PeerErrorKind kind() const { return kind_; }

 private:
  PeerErrorKind kind_;
};

const char* peer_error_kind_name(PeerErrorKind kind);

// Wire format (all integers little-endian):
//   request  = "DRP1" | opcode u8 | ndim u8 | dims u32 x ndim | payload f32 x prod(dims)
//   response = "DRP1" | status u8 | ndim u8 | dims u32 x ndim | payload f32 x prod(dims)
// opcode 0 is a ping; a ping request and its response carry ndim = 0 and no
// payload. A response with nonzero status likewise carries no tensor.
inline constexpr uint8_t kOpcodePing = 0;
inline constexpr uint8_t kOpcodeRestore = 1;
inline constexpr uint8_t kStatusOk = 0;
inline constexpr uint8_t kStatusError = 1;

struct WireTensor {
  std::vector<uint32_t> dims;
  std::vector<float> values;

  uint64_t element_count() const;
};

/// Blocking reads/writes over a pair of file descriptors with a poll-based
/// deadline per call. Owns nothing; fds are closed by the caller.
class FdStream {
 public:
  FdStream(int read_fd, int write_fd, int timeout_ms)
      : read_fd_(read_fd), write_fd_(write_fd), timeout_ms_(timeout_ms) {}

  void read_exact(void* buf, size_t len);
  void write_all(const void* buf, size_t len);

  /// True if a read of one byte would not block; false on timeout.
  bool wait_readable();

 private:
  int read_fd_;
  int write_fd_;
  int timeout_ms_;
};

void write_request(FdStream& io, uint8_t opcode, const WireTensor* tensor);
void write_response(FdStream& io, uint8_t status, const WireTensor* tensor);

struct Request {
  uint8_t opcode = 0;
  WireTensor tensor;
};

/// Server side: blocks for the next request. Returns false on clean EOF
/// before any byte of a frame; throws on malformed input.
bool read_request(FdStream& io, Request* out);

/// Client side: reads a response frame; returns the status byte and fills
/// the tensor only when status is 0.
uint8_t read_response(FdStream& io, WireTensor* tensor);

/// Answers pings and maps restore payloads through fn until EOF. A throwing
/// fn produces an error-status response and the loop continues. Used by the
/// echo subcommand and by test peers.
void serve_restorer(int in_fd, int out_fd,
                    const std::function<WireTensor(const WireTensor&)>& fn);

}  // namespace drp
