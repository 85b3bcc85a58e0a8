#pragma once

#include <memory>
#include <string>
#include <vector>

#include "drp/priors.hpp"
#include "drp/protocol.hpp"

namespace drp {

/// Where the peer lives: either a command line to spawn (speaks the wire
/// protocol on stdin/stdout) or "tcp:host:port" for an already-running
/// server. Exactly one of the two must be set.
struct PeerEndpoint {
  std::vector<std::string> command;
  std::string address;
};

inline constexpr int kDefaultPeerTimeoutMs = 10000;

/// Out-of-process restoration operator. Construction spawns/connects and
/// performs a ping handshake; restore() serializes the input as f32,
/// round-trips one request, and checks the reply shape. One in-flight
/// request at a time per instance.
class ExternalRestorer : public RestorationOperator {
 public:
  ExternalRestorer(const PeerEndpoint& endpoint, Shape input, Shape output,
                   int timeout_ms = kDefaultPeerTimeoutMs);
  ~ExternalRestorer() override;

  ExternalRestorer(const ExternalRestorer&) = delete;
  ExternalRestorer& operator=(const ExternalRestorer&) = delete;

  Shape input_shape() const override { return input_; }
  Shape output_shape() const override { return output_; }
  Image restore(const Image& s) override;

 private:
  void shutdown() noexcept;

  Shape input_;
  Shape output_;
  int read_fd_ = -1;
  int write_fd_ = -1;
  pid_t child_ = -1;
  std::unique_ptr<FdStream> io_;
};

std::unique_ptr<RestorationOperator> external_restorer(
    const PeerEndpoint& endpoint, Shape input, Shape output,
    int timeout_ms = kDefaultPeerTimeoutMs);

}  // namespace drp
