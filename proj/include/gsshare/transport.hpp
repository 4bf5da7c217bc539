#pragma once

// Byte-stream bindings for Message frames: POSIX TCP and an in-process duplex pipe.

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "gsshare/protocol.hpp"

namespace gsshare {

// A reliable, ordered byte stream. Failures throw Error(Transport), which callers may retry.
class Stream {
 public:
  virtual ~Stream() = default;
  virtual void write_all(std::span<const uint8_t> data) = 0;
  // Fills `out` completely; throws Transport on a closed peer.
  virtual void read_exact(std::span<uint8_t> out) = 0;
  virtual void close() = 0;
};

void send_message(Stream& s, const Message& m);
// Reads one frame, validating the length prefix before reading the body.
Message receive_message(Stream& s);

struct DuplexPair {
  std::unique_ptr<Stream> a;
  std::unique_ptr<Stream> b;
};

// Two connected in-memory endpoints; bytes written to one are read from the other.
DuplexPair make_duplex_pair();

class TcpListener {
 public:
  // Port 0 binds an ephemeral port; see port().
  explicit TcpListener(uint16_t port, const std::string& host = "127.0.0.1");
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }
  // Blocks until a client connects; throws Transport once shutdown() has been called.
  std::unique_ptr<Stream> accept();
  void shutdown();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

std::unique_ptr<Stream> tcp_connect(const std::string& host, uint16_t port);

// Answers requests on one connection until the peer closes. A framing violation is answered
// with ERROR(Protocol) and ends the connection.
void serve_connection(const ServerState& server, Stream& s);

// Accepts clients and serves each on its own thread until `stop` is set and the listener is
// shut down, or `max_clients` connections have been served (0 = unlimited).
void serve_loop(const ServerState& server, TcpListener& listener, const std::atomic<bool>& stop,
                size_t max_clients = 0);

struct FetchResult {
  int full_messages = 0;
  int increment_messages = 0;
  size_t bytes_received = 0;
};

// Pulls updates until ACK, applying each to `client`. Server errors are rethrown with their code.
FetchResult fetch(Stream& s, ClientState& client);

}  // namespace gsshare
