#include "gsshare/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "gsshare/bytes.hpp"

namespace gsshare {

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw Error(ErrorCode::Transport, what + ": " + std::strerror(errno));
}

class FdStream : public Stream {
 public:
  explicit FdStream(int fd) : fd_(fd) {}
  ~FdStream() override { close(); }

  void write_all(std::span<const uint8_t> data) override {
    size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        sys_fail("send");
      }
      off += static_cast<size_t>(n);
    }
  }

  void read_exact(std::span<uint8_t> out) override {
    size_t off = 0;
    while (off < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
      if (n == 0) throw Error(ErrorCode::Transport, "connection closed by peer");
      if (n < 0) {
        if (errno == EINTR) continue;
        sys_fail("recv");
      }
      off += static_cast<size_t>(n);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

struct Pipe {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<uint8_t> bytes;
  bool closed = false;
};

class PipeStream : public Stream {
 public:
  PipeStream(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out) : in_(std::move(in)), out_(std::move(out)) {}
  ~PipeStream() override { close(); }

  void write_all(std::span<const uint8_t> data) override {
    std::lock_guard lock(out_->mutex);
    if (out_->closed) throw Error(ErrorCode::Transport, "pipe closed");
    out_->bytes.insert(out_->bytes.end(), data.begin(), data.end());
    out_->cv.notify_all();
  }

  void read_exact(std::span<uint8_t> out) override {
    std::unique_lock lock(in_->mutex);
    size_t off = 0;
    while (off < out.size()) {
      in_->cv.wait(lock, [&] { return !in_->bytes.empty() || in_->closed; });
      if (in_->bytes.empty()) throw Error(ErrorCode::Transport, "connection closed by peer");
      while (off < out.size() && !in_->bytes.empty()) {
        out[off++] = in_->bytes.front();
        in_->bytes.pop_front();
      }
    }
  }

  void close() override {
    for (auto* p : {in_.get(), out_.get()}) {
      std::lock_guard lock(p->mutex);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

}  // namespace

void send_message(Stream& s, const Message& m) { s.write_all(encode_message(m)); }

Message receive_message(Stream& s) {
  uint8_t prefix[4];
  s.read_exact(prefix);
  const uint32_t length = ByteReader(prefix).u32();
  check_frame_length(length);
  std::vector<uint8_t> frame(4 + static_cast<size_t>(length));
  std::memcpy(frame.data(), prefix, 4);
  s.read_exact(std::span(frame).subspan(4));
  return decode_message(frame);
}

DuplexPair make_duplex_pair() {
  auto ab = std::make_shared<Pipe>(), ba = std::make_shared<Pipe>();
  return {std::make_unique<PipeStream>(ba, ab), std::make_unique<PipeStream>(ab, ba)};
}

TcpListener::TcpListener(uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw Error(ErrorCode::InvalidArgument, "bad listen address " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd_, 16) < 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    sys_fail("bind/listen");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Stream> TcpListener::accept() {
  for (;;) {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c >= 0) {
      const int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return std::make_unique<FdStream>(c);
    }
    if (errno != EINTR) sys_fail("accept");
  }
}

void TcpListener::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::unique_ptr<Stream> tcp_connect(const std::string& host, uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) sys_fail("socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(ErrorCode::InvalidArgument, "bad address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int err = errno;
    ::close(fd);
    errno = err;
    sys_fail("connect to " + host + ":" + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<FdStream>(fd);
}

void serve_connection(const ServerState& server, Stream& s) {
  for (;;) {
    Message request;
    try {
      request = receive_message(s);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Protocol || e.code() == ErrorCode::Truncated) {
        try {
          send_message(s, make_error(ErrorCode::Protocol, e.what()));
        } catch (const Error&) {
        }
      }
      s.close();
      return;
    }
    try {
      send_message(s, server.handle(request));
    } catch (const Error&) {
      s.close();
      return;
    }
  }
}

void serve_loop(const ServerState& server, TcpListener& listener, const std::atomic<bool>& stop,
                size_t max_clients) {
  std::vector<std::thread> workers;
  size_t served = 0;
  while (!stop.load() && (max_clients == 0 || served < max_clients)) {
    std::unique_ptr<Stream> conn;
    try {
      conn = listener.accept();
    } catch (const Error&) {
      if (stop.load()) break;
      throw;
    }
    ++served;
    workers.emplace_back([&server, c = std::move(conn)]() mutable { serve_connection(server, *c); });
  }
  for (auto& t : workers) t.join();
}

FetchResult fetch(Stream& s, ClientState& client) {
  FetchResult res;
  for (;;) {
    Message hello;
    hello.type = MsgType::Hello;
    hello.stage = client.stage().value_or(kNoStage);
    send_message(s, hello);
    const Message reply = receive_message(s);
    res.bytes_received += reply.payload.size() + 4 + kFrameHeaderBytes;
    switch (reply.type) {
      case MsgType::MapFull:
        client_apply(client, reply);
        ++res.full_messages;
        break;
      case MsgType::MapInc:
        client_apply(client, reply);
        ++res.increment_messages;
        break;
      case MsgType::Ack:
        return res;
      case MsgType::Error:
        raise_error(reply);
      default:
        throw Error(ErrorCode::Protocol, "unexpected reply type");
    }
  }
}

}  // namespace gsshare
