#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace tdf {

struct RecvResult {
    enum class State { frame, timeout, closed };
    State state = State::closed;
    std::string frame;
};

// Ordered, reliable, bidirectional channel of discrete text frames. Frames
// must not contain raw newlines (encoded JSON never does).
class FrameTransport {
public:
    virtual ~FrameTransport() = default;
    // False once the peer is gone.
    virtual bool send_frame(std::string_view frame) = 0;
    // Blocks up to `timeout` (forever if unset).
    virtual RecvResult recv_frame(std::optional<std::chrono::milliseconds> timeout) = 0;
    virtual void close() = 0;
};

// In-process pair of connected endpoints; backs sandbox runs and tests.
std::pair<std::unique_ptr<FrameTransport>, std::unique_ptr<FrameTransport>> make_memory_transport_pair();

// Newline-delimited frames over a TCP stream.
std::variant<std::unique_ptr<FrameTransport>, std::string> tcp_connect(
    const std::string& host, int port, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

class TcpListener {
public:
    // Error text on failure (address in use, bad host, ...).
    static std::variant<std::unique_ptr<TcpListener>, std::string> bind(const std::string& host, int port);
    ~TcpListener();

    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    // The port actually bound (when constructed with port 0).
    int port() const { return port_; }
    std::unique_ptr<FrameTransport> accept(std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    void close();

private:
    TcpListener(int fd, int port) : fd_(fd), port_(port) {}
    int fd_ = -1;
    int port_ = 0;
};

}  // namespace tdf
