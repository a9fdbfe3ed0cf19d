#include "tdf/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace tdf {

namespace {

struct Channel {
    std::mutex m;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool closed = false;
};

class MemoryTransport final : public FrameTransport {
public:
    MemoryTransport(std::shared_ptr<Channel> rx, std::shared_ptr<Channel> tx)
        : rx_(std::move(rx)), tx_(std::move(tx)) {}

    ~MemoryTransport() override { close(); }

    bool send_frame(std::string_view frame) override {
        std::lock_guard lock(tx_->m);
        if (tx_->closed) return false;
        tx_->queue.emplace_back(frame);
        tx_->cv.notify_one();
        return true;
    }

    RecvResult recv_frame(std::optional<std::chrono::milliseconds> timeout) override {
        std::unique_lock lock(rx_->m);
        auto ready = [&] { return !rx_->queue.empty() || rx_->closed; };
        if (timeout) {
            if (!rx_->cv.wait_for(lock, *timeout, ready)) return {RecvResult::State::timeout, {}};
        } else {
            rx_->cv.wait(lock, ready);
        }
        if (!rx_->queue.empty()) {
            RecvResult r{RecvResult::State::frame, std::move(rx_->queue.front())};
            rx_->queue.pop_front();
            return r;
        }
        return {RecvResult::State::closed, {}};
    }

    void close() override {
        for (auto& ch : {rx_, tx_}) {
            std::lock_guard lock(ch->m);
            ch->closed = true;
            ch->cv.notify_all();
        }
    }

private:
    std::shared_ptr<Channel> rx_;
    std::shared_ptr<Channel> tx_;
};

class TcpTransport final : public FrameTransport {
public:
    explicit TcpTransport(int fd) : fd_(fd) {}
    ~TcpTransport() override { close(); }

    bool send_frame(std::string_view frame) override {
        std::string line(frame);
        line.push_back('\n');
        size_t off = 0;
        while (off < line.size()) {
            ssize_t n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                return false;
            }
            off += static_cast<size_t>(n);
        }
        return true;
    }

    RecvResult recv_frame(std::optional<std::chrono::milliseconds> timeout) override {
        using clock = std::chrono::steady_clock;
        auto deadline = timeout ? std::optional(clock::now() + *timeout) : std::nullopt;
        while (true) {
            auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                RecvResult r{RecvResult::State::frame, buffer_.substr(0, nl)};
                buffer_.erase(0, nl + 1);
                return r;
            }
            int wait_ms = -1;
            if (deadline) {
                auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - clock::now());
                if (left.count() <= 0) return {RecvResult::State::timeout, {}};
                wait_ms = static_cast<int>(left.count());
            }
            pollfd pf{fd_, POLLIN, 0};
            int rc = ::poll(&pf, 1, wait_ms);
            if (rc == 0) return {RecvResult::State::timeout, {}};
            if (rc < 0) {
                if (errno == EINTR) continue;
                return {RecvResult::State::closed, {}};
            }
            char buf[65536];
            ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
            if (n <= 0) {
                if (n < 0 && errno == EINTR) continue;
                // Peer is gone; a buffered unterminated fragment is discarded.
                return {RecvResult::State::closed, {}};
            }
            buffer_.append(buf, static_cast<size_t>(n));
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
    int fd_ = -1;
    std::string buffer_;
};

bool resolve_addr(const std::string& host, int port, sockaddr_in& out) {
    std::memset(&out, 0, sizeof(out));
    out.sin_family = AF_INET;
    out.sin_port = htons(static_cast<uint16_t>(port));
    if (inet_pton(AF_INET, host.c_str(), &out.sin_addr) == 1) return true;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) return false;
    out.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return true;
}

}  // namespace

std::pair<std::unique_ptr<FrameTransport>, std::unique_ptr<FrameTransport>> make_memory_transport_pair() {
    auto a = std::make_shared<Channel>();
    auto b = std::make_shared<Channel>();
    return {std::make_unique<MemoryTransport>(a, b), std::make_unique<MemoryTransport>(b, a)};
}

std::variant<std::unique_ptr<FrameTransport>, std::string> tcp_connect(const std::string& host, int port,
                                                                       std::chrono::milliseconds timeout) {
    sockaddr_in addr{};
    if (!resolve_addr(host, port, addr)) return "cannot resolve host '" + host + "'";
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return std::string("socket: ") + std::strerror(errno);

    int flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (rc < 0 && errno != EINPROGRESS) {
        std::string err = std::strerror(errno);
        ::close(fd);
        return "connect: " + err;
    }
    if (rc < 0) {
        pollfd pf{fd, POLLOUT, 0};
        rc = ::poll(&pf, 1, static_cast<int>(timeout.count()));
        int soerr = 0;
        socklen_t len = sizeof(soerr);
        if (rc <= 0 || getsockopt(fd, SOL_SOCKET, SO_ERROR, &soerr, &len) != 0 || soerr != 0) {
            std::string err = rc == 0 ? "connection timed out" : std::strerror(soerr ? soerr : errno);
            ::close(fd);
            return "connect: " + err;
        }
    }
    fcntl(fd, F_SETFL, flags);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::unique_ptr<FrameTransport>(std::make_unique<TcpTransport>(fd));
}

std::variant<std::unique_ptr<TcpListener>, std::string> TcpListener::bind(const std::string& host, int port) {
    sockaddr_in addr{};
    if (!resolve_addr(host, port, addr)) return "cannot resolve host '" + host + "'";
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return std::string("socket: ") + std::strerror(errno);
    int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        std::string err = std::strerror(errno);
        ::close(fd);
        return "bind: " + err;
    }
    if (::listen(fd, 8) != 0) {
        std::string err = std::strerror(errno);
        ::close(fd);
        return "listen: " + err;
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &blen);
    return std::unique_ptr<TcpListener>(new TcpListener(fd, ntohs(bound.sin_port)));
}

TcpListener::~TcpListener() { close(); }

std::unique_ptr<FrameTransport> TcpListener::accept(std::optional<std::chrono::milliseconds> timeout) {
    if (fd_ < 0) return nullptr;
    pollfd pf{fd_, POLLIN, 0};
    int wait_ms = timeout ? static_cast<int>(timeout->count()) : -1;
    int rc = ::poll(&pf, 1, wait_ms);
    if (rc <= 0) return nullptr;
    int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) return nullptr;
    int one = 1;
    setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_unique<TcpTransport>(cfd);
}

void TcpListener::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

}  // namespace tdf
