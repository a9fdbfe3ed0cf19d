#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "tdf/protocol.hpp"
#include "tdf/transport.hpp"

namespace tdf {

// Host side of one agent connection. Enforces the single-outstanding-request
// discipline and synthesizes error responses for session-level failures;
// their payload error_class is one of deadline_exceeded, connection_lost,
// protocol_violation, session_poisoned. Any synthesized error poisons the
// session: later calls are refused locally and recovery is a new connection.
class Session {
public:
    // Performs the handshake (frame 0 in each direction) and the version
    // gate. Error text on refusal or transport failure.
    static std::variant<std::unique_ptr<Session>, std::string> establish(
        std::unique_ptr<FrameTransport> transport, const Handshake& hello,
        std::chrono::milliseconds handshake_timeout = std::chrono::milliseconds(5000));

    // Sends one request and blocks for its terminal response. deadline_ms
    // bounds the wait; expiry synthesizes deadline_exceeded.
    Response call(RequestKind kind, Value payload, std::optional<int64_t> deadline_ms = std::nullopt);

    // Streams a local file to the guest path in bounded chunks with a hash
    // trailer. nullopt on success, error text otherwise.
    std::optional<std::string> push_file(const std::filesystem::path& local, const std::string& remote_path);
    // Inverse direction; verifies the reported hash before writing `local`.
    std::optional<std::string> fetch_file(const std::string& remote_path, const std::filesystem::path& local);

    // Asks the agent to exit, then closes the transport either way.
    Response shutdown();
    void close();

    bool poisoned() const { return poisoned_; }
    const Handshake& peer() const { return peer_; }

    // Wire trace: request ids in send order, response ids in receive order.
    const std::vector<int64_t>& sent_ids() const { return sent_ids_; }
    const std::vector<int64_t>& received_ids() const { return received_ids_; }

private:
    Session(std::unique_ptr<FrameTransport> transport, Handshake peer)
        : transport_(std::move(transport)), peer_(std::move(peer)) {}

    std::unique_ptr<FrameTransport> transport_;
    Handshake peer_;
    int64_t next_id_ = 1;
    bool poisoned_ = false;
    std::vector<int64_t> sent_ids_;
    std::vector<int64_t> received_ids_;
};

// Human-readable summary of an error response payload.
std::string error_text(const Response& r);

}  // namespace tdf
