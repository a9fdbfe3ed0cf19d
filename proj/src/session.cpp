#include "tdf/session.hpp"

#include <fstream>

#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

std::string error_text(const Response& r) {
    std::string cls = r.payload.is_object() ? r.payload.value("error_class", "error") : "error";
    std::string msg = r.payload.is_object() ? r.payload.value("message", "") : "";
    return msg.empty() ? cls : cls + ": " + msg;
}

std::variant<std::unique_ptr<Session>, std::string> Session::establish(std::unique_ptr<FrameTransport> transport,
                                                                       const Handshake& hello,
                                                                       std::chrono::milliseconds handshake_timeout) {
    Request frame0;
    frame0.id = 0;
    frame0.kind = RequestKind::handshake;
    frame0.payload = handshake_payload(hello);
    if (!transport->send_frame(encode(frame0))) return std::string("handshake send failed: connection lost");

    RecvResult rr = transport->recv_frame(handshake_timeout);
    if (rr.state == RecvResult::State::timeout) return std::string("handshake timed out");
    if (rr.state == RecvResult::State::closed) return std::string("handshake failed: connection lost");

    auto decoded = decode_frame(rr.frame);
    if (auto* perr = std::get_if<ProtocolError>(&decoded))
        return "handshake failed: malformed frame (" + perr->field + ": " + perr->message + ")";
    auto* resp = std::get_if<Response>(&std::get<Frame>(decoded));
    if (!resp || resp->id != 0) return std::string("handshake failed: peer did not answer frame 0");
    if (resp->status == ResponseStatus::error) return "handshake refused: " + error_text(*resp);

    auto peer = parse_handshake(resp->payload);
    if (!peer) return std::string("handshake failed: invalid handshake payload");
    if (!versions_compatible(hello.protocol_version, peer->protocol_version))
        return "protocol version mismatch: host " + hello.protocol_version + ", agent " + peer->protocol_version;

    return std::unique_ptr<Session>(new Session(std::move(transport), std::move(*peer)));
}

Response Session::call(RequestKind kind, Value payload, std::optional<int64_t> deadline_ms) {
    int64_t id = next_id_;
    if (poisoned_) return make_error_response(id, "session_poisoned", "session poisoned by an earlier failure");
    next_id_ += 1;

    Request req;
    req.id = id;
    req.kind = kind;
    req.payload = std::move(payload);
    req.deadline_ms = deadline_ms;

    if (!transport_->send_frame(encode(req))) {
        poisoned_ = true;
        return make_error_response(id, "connection_lost", "transport closed while sending");
    }
    sent_ids_.push_back(id);

    std::optional<std::chrono::milliseconds> wait;
    if (deadline_ms) wait = std::chrono::milliseconds(*deadline_ms);
    RecvResult rr = transport_->recv_frame(wait);
    if (rr.state == RecvResult::State::timeout) {
        poisoned_ = true;
        return make_error_response(id, "deadline_exceeded",
                                   "no response within " + std::to_string(*deadline_ms) + " ms");
    }
    if (rr.state == RecvResult::State::closed) {
        poisoned_ = true;
        return make_error_response(id, "connection_lost", "transport closed while waiting for response");
    }

    auto decoded = decode_frame(rr.frame);
    if (auto* perr = std::get_if<ProtocolError>(&decoded)) {
        poisoned_ = true;
        return make_error_response(id, "protocol_violation", perr->field + ": " + perr->message);
    }
    auto* resp = std::get_if<Response>(&std::get<Frame>(decoded));
    if (!resp) {
        poisoned_ = true;
        return make_error_response(id, "protocol_violation", "peer sent a request mid-session");
    }
    received_ids_.push_back(resp->id);
    if (resp->id != id) {
        poisoned_ = true;
        return make_error_response(id, "protocol_violation",
                                   "response id " + std::to_string(resp->id) + " does not echo request id " +
                                       std::to_string(id));
    }
    return *resp;
}

std::optional<std::string> Session::push_file(const fs::path& local, const std::string& remote_path) {
    std::ifstream in(local, std::ios::binary);
    if (!in) return "cannot open " + local.string();
    auto digest = sha256_file_hex(local);
    if (!digest) return "cannot hash " + local.string();
    std::error_code ec;
    uint64_t size = fs::file_size(local, ec);
    if (ec) return "cannot stat " + local.string();

    uint64_t offset = 0;
    std::string buf(kFileChunkBytes, '\0');
    do {
        uint64_t want = std::min<uint64_t>(kFileChunkBytes, size - offset);
        in.read(buf.data(), static_cast<std::streamsize>(want));
        if (static_cast<uint64_t>(in.gcount()) != want) return "short read on " + local.string();
        bool last = offset + want == size;
        Value payload = {{"path", remote_path},
                         {"offset", offset},
                         {"data", base64_encode(std::string_view(buf.data(), want))},
                         {"last", last}};
        if (last) payload["sha256"] = *digest;
        Response r = call(RequestKind::push_file, std::move(payload));
        if (r.status != ResponseStatus::ok) return error_text(r);
        offset += want;
    } while (offset < size);
    return std::nullopt;
}

std::optional<std::string> Session::fetch_file(const std::string& remote_path, const fs::path& local) {
    std::string content;
    while (true) {
        Response r = call(RequestKind::fetch_file, Value{{"path", remote_path}, {"offset", content.size()}});
        if (r.status != ResponseStatus::ok) return error_text(r);
        if (!r.payload.is_object() || !r.payload.contains("data") || !r.payload.contains("eof"))
            return "malformed fetch_file payload";
        auto chunk = base64_decode(r.payload["data"].get<std::string>());
        if (!chunk) return "fetch_file chunk is not valid base64";
        content += *chunk;
        if (r.payload["eof"].get<bool>()) {
            uint64_t reported = r.payload.value("bytes", uint64_t{0});
            if (reported != content.size())
                return "fetch_file size mismatch: got " + std::to_string(content.size()) + " bytes, agent reported " +
                       std::to_string(reported);
            std::string want = r.payload.value("sha256", "");
            if (sha256_hex(content) != want) return "fetch_file content hash mismatch";
            break;
        }
    }
    if (!atomic_write_file(local, content)) return "cannot write " + local.string();
    return std::nullopt;
}

Response Session::shutdown() {
    Response r = call(RequestKind::shutdown, Value());
    close();
    return r;
}

void Session::close() {
    if (transport_) transport_->close();
}

}  // namespace tdf
