#include "tdf/protocol.hpp"

#include <cstdlib>

#include "tdf/util.hpp"

namespace tdf {

const char* to_string(RequestKind k) {
    switch (k) {
        case RequestKind::handshake: return "handshake";
        case RequestKind::action: return "action";
        case RequestKind::test: return "test";
        case RequestKind::push_file: return "push_file";
        case RequestKind::fetch_file: return "fetch_file";
        case RequestKind::ping: return "ping";
        case RequestKind::shutdown: return "shutdown";
    }
    return "ping";
}

std::optional<RequestKind> request_kind_from_string(std::string_view s) {
    if (s == "handshake") return RequestKind::handshake;
    if (s == "action") return RequestKind::action;
    if (s == "test") return RequestKind::test;
    if (s == "push_file") return RequestKind::push_file;
    if (s == "fetch_file") return RequestKind::fetch_file;
    if (s == "ping") return RequestKind::ping;
    if (s == "shutdown") return RequestKind::shutdown;
    return std::nullopt;
}

const char* to_string(ResponseStatus s) {
    switch (s) {
        case ResponseStatus::ok: return "ok";
        case ResponseStatus::test_pass: return "test_pass";
        case ResponseStatus::test_fail: return "test_fail";
        case ResponseStatus::error: return "error";
    }
    return "error";
}

std::optional<ResponseStatus> response_status_from_string(std::string_view s) {
    if (s == "ok") return ResponseStatus::ok;
    if (s == "test_pass") return ResponseStatus::test_pass;
    if (s == "test_fail") return ResponseStatus::test_fail;
    if (s == "error") return ResponseStatus::error;
    return std::nullopt;
}

// nlohmann::json serializes object keys in sorted order, which doubles as the
// canonical mode required of frames; dump() escapes newlines, so a frame is
// always a single line.
std::string encode(const Request& r) {
    Value v;
    v["id"] = r.id;
    v["kind"] = to_string(r.kind);
    v["payload"] = r.payload;
    if (r.deadline_ms) v["deadline_ms"] = *r.deadline_ms;
    return v.dump();
}

std::string encode(const Response& r) {
    Value v;
    v["id"] = r.id;
    v["status"] = to_string(r.status);
    v["payload"] = r.payload;
    v["agent_clock"] = r.agent_clock;
    v["duration_ms"] = r.duration_ms;
    return v.dump();
}

std::variant<Frame, ProtocolError> decode_frame(std::string_view text) {
    Value v = Value::parse(text, nullptr, false);
    if (v.is_discarded()) return ProtocolError{"frame", "frame is not valid JSON"};
    if (!v.is_object()) return ProtocolError{"frame", "frame must be a JSON object"};

    if (!v.contains("id")) return ProtocolError{"id", "missing required field 'id'"};
    if (!v["id"].is_number_integer()) return ProtocolError{"id", "'id' must be an integer"};
    int64_t id = v["id"].get<int64_t>();

    bool has_kind = v.contains("kind");
    bool has_status = v.contains("status");
    if (has_kind == has_status) {
        return ProtocolError{"frame", "frame must carry exactly one of 'kind' (request) or 'status' (response)"};
    }

    if (has_kind) {
        if (!v["kind"].is_string()) return ProtocolError{"kind", "'kind' must be a string"};
        auto kind = request_kind_from_string(v["kind"].get<std::string>());
        if (!kind) return ProtocolError{"kind", "unknown request kind '" + v["kind"].get<std::string>() + "'"};
        if (!v.contains("payload")) return ProtocolError{"payload", "missing required field 'payload'"};
        Request r;
        r.id = id;
        r.kind = *kind;
        r.payload = v["payload"];
        if (v.contains("deadline_ms")) {
            if (!v["deadline_ms"].is_number_integer() || v["deadline_ms"].get<int64_t>() < 0) {
                return ProtocolError{"deadline_ms", "'deadline_ms' must be a non-negative integer"};
            }
            r.deadline_ms = v["deadline_ms"].get<int64_t>();
        }
        return Frame{std::move(r)};
    }

    if (!v["status"].is_string()) return ProtocolError{"status", "'status' must be a string"};
    auto status = response_status_from_string(v["status"].get<std::string>());
    if (!status) return ProtocolError{"status", "unknown response status '" + v["status"].get<std::string>() + "'"};
    if (!v.contains("payload")) return ProtocolError{"payload", "missing required field 'payload'"};
    if (!v.contains("duration_ms") || !v["duration_ms"].is_number_integer()) {
        return ProtocolError{"duration_ms", "missing or non-integer 'duration_ms'"};
    }
    Response r;
    r.id = id;
    r.status = *status;
    r.payload = v["payload"];
    r.duration_ms = v["duration_ms"].get<int64_t>();
    if (v.contains("agent_clock") && v["agent_clock"].is_string()) {
        r.agent_clock = v["agent_clock"].get<std::string>();
    }
    return Frame{std::move(r)};
}

Value handshake_payload(const Handshake& h) {
    Value v;
    v["protocol_version"] = h.protocol_version;
    v["agent_capabilities"] = h.capabilities;
    v["registry_digest"] = h.registry_digest;
    return v;
}

std::optional<Handshake> parse_handshake(const Value& payload) {
    if (!payload.is_object()) return std::nullopt;
    if (!payload.contains("protocol_version") || !payload["protocol_version"].is_string()) return std::nullopt;
    Handshake h;
    h.protocol_version = payload["protocol_version"].get<std::string>();
    if (payload.contains("agent_capabilities")) {
        if (!payload["agent_capabilities"].is_array()) return std::nullopt;
        for (const auto& c : payload["agent_capabilities"]) {
            if (!c.is_string()) return std::nullopt;
            h.capabilities.insert(c.get<std::string>());
        }
    }
    h.registry_digest = payload.value("registry_digest", "");
    return h;
}

bool versions_compatible(std::string_view a, std::string_view b) {
    auto major = [](std::string_view v) -> long {
        return std::strtol(std::string(v.substr(0, v.find('.'))).c_str(), nullptr, 10);
    };
    return major(a) == major(b);
}

Response make_error_response(int64_t id, const std::string& error_class, const std::string& message) {
    Response r;
    r.id = id;
    r.status = ResponseStatus::error;
    r.payload = Value{{"error_class", error_class}, {"message", message}};
    r.agent_clock = format_rfc3339_ms(now_utc());
    return r;
}

}  // namespace tdf
