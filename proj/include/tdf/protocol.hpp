#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>

#include "tdf/template.hpp"

namespace tdf {

inline constexpr const char* kProtocolVersion = "1.0.0";
inline constexpr int kDefaultAgentPort = 48620;
// File transfer moves base64 payloads of at most this many raw bytes.
inline constexpr size_t kFileChunkBytes = 1 << 20;

enum class RequestKind { handshake, action, test, push_file, fetch_file, ping, shutdown };

const char* to_string(RequestKind k);
std::optional<RequestKind> request_kind_from_string(std::string_view s);

enum class ResponseStatus { ok, test_pass, test_fail, error };

const char* to_string(ResponseStatus s);
std::optional<ResponseStatus> response_status_from_string(std::string_view s);

struct Request {
    int64_t id = 0;
    RequestKind kind = RequestKind::ping;
    Value payload;  // null when the kind needs none
    std::optional<int64_t> deadline_ms;
};

struct Response {
    int64_t id = 0;
    ResponseStatus status = ResponseStatus::ok;
    Value payload;
    std::string agent_clock;  // RFC 3339, informational
    int64_t duration_ms = 0;
};

// Exchanged as the payload of frame 0 in each direction.
struct Handshake {
    std::string protocol_version = kProtocolVersion;
    std::set<std::string> capabilities;  // subset of {gui, sandbox, file_transfer}
    std::string registry_digest;
};

struct ProtocolError {
    std::string field;  // offending field, or "frame"
    std::string message;
};

std::string encode(const Request& r);
std::string encode(const Response& r);

using Frame = std::variant<Request, Response>;

// Unknown extra fields are ignored; unknown `kind`/`status` values and type
// violations on required fields are errors.
std::variant<Frame, ProtocolError> decode_frame(std::string_view text);

Value handshake_payload(const Handshake& h);
std::optional<Handshake> parse_handshake(const Value& payload);

// Versions interoperate exactly when their major components match.
bool versions_compatible(std::string_view a, std::string_view b);

// Synthesized error responses carry payload {error_class, message}.
Response make_error_response(int64_t id, const std::string& error_class, const std::string& message);

}  // namespace tdf
