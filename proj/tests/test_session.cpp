#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <random>
#include <thread>

#include "tdf/session.hpp"
#include "tdf/util.hpp"

using namespace tdf;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

struct MockConfig {
    std::string version = kProtocolVersion;
    int64_t action_delay_ms = 0;
    bool close_after_handshake = false;
};

// Speaks the agent's half of the protocol over one transport endpoint.
// Files live in an in-memory map keyed by guest path.
void run_mock_agent(FrameTransport* t, MockConfig cfg) {
    std::map<std::string, std::string> files;
    std::map<std::string, std::string> staging;
    while (true) {
        auto rr = t->recv_frame(10000ms);
        if (rr.state != RecvResult::State::frame) return;
        auto decoded = decode_frame(rr.frame);
        auto* frame = std::get_if<Frame>(&decoded);
        if (!frame) return;
        auto* req = std::get_if<Request>(frame);
        if (!req) return;

        Response resp;
        resp.id = req->id;
        resp.status = ResponseStatus::ok;
        resp.agent_clock = format_rfc3339_ms(now_utc());
        switch (req->kind) {
            case RequestKind::handshake: {
                Handshake h;
                h.protocol_version = cfg.version;
                h.capabilities = {"gui", "file_transfer"};
                h.registry_digest = "d1";
                resp.payload = handshake_payload(h);
                t->send_frame(encode(resp));
                if (cfg.close_after_handshake) {
                    t->close();
                    return;
                }
                continue;
            }
            case RequestKind::ping:
                resp.payload = nullptr;
                break;
            case RequestKind::action:
                if (cfg.action_delay_ms > 0)
                    std::this_thread::sleep_for(std::chrono::milliseconds(cfg.action_delay_ms));
                resp.payload = Value{{"exit_code", 0}};
                break;
            case RequestKind::test:
                resp.status = ResponseStatus::test_pass;
                resp.payload = nullptr;
                break;
            case RequestKind::push_file: {
                std::string path = req->payload["path"];
                auto data = base64_decode(req->payload["data"].get<std::string>());
                uint64_t offset = req->payload["offset"];
                auto& buf = staging[path];
                if (!data || offset != buf.size()) {
                    resp = make_error_response(req->id, "bad_chunk", "offset does not continue the stream");
                    break;
                }
                buf += *data;
                if (req->payload["last"].get<bool>()) {
                    if (sha256_hex(buf) != req->payload["sha256"].get<std::string>()) {
                        resp = make_error_response(req->id, "hash_mismatch", "assembled content hash differs");
                        staging.erase(path);
                        break;
                    }
                    files[path] = std::move(buf);
                    staging.erase(path);
                }
                resp.payload = nullptr;
                break;
            }
            case RequestKind::fetch_file: {
                std::string path = req->payload["path"];
                auto it = files.find(path);
                if (it == files.end()) {
                    resp = make_error_response(req->id, "not_found", "no such guest file " + path);
                    break;
                }
                uint64_t offset = req->payload["offset"];
                uint64_t n = offset >= it->second.size()
                                 ? 0
                                 : std::min<uint64_t>(kFileChunkBytes, it->second.size() - offset);
                resp.payload = Value{{"data", base64_encode(std::string_view(it->second).substr(offset, n))},
                                     {"eof", offset + n == it->second.size()}};
                if (resp.payload["eof"].get<bool>()) {
                    resp.payload["sha256"] = sha256_hex(it->second);
                    resp.payload["bytes"] = it->second.size();
                }
                break;
            }
            case RequestKind::shutdown:
                resp.payload = nullptr;
                t->send_frame(encode(resp));
                return;
        }
        if (!t->send_frame(encode(resp))) return;
    }
}

struct Harness {
    std::unique_ptr<FrameTransport> host_end;
    std::thread agent;

    explicit Harness(MockConfig cfg = {}) {
        auto [a, b] = make_memory_transport_pair();
        host_end = std::move(a);
        FrameTransport* guest_end = b.release();
        agent = std::thread([guest_end, cfg] {
            run_mock_agent(guest_end, cfg);
            delete guest_end;
        });
    }
    ~Harness() {
        if (host_end) host_end->close();
        agent.join();
    }
};

Handshake host_hello() {
    Handshake h;
    h.protocol_version = kProtocolVersion;
    h.capabilities = {};
    h.registry_digest = "d1";
    return h;
}

}  // namespace

TEST_CASE("session establishes via frame 0 and reads peer capabilities") {
    Harness hx;
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto* session = std::get_if<std::unique_ptr<Session>>(&got);
    REQUIRE(session != nullptr);
    CHECK((*session)->peer().protocol_version == kProtocolVersion);
    CHECK((*session)->peer().capabilities.count("gui") == 1);
    CHECK((*session)->peer().registry_digest == "d1");
    (*session)->shutdown();
}

TEST_CASE("handshake refuses a major version mismatch before any request") {
    MockConfig cfg;
    cfg.version = "2.0.0";
    Harness hx(cfg);
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto* err = std::get_if<std::string>(&got);
    REQUIRE(err != nullptr);
    CHECK(err->find("version mismatch") != std::string::npos);
}

TEST_CASE("responses echo request ids in order") {
    Harness hx;
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto& session = std::get<std::unique_ptr<Session>>(got);

    for (int i = 0; i < 3; ++i) {
        Response r = session->call(RequestKind::ping, nullptr);
        CHECK(r.status == ResponseStatus::ok);
        CHECK(r.id == i + 1);
    }
    CHECK(session->sent_ids() == std::vector<int64_t>{1, 2, 3});
    CHECK(session->received_ids() == std::vector<int64_t>{1, 2, 3});
    session->shutdown();
}

TEST_CASE("deadline expiry synthesizes an error and poisons the session") {
    MockConfig cfg;
    cfg.action_delay_ms = 300;
    Harness hx(cfg);
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto& session = std::get<std::unique_ptr<Session>>(got);

    auto t0 = std::chrono::steady_clock::now();
    Response r = session->call(RequestKind::action, Value{{"kind", "wait"}}, 20);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    CHECK(r.status == ResponseStatus::error);
    CHECK(r.payload["error_class"] == "deadline_exceeded");
    // The host gave up at the deadline instead of waiting out the action.
    CHECK(elapsed.count() < 250);
    CHECK(session->poisoned());

    Response refused = session->call(RequestKind::ping, nullptr);
    CHECK(refused.status == ResponseStatus::error);
    CHECK(refused.payload["error_class"] == "session_poisoned");
    // The refused request never reached the wire.
    CHECK(session->sent_ids() == std::vector<int64_t>{1});
}

TEST_CASE("transport loss mid-request synthesizes connection_lost") {
    MockConfig cfg;
    cfg.close_after_handshake = true;
    Harness hx(cfg);
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto& session = std::get<std::unique_ptr<Session>>(got);

    Response r = session->call(RequestKind::ping, nullptr);
    CHECK(r.status == ResponseStatus::error);
    CHECK(r.payload["error_class"] == "connection_lost");
    CHECK(session->poisoned());
}

TEST_CASE("file push and fetch round-trip byte-identical content") {
    Harness hx;
    auto got = Session::establish(std::move(hx.host_end), host_hello());
    auto& session = std::get<std::unique_ptr<Session>>(got);

    auto dir = make_temp_dir("tdf_session_");
    std::mt19937 rng(77);
    std::string content(2 * 1024 * 1024 + 513, '\0');
    for (auto& c : content) c = static_cast<char>(rng() & 0xff);
    REQUIRE(write_file(dir / "src.bin", content));

    CHECK_FALSE(session->push_file(dir / "src.bin", "/guest/data.bin").has_value());
    CHECK_FALSE(session->fetch_file("/guest/data.bin", dir / "back.bin").has_value());
    auto back = read_file(dir / "back.bin");
    REQUIRE(back.has_value());
    CHECK(*back == content);

    // Zero-byte files round-trip too.
    REQUIRE(write_file(dir / "empty.bin", ""));
    CHECK_FALSE(session->push_file(dir / "empty.bin", "/guest/empty").has_value());
    CHECK_FALSE(session->fetch_file("/guest/empty", dir / "empty_back").has_value());
    CHECK(read_file(dir / "empty_back") == std::string());

    auto missing = session->fetch_file("/guest/never", dir / "nope");
    REQUIRE(missing.has_value());
    CHECK(missing->find("not_found") != std::string::npos);

    session->shutdown();
    std::error_code ec;
    fs::remove_all(dir, ec);
}

TEST_CASE("session runs over tcp as well as memory transports") {
    auto bound = TcpListener::bind("127.0.0.1", 0);
    auto& listener = std::get<std::unique_ptr<TcpListener>>(bound);

    std::thread agent([&] {
        auto conn = listener->accept(5000ms);
        REQUIRE(conn != nullptr);
        run_mock_agent(conn.get(), {});
    });

    auto dialed = tcp_connect("127.0.0.1", listener->port(), 2000ms);
    auto& transport = std::get<std::unique_ptr<FrameTransport>>(dialed);
    auto got = Session::establish(std::move(transport), host_hello());
    auto* session = std::get_if<std::unique_ptr<Session>>(&got);
    REQUIRE(session != nullptr);
    Response r = (*session)->call(RequestKind::ping, nullptr);
    CHECK(r.status == ResponseStatus::ok);
    (*session)->shutdown();
    agent.join();
}
