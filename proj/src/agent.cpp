#include "tdf/agent.hpp"

#include <chrono>
#include <fstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kStagingCap = 256ull << 20;

Value region_json(const Region& r) { return Value::array({r.x, r.y, r.w, r.h}); }

std::optional<GuiTarget> target_from_json(const Value& v) {
    if (!v.is_object() || !v.contains("kind") || !v["kind"].is_string()) return std::nullopt;
    GuiTarget t;
    std::string kind = v["kind"];
    if (kind == "text") {
        if (!v.contains("text") || !v["text"].is_string()) return std::nullopt;
        t.kind = GuiTarget::Kind::text;
        t.text = v["text"];
    } else if (kind == "image") {
        if (!v.contains("image") || !v["image"].is_string()) return std::nullopt;
        t.kind = GuiTarget::Kind::image;
        t.image = v["image"];
    } else if (kind == "coordinates") {
        if (!v.contains("x") || !v["x"].is_number_integer() || !v.contains("y") || !v["y"].is_number_integer())
            return std::nullopt;
        t.kind = GuiTarget::Kind::coordinates;
        t.x = v["x"].get<int>();
        t.y = v["y"].get<int>();
    } else {
        return std::nullopt;
    }
    return t;
}

size_t utf8_codepoints(std::string_view s) {
    size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

}  // namespace

Agent::Agent(AgentConfig cfg, AssertionRegistry registry) : cfg_(std::move(cfg)), registry_(std::move(registry)) {
    if (cfg_.screen_model) screen_id_ = cfg_.screen_model->initial;
}

std::string Agent::stamp() {
    int64_t now = unix_millis(now_utc());
    if (now < last_clock_ms_) now = last_clock_ms_;
    last_clock_ms_ = now;
    return format_rfc3339_ms(from_unix_millis(now));
}

std::variant<fs::path, std::string> Agent::confined(const Value& p, const char* field) const {
    if (!p.is_object() || !p.contains(field) || !p[field].is_string())
        return "missing string field '" + std::string(field) + "'";
    fs::path path(p[field].get<std::string>());
    if (!path.is_absolute()) return "path '" + path.string() + "' must be absolute";
    if (cfg_.root.mode == ExecutionRoot::Mode::sandbox && !path_within(cfg_.root.root_path, path))
        return "path '" + path.string() + "' escapes the execution root";
    return path;
}

Agent::ServeResult Agent::serve(FrameTransport& transport) {
    // Frame 0 must be the peer's handshake.
    auto rr = transport.recv_frame(std::nullopt);
    if (rr.state != RecvResult::State::frame) return ServeResult::connection_lost;
    auto decoded = decode_frame(rr.frame);
    auto* frame = std::get_if<Frame>(&decoded);
    auto* req = frame ? std::get_if<Request>(frame) : nullptr;
    if (!req || req->kind != RequestKind::handshake) {
        transport.send_frame(encode(make_error_response(0, "protocol_error", "expected a handshake frame")));
        return ServeResult::handshake_refused;
    }
    auto peer = parse_handshake(req->payload);
    if (!peer) {
        transport.send_frame(encode(make_error_response(req->id, "protocol_error", "invalid handshake payload")));
        return ServeResult::handshake_refused;
    }
    if (!versions_compatible(peer->protocol_version, kProtocolVersion)) {
        transport.send_frame(encode(make_error_response(
            req->id, "version_mismatch",
            "host speaks " + peer->protocol_version + ", agent speaks " + kProtocolVersion)));
        return ServeResult::handshake_refused;
    }

    Handshake mine;
    mine.protocol_version = kProtocolVersion;
    mine.capabilities.insert("file_transfer");
    if (cfg_.root.mode == ExecutionRoot::Mode::sandbox) mine.capabilities.insert("sandbox");
    if (cfg_.screen_model) mine.capabilities.insert("gui");
    mine.registry_digest = registry_.digest();
    Response hello;
    hello.id = req->id;
    hello.status = ResponseStatus::ok;
    hello.payload = handshake_payload(mine);
    hello.agent_clock = stamp();
    if (!transport.send_frame(encode(hello))) return ServeResult::connection_lost;

    staging_.clear();
    while (true) {
        rr = transport.recv_frame(std::nullopt);
        if (rr.state != RecvResult::State::frame) return ServeResult::connection_lost;
        decoded = decode_frame(rr.frame);
        if (auto* perr = std::get_if<ProtocolError>(&decoded)) {
            // Malformed traffic is reported but never kills the session.
            Response err = make_error_response(-1, "protocol_error", perr->field + ": " + perr->message);
            err.agent_clock = stamp();
            if (!transport.send_frame(encode(err))) return ServeResult::connection_lost;
            continue;
        }
        req = std::get_if<Request>(&std::get<Frame>(decoded));
        if (!req) {
            Response err = make_error_response(-1, "protocol_error", "agents accept requests only");
            err.agent_clock = stamp();
            if (!transport.send_frame(encode(err))) return ServeResult::connection_lost;
            continue;
        }

        bool shutdown = false;
        auto t0 = std::chrono::steady_clock::now();
        Response resp;
        try {
            resp = handle(*req, shutdown);
        } catch (const std::exception& e) {
            resp = make_error_response(req->id, "internal", e.what());
        }
        resp.agent_clock = stamp();
        resp.duration_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
        if (!transport.send_frame(encode(resp))) return ServeResult::connection_lost;
        if (shutdown) {
            transport.close();
            return ServeResult::clean_shutdown;
        }
    }
}

Response Agent::handle(const Request& req, bool& shutdown) {
    switch (req.kind) {
        case RequestKind::ping: {
            Response r;
            r.id = req.id;
            r.status = ResponseStatus::ok;
            r.payload = nullptr;
            return r;
        }
        case RequestKind::shutdown: {
            shutdown = true;
            Response r;
            r.id = req.id;
            r.status = ResponseStatus::ok;
            r.payload = nullptr;
            return r;
        }
        case RequestKind::action: return do_action(req.id, req.payload);
        case RequestKind::test: return do_test(req.id, req.payload);
        case RequestKind::push_file: return do_push(req.id, req.payload);
        case RequestKind::fetch_file: return do_fetch(req.id, req.payload);
        case RequestKind::handshake:
            return make_error_response(req.id, "protocol_error", "handshake is frame 0 only");
    }
    return make_error_response(req.id, "protocol_error", "unhandled request kind");
}

Response Agent::do_action(int64_t id, const Value& p) {
    if (!p.is_object() || !p.contains("kind") || !p["kind"].is_string())
        return make_error_response(id, "bad_request", "action payload needs a string 'kind'");
    std::string kind = p["kind"];
    if (kind == "command") return do_command(id, p);
    if (kind == "click" || kind == "type_text" || kind == "scroll" || kind == "drag_drop")
        return do_gui(id, kind, p);
    if (kind == "wait") {
        if (!p.contains("duration_ms") || !p["duration_ms"].is_number_integer() ||
            p["duration_ms"].get<int64_t>() < 0)
            return make_error_response(id, "bad_request", "wait needs a non-negative integer 'duration_ms'");
        int64_t ms = p["duration_ms"].get<int64_t>();
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
        Response r;
        r.id = id;
        r.status = ResponseStatus::ok;
        r.payload = Value{{"slept_ms", ms}};
        return r;
    }
    return make_error_response(id, "bad_request", "unknown action kind '" + kind + "'");
}

Response Agent::do_command(int64_t id, const Value& p) {
    if (!p.contains("command") || !p["command"].is_string())
        return make_error_response(id, "bad_request", "command action needs a string 'command'");
    bool shell = p.value("shell", false);
    std::string command = p["command"];

    ProcessOptions opts;
    if (cfg_.root.mode == ExecutionRoot::Mode::sandbox) {
        opts.working_dir = cfg_.root.root_path;
        opts.inherit_env = false;
        const char* path_env = ::getenv("PATH");
        opts.env = {{"PATH", path_env ? path_env : "/usr/local/bin:/usr/bin:/bin"},
                    {"HOME", cfg_.root.root_path.string()},
                    {"LANG", "C.UTF-8"}};
    } else {
        opts.inherit_env = true;
    }

    std::string started_at = stamp();
    auto t0 = std::chrono::steady_clock::now();
    ProcessResult res = shell ? run_shell(command, opts) : run_process(split_command(command), opts);
    int64_t took =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    if (res.spawn_failed) return make_error_response(id, "spawn_failed", res.spawn_error);

    Response r;
    r.id = id;
    r.status = ResponseStatus::ok;
    r.payload = Value{{"exit_code", res.exit_code},
                      {"stdout", lossy_utf8(res.stdout_data)},
                      {"stderr", lossy_utf8(res.stderr_data)},
                      {"stdout_truncated", res.stdout_truncated},
                      {"stderr_truncated", res.stderr_truncated},
                      {"started_at", started_at},
                      {"duration_ms", took}};
    return r;
}

Response Agent::do_gui(int64_t id, const std::string& kind, const Value& p) {
    if (!cfg_.screen_model)
        return make_error_response(id, "gui_unavailable", "no GUI backend behind this execution root");
    ScreenModel& model = *cfg_.screen_model;
    const Screen* screen = model.find_screen(screen_id_);
    if (!screen) return make_error_response(id, "internal", "current screen '" + screen_id_ + "' vanished");

    auto resolve_with_retries = [&](const GuiTarget& t) -> ResolveResult {
        ResolveResult last = NotFound{};
        for (int attempt = 0; attempt < std::max(1, cfg_.retry.attempts); ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry.spacing_ms));
            last = resolve_on_screen(t, *screen);
            if (!std::holds_alternative<NotFound>(last)) return last;
        }
        return last;
    };

    // Returns the resolution, or fills `err` with the terminal response.
    auto resolve_or_fail = [&](const GuiTarget& t, std::optional<Response>& err) -> Resolution {
        if (t.kind == GuiTarget::Kind::coordinates) {
            if (t.x < 0 || t.y < 0 || t.x >= model.width || t.y >= model.height) {
                err = make_error_response(id, "target_not_found",
                                          "coordinates (" + std::to_string(t.x) + ", " + std::to_string(t.y) +
                                              ") fall outside the screen");
                return {};
            }
            Resolution r;
            r.region = Region{t.x, t.y, 1, 1};
            r.confidence = 1.0;
            r.method = Resolution::Method::fixture;
            for (const auto& e : screen->elements) {
                if (t.x >= e.region.x && t.x < e.region.x + e.region.w && t.y >= e.region.y &&
                    t.y < e.region.y + e.region.h) {
                    r.element_id = e.id;
                    break;
                }
            }
            return r;
        }
        ResolveResult rr = resolve_with_retries(t);
        if (auto* be = std::get_if<BackendError>(&rr)) {
            err = make_error_response(id, "gui_backend", be->message);
            return {};
        }
        if (auto* nf = std::get_if<NotFound>(&rr)) {
            Response e = make_error_response(id, "target_not_found", "no element matches the requested target");
            e.payload["candidates"] = nf->candidates;
            err = e;
            return {};
        }
        return std::get<Resolution>(rr);
    };

    // Applies a transition for (element, gesture) if the model scripts one.
    auto fire = [&](const std::string& element_id, Gesture g, std::optional<Response>& err) {
        if (element_id.empty()) return;
        const Transition* t = screen->find_transition(element_id, g);
        if (!t) return;
        std::optional<fs::path> confine;
        if (cfg_.root.mode == ExecutionRoot::Mode::sandbox) confine = cfg_.root.root_path;
        if (auto fail = apply_effects(t->effects, cfg_.root.sys_var_map, confine)) {
            err = make_error_response(id, "action_failed", *fail);
            return;
        }
        if (!t->to.empty()) screen_id_ = t->to;
    };

    std::optional<Response> err;
    Response r;
    r.id = id;
    r.status = ResponseStatus::ok;

    if (kind == "click") {
        std::string button = p.value("button", "left");
        Gesture g;
        int events;
        if (button == "left") {
            g = Gesture::click_left;
            events = 1;
        } else if (button == "right") {
            g = Gesture::click_right;
            events = 1;
        } else if (button == "double") {
            g = Gesture::click_double;
            events = 2;
        } else {
            return make_error_response(id, "bad_request", "unknown click button '" + button + "'");
        }
        auto target = target_from_json(p.value("target", Value()));
        if (!target) return make_error_response(id, "bad_request", "click needs a valid 'target'");
        Resolution res = resolve_or_fail(*target, err);
        if (err) return *err;
        fire(res.element_id, g, err);
        if (err) return *err;
        r.payload = Value{{"resolved_region", region_json(res.region)},
                          {"confidence", res.confidence},
                          {"method", to_string(res.method)},
                          {"ambiguous", res.ambiguous},
                          {"element", res.element_id},
                          {"injected_events_count", events},
                          {"screen", screen_id_}};
        return r;
    }

    if (kind == "type_text") {
        if (!p.contains("text") || !p["text"].is_string())
            return make_error_response(id, "bad_request", "type_text needs a string 'text'");
        std::string text = p["text"];
        r.payload = Value{{"resolved_region", nullptr},
                          {"confidence", 1.0},
                          {"injected_events_count", utf8_codepoints(text)},
                          {"screen", screen_id_}};
        return r;
    }

    if (kind == "scroll") {
        std::string direction = p.value("direction", "");
        if (direction != "up" && direction != "down" && direction != "left" && direction != "right")
            return make_error_response(id, "bad_request", "scroll needs a direction of up, down, left or right");
        int64_t amount = p.value("amount", int64_t{1});
        if (amount < 1) return make_error_response(id, "bad_request", "scroll amount must be at least 1");
        r.payload = Value{{"resolved_region", nullptr},
                          {"confidence", 1.0},
                          {"injected_events_count", amount},
                          {"screen", screen_id_}};
        return r;
    }

    // drag_drop
    auto from = target_from_json(p.value("from", Value()));
    auto to = target_from_json(p.value("to", Value()));
    if (!from || !to) return make_error_response(id, "bad_request", "drag_drop needs valid 'from' and 'to' targets");
    Resolution src = resolve_or_fail(*from, err);
    if (err) return *err;
    Resolution dst = resolve_or_fail(*to, err);
    if (err) return *err;
    fire(src.element_id, Gesture::drag, err);
    if (err) return *err;
    r.payload = Value{{"resolved_region", region_json(src.region)},
                      {"to_region", region_json(dst.region)},
                      {"confidence", std::min(src.confidence, dst.confidence)},
                      {"injected_events_count", 2},
                      {"screen", screen_id_}};
    return r;
}

Response Agent::do_test(int64_t id, const Value& p) {
    if (!p.is_object() || !p.contains("function") || !p["function"].is_string())
        return make_error_response(id, "bad_request", "test payload needs a string 'function'");
    Value params = p.value("params", Value::object());
    if (!params.is_object()) return make_error_response(id, "bad_request", "test 'params' must be an object");

    AssertionContext ctx;
    if (cfg_.root.mode == ExecutionRoot::Mode::sandbox) ctx.sandbox_root = cfg_.root.root_path;
    TestResult tr = registry_.evaluate(p["function"].get<std::string>(), params, ctx);
    tr.test_name = p.value("name", "");

    Response r;
    r.id = id;
    switch (tr.status) {
        case TestStatus::pass: r.status = ResponseStatus::test_pass; break;
        case TestStatus::fail: r.status = ResponseStatus::test_fail; break;
        case TestStatus::error: r.status = ResponseStatus::error; break;
    }
    r.payload = tr.to_json();
    return r;
}

Response Agent::do_push(int64_t id, const Value& p) {
    auto path = confined(p, "path");
    if (auto* err = std::get_if<std::string>(&path)) return make_error_response(id, "bad_path", *err);
    const std::string key = std::get<fs::path>(path).string();

    if (!p.contains("offset") || !p["offset"].is_number_integer() || p["offset"].get<int64_t>() < 0)
        return make_error_response(id, "bad_chunk", "push_file needs a non-negative integer 'offset'");
    if (!p.contains("data") || !p["data"].is_string())
        return make_error_response(id, "bad_chunk", "push_file needs base64 'data'");
    if (!p.contains("last") || !p["last"].is_boolean())
        return make_error_response(id, "bad_chunk", "push_file needs a boolean 'last'");

    uint64_t offset = p["offset"].get<uint64_t>();
    if (offset == 0) staging_[key].clear();
    auto it = staging_.find(key);
    if (it == staging_.end() || offset != it->second.size()) {
        staging_.erase(key);
        return make_error_response(id, "bad_chunk", "offset does not continue the staged stream");
    }
    auto data = base64_decode(p["data"].get<std::string>());
    if (!data) {
        staging_.erase(key);
        return make_error_response(id, "bad_chunk", "chunk data is not valid base64");
    }
    if (data->size() > kFileChunkBytes) {
        staging_.erase(key);
        return make_error_response(id, "bad_chunk", "chunk exceeds the transfer size bound");
    }
    it->second += *data;
    if (it->second.size() > kStagingCap) {
        staging_.erase(key);
        return make_error_response(id, "too_large", "staged transfer exceeds the size cap");
    }

    Response r;
    r.id = id;
    r.status = ResponseStatus::ok;
    r.payload = nullptr;
    if (p["last"].get<bool>()) {
        std::string digest = sha256_hex(it->second);
        if (!p.contains("sha256") || !p["sha256"].is_string() || p["sha256"].get<std::string>() != digest) {
            staging_.erase(key);
            return make_error_response(id, "hash_mismatch", "assembled content does not match the declared hash");
        }
        std::error_code ec;
        fs::create_directories(fs::path(key).parent_path(), ec);
        if (!atomic_write_file(key, it->second))
            return make_error_response(id, "io_error", "cannot write '" + key + "'");
        r.payload = Value{{"bytes", it->second.size()}, {"content_hash", digest}};
        staging_.erase(key);
    }
    return r;
}

Response Agent::do_fetch(int64_t id, const Value& p) {
    auto path = confined(p, "path");
    if (auto* err = std::get_if<std::string>(&path)) return make_error_response(id, "bad_path", *err);
    const fs::path& file = std::get<fs::path>(path);

    if (!p.contains("offset") || !p["offset"].is_number_integer() || p["offset"].get<int64_t>() < 0)
        return make_error_response(id, "bad_chunk", "fetch_file needs a non-negative integer 'offset'");
    uint64_t offset = p["offset"].get<uint64_t>();

    std::error_code ec;
    if (!fs::exists(file, ec)) return make_error_response(id, "not_found", "no such file '" + file.string() + "'");
    if (!fs::is_regular_file(file, ec))
        return make_error_response(id, "not_found", "'" + file.string() + "' is not a regular file");
    uint64_t size = fs::file_size(file, ec);
    if (ec) return make_error_response(id, "io_error", "cannot stat '" + file.string() + "'");
    if (offset > size) return make_error_response(id, "bad_chunk", "offset is past the end of the file");

    uint64_t n = std::min<uint64_t>(kFileChunkBytes, size - offset);
    std::string buf(n, '\0');
    std::ifstream in(file, std::ios::binary);
    if (!in) return make_error_response(id, "io_error", "cannot open '" + file.string() + "'");
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(buf.data(), static_cast<std::streamsize>(n));
    if (static_cast<uint64_t>(in.gcount()) != n)
        return make_error_response(id, "io_error", "short read on '" + file.string() + "'");

    Response r;
    r.id = id;
    r.status = ResponseStatus::ok;
    r.payload = Value{{"data", base64_encode(buf)}, {"eof", offset + n == size}};
    if (offset + n == size) {
        auto digest = sha256_file_hex(file);
        if (!digest) return make_error_response(id, "io_error", "cannot hash '" + file.string() + "'");
        r.payload["sha256"] = *digest;
        r.payload["bytes"] = size;
    }
    return r;
}

std::variant<std::map<std::string, std::string>, std::string> load_sys_vars_file(const fs::path& file) {
    YAML::Node doc;
    try {
        doc = YAML::LoadFile(file.string());
    } catch (const YAML::Exception& e) {
        return "cannot parse system variables file " + file.string() + ": " + e.what();
    }
    if (!doc.IsMap()) return "system variables file must be a flat mapping";
    std::map<std::string, std::string> vars;
    for (const auto& kv : doc) {
        if (!kv.second.IsScalar()) return "system variable '" + kv.first.as<std::string>() + "' must be a scalar";
        vars[kv.first.as<std::string>()] = kv.second.as<std::string>();
    }
    return vars;
}

}  // namespace tdf
