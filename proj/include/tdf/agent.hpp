#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "tdf/assertions.hpp"
#include "tdf/protocol.hpp"
#include "tdf/resolver.hpp"
#include "tdf/screen_model.hpp"
#include "tdf/transport.hpp"

namespace tdf {

// Where and how the agent touches the machine it runs on.
struct ExecutionRoot {
    enum class Mode { native, sandbox };
    Mode mode = Mode::sandbox;
    // Sandbox mode confines every path to this tree and runs commands inside
    // it with a scrubbed environment.
    std::filesystem::path root_path;
    // system-variable name -> absolute path (adare_user_home, ...).
    std::map<std::string, std::string> sys_var_map;
};

struct GuiRetryPolicy {
    int attempts = 5;
    int spacing_ms = 500;
};

struct AgentConfig {
    ExecutionRoot root;
    // GUI backend for sandbox runs; without it GUI actions report
    // gui_unavailable.
    std::optional<ScreenModel> screen_model;
    GuiRetryPolicy retry;
};

// Serves protocol requests against one execution root. Single-threaded by
// contract (one outstanding request per session); screen state persists
// across sessions the way a desktop would.
class Agent {
public:
    enum class ServeResult { clean_shutdown, connection_lost, handshake_refused };

    Agent(AgentConfig cfg, AssertionRegistry registry);

    // Handshake, then requests until shutdown or transport loss. Request
    // level failures become error responses; the loop survives them all.
    ServeResult serve(FrameTransport& transport);

    const std::string& current_screen() const { return screen_id_; }

private:
    Response handle(const Request& req, bool& shutdown);
    Response do_action(int64_t id, const Value& p);
    Response do_command(int64_t id, const Value& p);
    Response do_gui(int64_t id, const std::string& kind, const Value& p);
    Response do_test(int64_t id, const Value& p);
    Response do_push(int64_t id, const Value& p);
    Response do_fetch(int64_t id, const Value& p);

    // Agent clock readings, clamped so they never run backwards.
    std::string stamp();
    std::variant<std::filesystem::path, std::string> confined(const Value& p, const char* field) const;

    AgentConfig cfg_;
    AssertionRegistry registry_;
    std::string screen_id_;
    int64_t last_clock_ms_ = 0;
    std::map<std::string, std::string> staging_;
};

// Parses a flat key -> path mapping document (one scalar per key).
std::variant<std::map<std::string, std::string>, std::string> load_sys_vars_file(
    const std::filesystem::path& file);

}  // namespace tdf
