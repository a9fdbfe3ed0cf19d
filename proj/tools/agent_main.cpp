#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "tdf/agent.hpp"
#include "tdf/transport.hpp"

using namespace tdf;

namespace {

// "host:port" with an IPv4 or hostname half. A bare port means loopback.
bool split_listen_addr(const std::string& addr, std::string& host, int& port) {
    auto colon = addr.rfind(':');
    std::string port_text;
    if (colon == std::string::npos) {
        host = "127.0.0.1";
        port_text = addr;
    } else {
        host = addr.substr(0, colon);
        port_text = addr.substr(colon + 1);
    }
    if (host.empty() || port_text.empty()) return false;
    try {
        size_t used = 0;
        port = std::stoi(port_text, &used);
        if (used != port_text.size()) return false;
    } catch (...) {
        return false;
    }
    return port >= 0 && port <= 65535;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-guest action and test agent"};
    std::string listen = "127.0.0.1:" + std::to_string(kDefaultAgentPort);
    std::string mode = "sandbox";
    std::string root;
    std::string sys_vars_file;
    std::string screen_model_file;
    GuiRetryPolicy retry;

    app.add_option("--listen", listen, "address to listen on, host:port or bare port");
    app.add_option("--mode", mode, "execution mode")->check(CLI::IsMember({"native", "sandbox"}));
    app.add_option("--root", root, "execution root directory (sandbox mode)");
    app.add_option("--sys-vars", sys_vars_file, "flat key: path mapping file of system variables");
    app.add_option("--screen-model", screen_model_file, "screen model document backing GUI actions");
    app.add_option("--retry-attempts", retry.attempts, "GUI target resolution attempts")->check(CLI::PositiveNumber);
    app.add_option("--retry-spacing-ms", retry.spacing_ms, "delay between GUI resolution attempts")
        ->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    AgentConfig cfg;
    cfg.retry = retry;
    cfg.root.mode = mode == "native" ? ExecutionRoot::Mode::native : ExecutionRoot::Mode::sandbox;
    if (cfg.root.mode == ExecutionRoot::Mode::sandbox) {
        if (root.empty()) {
            std::fprintf(stderr, "agent: sandbox mode requires --root\n");
            return 1;
        }
        std::error_code ec;
        cfg.root.root_path = std::filesystem::weakly_canonical(root, ec);
        if (ec || !std::filesystem::is_directory(cfg.root.root_path)) {
            std::fprintf(stderr, "agent: root '%s' is not a directory\n", root.c_str());
            return 1;
        }
    }
    if (!sys_vars_file.empty()) {
        auto vars = load_sys_vars_file(sys_vars_file);
        if (auto* err = std::get_if<std::string>(&vars)) {
            std::fprintf(stderr, "agent: %s\n", err->c_str());
            return 1;
        }
        cfg.root.sys_var_map = std::move(std::get<std::map<std::string, std::string>>(vars));
    }
    if (!screen_model_file.empty()) {
        auto model = load_screen_model_file(screen_model_file);
        if (auto* err = std::get_if<std::string>(&model)) {
            std::fprintf(stderr, "agent: %s\n", err->c_str());
            return 1;
        }
        cfg.screen_model = std::move(std::get<ScreenModel>(model));
    }

    std::string host;
    int port = 0;
    if (!split_listen_addr(listen, host, port)) {
        std::fprintf(stderr, "agent: bad --listen address '%s'\n", listen.c_str());
        return 1;
    }

    auto bound = TcpListener::bind(host, port);
    if (auto* err = std::get_if<std::string>(&bound)) {
        std::fprintf(stderr, "agent: %s\n", err->c_str());
        return 2;
    }
    auto& listener = std::get<std::unique_ptr<TcpListener>>(bound);
    std::fprintf(stderr, "agent: listening on %s:%d\n", host.c_str(), listener->port());

    Agent agent(std::move(cfg), AssertionRegistry::core());
    while (true) {
        auto conn = listener->accept(std::nullopt);
        if (!conn) {
            std::fprintf(stderr, "agent: listener failed\n");
            return 1;
        }
        switch (agent.serve(*conn)) {
            case Agent::ServeResult::clean_shutdown: return 0;
            case Agent::ServeResult::handshake_refused: return 3;
            case Agent::ServeResult::connection_lost:
                // Reconnects start a fresh session; keep listening.
                break;
        }
    }
}
