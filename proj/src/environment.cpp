#include "tdf/environment.hpp"

#include <thread>

#include <yaml-cpp/yaml.h>

#include "tdf/agent.hpp"
#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

const char* to_string(EnvironmentSpec::Backend b) {
    switch (b) {
        case EnvironmentSpec::Backend::sandbox: return "sandbox";
        case EnvironmentSpec::Backend::vm_snapshot: return "vm_snapshot";
    }
    return "sandbox";
}

Value EnvironmentSpec::to_json() const {
    Value params = Value::object();
    if (backend == Backend::sandbox) {
        if (sandbox.template_tree) params["template_tree"] = sandbox.template_tree->string();
        if (sandbox.screen_model) params["screen_model"] = sandbox.screen_model->string();
        if (sandbox.retry_attempts) params["retry_attempts"] = *sandbox.retry_attempts;
        if (sandbox.retry_spacing_ms) params["retry_spacing_ms"] = *sandbox.retry_spacing_ms;
    } else {
        params["machine_name"] = vm.machine_name;
        params["snapshot_name"] = vm.snapshot_name;
        params["connect_addr"] = vm.connect_addr;
        if (!vm.prepare_cmd.empty()) params["prepare_cmd"] = vm.prepare_cmd;
        if (!vm.start_cmd.empty()) params["start_cmd"] = vm.start_cmd;
        if (!vm.stop_cmd.empty()) params["stop_cmd"] = vm.stop_cmd;
        if (!vm.teardown_cmd.empty()) params["teardown_cmd"] = vm.teardown_cmd;
    }
    Value vars = Value::object();
    for (const auto& [k, v] : sys_var_map) vars[k] = v;
    return Value{{"id", id},
                 {"backend", to_string(backend)},
                 {"backend_params", params},
                 {"sys_var_map", vars},
                 {"description", description}};
}

const EnvironmentSpec* EnvironmentRegistry::find(const std::string& id) const {
    for (const auto& s : specs)
        if (s.id == id) return &s;
    return nullptr;
}

namespace {

// Paths inside a registry document are portable when kept relative to it.
fs::path resolve_against(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

std::optional<std::string> parse_spec(const YAML::Node& node, const fs::path& base_dir, EnvironmentSpec& out) {
    if (!node.IsMap()) return "environment entry must be a mapping";
    if (!node["id"] || !node["id"].IsScalar()) return "environment entry needs a scalar 'id'";
    out.id = node["id"].as<std::string>();

    std::string backend = node["backend"] ? node["backend"].as<std::string>("") : "sandbox";
    if (backend == "sandbox") {
        out.backend = EnvironmentSpec::Backend::sandbox;
    } else if (backend == "vm_snapshot") {
        out.backend = EnvironmentSpec::Backend::vm_snapshot;
    } else {
        return "environment '" + out.id + "': unknown backend '" + backend + "'";
    }

    if (node["description"]) out.description = node["description"].as<std::string>("");

    YAML::Node params = node["backend_params"];
    if (params && !params.IsMap()) return "environment '" + out.id + "': backend_params must be a mapping";
    auto scalar = [&](const char* key) -> std::optional<std::string> {
        if (!params || !params[key]) return std::nullopt;
        return params[key].as<std::string>("");
    };

    if (out.backend == EnvironmentSpec::Backend::sandbox) {
        if (auto v = scalar("template_tree")) out.sandbox.template_tree = resolve_against(base_dir, *v);
        if (auto v = scalar("screen_model")) out.sandbox.screen_model = resolve_against(base_dir, *v);
        if (params && params["retry_attempts"]) out.sandbox.retry_attempts = params["retry_attempts"].as<int>();
        if (params && params["retry_spacing_ms"]) out.sandbox.retry_spacing_ms = params["retry_spacing_ms"].as<int>();
    } else {
        if (auto v = scalar("machine_name")) out.vm.machine_name = *v;
        if (auto v = scalar("snapshot_name")) out.vm.snapshot_name = *v;
        if (auto v = scalar("connect_addr")) out.vm.connect_addr = *v;
        if (auto v = scalar("prepare_cmd")) out.vm.prepare_cmd = *v;
        if (auto v = scalar("start_cmd")) out.vm.start_cmd = *v;
        if (auto v = scalar("stop_cmd")) out.vm.stop_cmd = *v;
        if (auto v = scalar("teardown_cmd")) out.vm.teardown_cmd = *v;
        if (params && params["connect_timeout_ms"]) out.vm.connect_timeout_ms = params["connect_timeout_ms"].as<int>();
        if (out.vm.machine_name.empty() || out.vm.snapshot_name.empty() || out.vm.connect_addr.empty())
            return "environment '" + out.id + "': vm_snapshot needs machine_name, snapshot_name and connect_addr";
    }

    YAML::Node vars = node["sys_var_map"];
    if (vars) {
        if (!vars.IsMap()) return "environment '" + out.id + "': sys_var_map must be a mapping";
        for (const auto& kv : vars) {
            if (!kv.second.IsScalar())
                return "environment '" + out.id + "': sys_var_map values must be scalars";
            std::string name = kv.first.as<std::string>();
            if (!is_identifier(name))
                return "environment '" + out.id + "': '" + name + "' is not a valid variable name";
            out.sys_var_map[name] = kv.second.as<std::string>();
        }
    }
    return std::nullopt;
}

}  // namespace

std::variant<EnvironmentRegistry, std::string> load_environment_registry(const fs::path& file) {
    YAML::Node doc;
    try {
        doc = YAML::LoadFile(file.string());
    } catch (const YAML::Exception& e) {
        return "cannot parse environment registry " + file.string() + ": " + e.what();
    }
    if (!doc.IsMap() || !doc["environments"]) return "environment registry needs an 'environments' list";
    YAML::Node list = doc["environments"];
    if (!list.IsSequence()) return "'environments' must be a list";

    fs::path base_dir = file.has_parent_path() ? file.parent_path() : fs::path(".");
    EnvironmentRegistry reg;
    for (const auto& node : list) {
        EnvironmentSpec spec;
        if (auto err = parse_spec(node, base_dir, spec)) return *err;
        if (reg.find(spec.id)) return "duplicate environment id '" + spec.id + "'";
        reg.specs.push_back(std::move(spec));
    }
    return reg;
}

namespace {

// Hands callers a view of a transport the backend keeps alive, so the
// backend can force-close the channel during stop() no matter who still
// holds the session side.
class ForwardingTransport : public FrameTransport {
public:
    explicit ForwardingTransport(std::shared_ptr<FrameTransport> inner) : inner_(std::move(inner)) {}
    bool send_frame(std::string_view frame) override { return inner_->send_frame(frame); }
    RecvResult recv_frame(std::optional<std::chrono::milliseconds> timeout) override {
        return inner_->recv_frame(timeout);
    }
    void close() override { inner_->close(); }

private:
    std::shared_ptr<FrameTransport> inner_;
};

class SandboxBackend : public EnvironmentBackend {
public:
    SandboxBackend(EnvironmentSpec spec, AssertionRegistry registry)
        : spec_(std::move(spec)), registry_(std::move(registry)) {}

    ~SandboxBackend() override {
        stop();
        teardown();
    }

    std::optional<std::string> prepare() override {
        if (spec_.sandbox.template_tree) {
            std::error_code ec;
            if (!fs::is_directory(*spec_.sandbox.template_tree, ec))
                return "template tree '" + spec_.sandbox.template_tree->string() + "' is not a directory";
        }
        std::optional<ScreenModel> model;
        if (spec_.sandbox.screen_model) {
            auto loaded = load_screen_model_file(*spec_.sandbox.screen_model);
            if (auto* err = std::get_if<std::string>(&loaded))
                return "screen model '" + spec_.sandbox.screen_model->string() + "': " + *err;
            model = std::move(std::get<ScreenModel>(loaded));
        }

        root_ = make_temp_dir("tdf-env-" + spec_.id + "-");
        if (spec_.sandbox.template_tree) copy_tree(*spec_.sandbox.template_tree, root_);
        for (const auto& [name, value] : spec_.sys_var_map) {
            fs::path p(value);
            if (!p.is_absolute()) p = (root_ / p).lexically_normal();
            std::error_code ec;
            fs::create_directories(p, ec);
            if (ec) return "cannot create system-variable directory '" + p.string() + "'";
            sys_vars_[name] = p.string();
        }
        pre_hash_ = hash_tree(root_);

        AgentConfig cfg;
        cfg.root.mode = ExecutionRoot::Mode::sandbox;
        cfg.root.root_path = root_;
        cfg.root.sys_var_map = sys_vars_;
        cfg.screen_model = std::move(model);
        if (spec_.sandbox.retry_attempts) cfg.retry.attempts = *spec_.sandbox.retry_attempts;
        if (spec_.sandbox.retry_spacing_ms) cfg.retry.spacing_ms = *spec_.sandbox.retry_spacing_ms;
        agent_ = std::make_unique<Agent>(std::move(cfg), registry_);
        return std::nullopt;
    }

    std::optional<std::string> start() override {
        if (!agent_) return "sandbox backend not prepared";
        auto [host_end, agent_end] = make_memory_transport_pair();
        host_end_ = std::move(host_end);
        auto* transport = agent_end.release();
        serve_thread_ = std::thread([agent = agent_.get(), transport] {
            std::unique_ptr<FrameTransport> owned(transport);
            agent->serve(*owned);
        });
        return std::nullopt;
    }

    std::variant<std::unique_ptr<FrameTransport>, std::string> connect() override {
        if (!host_end_ || handed_out_) return std::string("sandbox backend has no connection to offer");
        handed_out_ = true;
        return std::unique_ptr<FrameTransport>(new ForwardingTransport(host_end_));
    }

    void stop() override {
        if (host_end_) host_end_->close();
        if (serve_thread_.joinable()) serve_thread_.join();
    }

    void teardown() override {
        if (root_.empty()) return;
        std::error_code ec;
        fs::remove_all(root_, ec);
        root_.clear();
    }

    const std::map<std::string, std::string>& sys_vars() const override { return sys_vars_; }
    std::optional<std::string> pre_run_tree_hash() const override {
        return pre_hash_.empty() ? std::nullopt : std::optional<std::string>(pre_hash_);
    }
    std::optional<fs::path> root() const override {
        return root_.empty() ? std::nullopt : std::optional<fs::path>(root_);
    }

private:
    EnvironmentSpec spec_;
    AssertionRegistry registry_;
    fs::path root_;
    std::map<std::string, std::string> sys_vars_;
    std::string pre_hash_;
    std::unique_ptr<Agent> agent_;
    std::shared_ptr<FrameTransport> host_end_;
    bool handed_out_ = false;
    std::thread serve_thread_;
};

class VmSnapshotBackend : public EnvironmentBackend {
public:
    explicit VmSnapshotBackend(EnvironmentSpec spec) : spec_(std::move(spec)) {}

    ~VmSnapshotBackend() override {
        stop();
        teardown();
    }

    std::optional<std::string> prepare() override { return run_phase("prepare", spec_.vm.prepare_cmd); }
    std::optional<std::string> start() override { return run_phase("start", spec_.vm.start_cmd); }

    std::variant<std::unique_ptr<FrameTransport>, std::string> connect() override {
        auto colon = spec_.vm.connect_addr.rfind(':');
        if (colon == std::string::npos)
            return "connect_addr '" + spec_.vm.connect_addr + "' is not host:port";
        std::string host = spec_.vm.connect_addr.substr(0, colon);
        int port = 0;
        try {
            port = std::stoi(spec_.vm.connect_addr.substr(colon + 1));
        } catch (const std::exception&) {
            return "connect_addr '" + spec_.vm.connect_addr + "' has a bad port";
        }

        // The guest agent comes up some time after the VM starts; retry until
        // the budget runs out.
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(spec_.vm.connect_timeout_ms);
        std::string last_error = "connection timed out";
        while (true) {
            auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (remaining.count() <= 0) break;
            auto attempt = tcp_connect(host, port, std::min(remaining, std::chrono::milliseconds(2000)));
            if (auto* t = std::get_if<std::unique_ptr<FrameTransport>>(&attempt)) return std::move(*t);
            last_error = std::get<std::string>(attempt);
            if (std::chrono::steady_clock::now() + std::chrono::milliseconds(200) < deadline)
                std::this_thread::sleep_for(std::chrono::milliseconds(200));
        }
        return "cannot reach agent at " + spec_.vm.connect_addr + ": " + last_error;
    }

    void stop() override {
        if (stopped_) return;
        stopped_ = true;
        run_phase("stop", spec_.vm.stop_cmd);
    }

    void teardown() override {
        if (torn_down_) return;
        torn_down_ = true;
        run_phase("teardown", spec_.vm.teardown_cmd);
    }

    const std::map<std::string, std::string>& sys_vars() const override { return spec_.sys_var_map; }
    std::optional<std::string> pre_run_tree_hash() const override { return std::nullopt; }
    std::optional<fs::path> root() const override { return std::nullopt; }

private:
    std::optional<std::string> run_phase(const std::string& phase, const std::string& command) {
        if (command.empty()) return std::nullopt;  // phase managed externally
        Scope scope;
        scope.set("machine_name", spec_.vm.machine_name);
        scope.set("snapshot_name", spec_.vm.snapshot_name);
        std::string rendered;
        try {
            rendered = render_template(TemplateString(command), scope);
        } catch (const TemplateError& e) {
            return phase + " command: " + e.what();
        }
        ProcessOptions opts;
        opts.inherit_env = true;
        ProcessResult res = run_shell(rendered, opts);
        if (res.spawn_failed) return phase + " command failed to spawn: " + res.spawn_error;
        if (res.exit_code != 0)
            return phase + " command exited " + std::to_string(res.exit_code) +
                   (res.stderr_data.empty() ? "" : ": " + lossy_utf8(res.stderr_data));
        return std::nullopt;
    }

    EnvironmentSpec spec_;
    bool stopped_ = false;
    bool torn_down_ = false;
};

}  // namespace

std::variant<std::unique_ptr<EnvironmentBackend>, std::string> make_backend(const EnvironmentSpec& spec,
                                                                            const AssertionRegistry& registry) {
    if (spec.backend == EnvironmentSpec::Backend::sandbox)
        return std::unique_ptr<EnvironmentBackend>(new SandboxBackend(spec, registry));
    return std::unique_ptr<EnvironmentBackend>(new VmSnapshotBackend(spec));
}

}  // namespace tdf
