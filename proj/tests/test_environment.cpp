#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "tdf/agent.hpp"
#include "tdf/environment.hpp"
#include "tdf/session.hpp"
#include "tdf/util.hpp"

using namespace tdf;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(make_temp_dir("tdf_env_")) {}
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    REQUIRE(write_file(p, content));
}

Handshake host_hello() {
    Handshake h;
    h.registry_digest = AssertionRegistry::core().digest();
    h.capabilities = {"file_transfer"};
    return h;
}

EnvironmentSpec sandbox_spec(const std::string& id) {
    EnvironmentSpec spec;
    spec.id = id;
    spec.backend = EnvironmentSpec::Backend::sandbox;
    spec.sys_var_map = {{"adare_user_home", "home/user"},
                        {"adare_user_documents", "home/user/Documents"}};
    return spec;
}

}  // namespace

TEST_CASE("environment registry parses sandbox and vm entries") {
    TempDir dir;
    write(dir.path / "envs.yaml", R"(environments:
  - id: scratch
    backend: sandbox
    description: "empty scratch tree"
    sys_var_map:
      adare_user_home: home/user
  - id: seeded
    backend: sandbox
    backend_params:
      template_tree: trees/base
      screen_model: models/desktop.json
      retry_attempts: 2
      retry_spacing_ms: 10
    sys_var_map:
      adare_user_home: home/user
      adare_user_documents: home/user/Documents
  - id: win10
    backend: vm_snapshot
    backend_params:
      machine_name: win10-tools
      snapshot_name: clean
      connect_addr: 192.168.56.10:48620
      prepare_cmd: "vm-restore {{ machine_name }} {{ snapshot_name }}"
    sys_var_map:
      adare_user_home: "C:/Users/test"
)");

    auto got = load_environment_registry(dir.path / "envs.yaml");
    REQUIRE(std::holds_alternative<EnvironmentRegistry>(got));
    const auto& reg = std::get<EnvironmentRegistry>(got);
    REQUIRE(reg.specs.size() == 3);

    CHECK(reg.find("scratch") != nullptr);
    CHECK(reg.find("absent") == nullptr);

    const EnvironmentSpec* seeded = reg.find("seeded");
    REQUIRE(seeded != nullptr);
    CHECK(seeded->backend == EnvironmentSpec::Backend::sandbox);
    REQUIRE(seeded->sandbox.template_tree.has_value());
    // Relative paths anchor at the registry file's directory.
    CHECK(*seeded->sandbox.template_tree == dir.path / "trees/base");
    REQUIRE(seeded->sandbox.screen_model.has_value());
    CHECK(*seeded->sandbox.screen_model == dir.path / "models/desktop.json");
    CHECK(seeded->sandbox.retry_attempts == 2);
    CHECK(seeded->sandbox.retry_spacing_ms == 10);
    CHECK(seeded->sys_var_map.at("adare_user_documents") == "home/user/Documents");

    const EnvironmentSpec* vm = reg.find("win10");
    REQUIRE(vm != nullptr);
    CHECK(vm->backend == EnvironmentSpec::Backend::vm_snapshot);
    CHECK(vm->vm.machine_name == "win10-tools");
    CHECK(vm->vm.snapshot_name == "clean");
    CHECK(vm->vm.connect_addr == "192.168.56.10:48620");
    CHECK(vm->vm.prepare_cmd == "vm-restore {{ machine_name }} {{ snapshot_name }}");
    CHECK(vm->sys_var_map.at("adare_user_home") == "C:/Users/test");
}

TEST_CASE("environment registry rejects malformed documents") {
    TempDir dir;
    auto error_of = [&](const std::string& yaml) {
        write(dir.path / "envs.yaml", yaml);
        auto got = load_environment_registry(dir.path / "envs.yaml");
        REQUIRE(std::holds_alternative<std::string>(got));
        return std::get<std::string>(got);
    };

    CHECK(error_of("flat: scalar\n").find("environments") != std::string::npos);
    CHECK(error_of("environments: not-a-list\n").find("list") != std::string::npos);
    CHECK(error_of("environments:\n  - backend: sandbox\n").find("id") != std::string::npos);
    CHECK(error_of("environments:\n  - id: a\n    backend: container\n").find("unknown backend") !=
          std::string::npos);
    CHECK(error_of("environments:\n  - id: a\n  - id: a\n").find("duplicate") != std::string::npos);
    CHECK(error_of("environments:\n  - id: v\n    backend: vm_snapshot\n    backend_params:\n"
                   "      machine_name: m\n").find("connect_addr") != std::string::npos);
    CHECK(error_of("environments:\n  - id: a\n    sys_var_map:\n      \"bad name\": x\n")
              .find("not a valid variable name") != std::string::npos);

    auto missing = load_environment_registry(dir.path / "nope.yaml");
    REQUIRE(std::holds_alternative<std::string>(missing));
}

TEST_CASE("environment spec snapshots to json") {
    EnvironmentSpec spec = sandbox_spec("snap");
    spec.description = "scratch";
    spec.sandbox.template_tree = "/trees/base";

    Value j = spec.to_json();
    CHECK(j["id"] == "snap");
    CHECK(j["backend"] == "sandbox");
    CHECK(j["description"] == "scratch");
    CHECK(j["backend_params"]["template_tree"] == "/trees/base");
    CHECK(j["sys_var_map"]["adare_user_home"] == "home/user");

    EnvironmentSpec vm;
    vm.id = "vm";
    vm.backend = EnvironmentSpec::Backend::vm_snapshot;
    vm.vm.machine_name = "m";
    vm.vm.snapshot_name = "s";
    vm.vm.connect_addr = "10.0.0.5:48620";
    Value vj = vm.to_json();
    CHECK(vj["backend"] == "vm_snapshot");
    CHECK(vj["backend_params"]["machine_name"] == "m");
    CHECK(vj["backend_params"]["snapshot_name"] == "s");
    CHECK(vj["backend_params"]["connect_addr"] == "10.0.0.5:48620");
}

TEST_CASE("sandbox backend provisions a fresh confined tree") {
    TempDir trees;
    write(trees.path / "base/etc/motd", "welcome\n");
    write(trees.path / "base/home/user/Documents/readme.txt", "seeded\n");

    EnvironmentSpec spec = sandbox_spec("fresh");
    spec.sandbox.template_tree = trees.path / "base";

    auto backend_or = make_backend(spec, AssertionRegistry::core());
    REQUIRE(std::holds_alternative<std::unique_ptr<EnvironmentBackend>>(backend_or));
    auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(backend_or));

    REQUIRE(backend->prepare() == std::nullopt);
    REQUIRE(backend->root().has_value());
    fs::path root = *backend->root();
    CHECK(fs::exists(root / "etc/motd"));
    CHECK(fs::exists(root / "home/user/Documents/readme.txt"));

    // Relative system variables are joined onto the provisioned root and the
    // directories exist afterward.
    CHECK(backend->sys_vars().at("adare_user_home") == (root / "home/user").string());
    CHECK(backend->sys_vars().at("adare_user_documents") == (root / "home/user/Documents").string());
    CHECK(fs::is_directory(root / "home/user"));
    REQUIRE(backend->pre_run_tree_hash().has_value());

    REQUIRE(backend->start() == std::nullopt);
    auto transport_or = backend->connect();
    REQUIRE(std::holds_alternative<std::unique_ptr<FrameTransport>>(transport_or));

    // Second connection attempt within one provisioned run is refused.
    auto again = backend->connect();
    REQUIRE(std::holds_alternative<std::string>(again));

    auto session_or = Session::establish(
        std::move(std::get<std::unique_ptr<FrameTransport>>(transport_or)), host_hello());
    REQUIRE(std::holds_alternative<std::unique_ptr<Session>>(session_or));
    auto session = std::move(std::get<std::unique_ptr<Session>>(session_or));
    CHECK(session->peer().capabilities.count("sandbox") == 1);

    Response r = session->call(RequestKind::action, Value{{"kind", "command"}, {"command", "pwd"}, {"shell", true}});
    REQUIRE(r.status == ResponseStatus::ok);
    CHECK(r.payload["stdout"] == root.string() + "\n");

    session->shutdown();
    backend->stop();
    backend->teardown();
    CHECK_FALSE(fs::exists(root));
}

TEST_CASE("sandbox backend pre-run hash is stable across provisions") {
    TempDir trees;
    write(trees.path / "base/data/seed.txt", "same bytes every run\n");

    EnvironmentSpec spec = sandbox_spec("stable");
    spec.sandbox.template_tree = trees.path / "base";

    std::string first, second;
    for (std::string* out : {&first, &second}) {
        auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
            make_backend(spec, AssertionRegistry::core())));
        REQUIRE(backend->prepare() == std::nullopt);
        *out = backend->pre_run_tree_hash().value();
        backend->teardown();
    }
    CHECK(first == second);
    CHECK_FALSE(first.empty());
}

TEST_CASE("sandbox backend reports provisioning failures") {
    EnvironmentSpec missing_tree = sandbox_spec("broken");
    missing_tree.sandbox.template_tree = "/nonexistent/tree";
    auto b1 = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
        make_backend(missing_tree, AssertionRegistry::core())));
    auto err1 = b1->prepare();
    REQUIRE(err1.has_value());
    CHECK(err1->find("template tree") != std::string::npos);

    TempDir dir;
    write(dir.path / "bad_model.json", "{ not json");
    EnvironmentSpec bad_model = sandbox_spec("badmodel");
    bad_model.sandbox.screen_model = dir.path / "bad_model.json";
    auto b2 = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
        make_backend(bad_model, AssertionRegistry::core())));
    auto err2 = b2->prepare();
    REQUIRE(err2.has_value());
    CHECK(err2->find("screen model") != std::string::npos);
}

TEST_CASE("vm backend shells out per phase and connects over tcp") {
    TempDir dir;

    // Stand-in guest: a real agent behind a TCP listener.
    auto listener_or = TcpListener::bind("127.0.0.1", 0);
    REQUIRE(std::holds_alternative<std::unique_ptr<TcpListener>>(listener_or));
    auto listener = std::move(std::get<std::unique_ptr<TcpListener>>(listener_or));
    TempDir guest_root;
    AgentConfig cfg;
    cfg.root.mode = ExecutionRoot::Mode::sandbox;
    cfg.root.root_path = guest_root.path;
    Agent agent(std::move(cfg), AssertionRegistry::core());
    std::thread serve_thread([&] {
        auto t = listener->accept(2000ms);
        if (t) agent.serve(*t);
    });

    EnvironmentSpec spec;
    spec.id = "vm";
    spec.backend = EnvironmentSpec::Backend::vm_snapshot;
    spec.vm.machine_name = "box1";
    spec.vm.snapshot_name = "clean";
    spec.vm.connect_addr = "127.0.0.1:" + std::to_string(listener->port());
    spec.vm.connect_timeout_ms = 2000;
    spec.vm.prepare_cmd = "echo restore {{ machine_name }} {{ snapshot_name }} > " +
                          (dir.path / "prepare.log").string();
    spec.vm.start_cmd = "touch " + (dir.path / "started").string();
    spec.vm.stop_cmd = "touch " + (dir.path / "stopped").string();
    spec.vm.teardown_cmd = "touch " + (dir.path / "torn_down").string();
    spec.sys_var_map = {{"adare_user_home", "/home/test"}};

    auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
        make_backend(spec, AssertionRegistry::core())));
    REQUIRE(backend->prepare() == std::nullopt);
    CHECK(read_file(dir.path / "prepare.log") == std::string("restore box1 clean\n"));
    REQUIRE(backend->start() == std::nullopt);
    CHECK(fs::exists(dir.path / "started"));

    // Guest paths pass through untouched; nothing is provisioned host-side.
    CHECK(backend->sys_vars().at("adare_user_home") == "/home/test");
    CHECK_FALSE(backend->pre_run_tree_hash().has_value());
    CHECK_FALSE(backend->root().has_value());

    auto transport_or = backend->connect();
    REQUIRE(std::holds_alternative<std::unique_ptr<FrameTransport>>(transport_or));
    auto session_or = Session::establish(
        std::move(std::get<std::unique_ptr<FrameTransport>>(transport_or)), host_hello());
    REQUIRE(std::holds_alternative<std::unique_ptr<Session>>(session_or));
    auto session = std::move(std::get<std::unique_ptr<Session>>(session_or));
    Response r = session->call(RequestKind::ping, nullptr);
    CHECK(r.status == ResponseStatus::ok);

    session->shutdown();
    serve_thread.join();
    backend->stop();
    CHECK(fs::exists(dir.path / "stopped"));
    backend->teardown();
    CHECK(fs::exists(dir.path / "torn_down"));
}

TEST_CASE("vm backend surfaces phase and connection failures") {
    EnvironmentSpec spec;
    spec.id = "vm";
    spec.backend = EnvironmentSpec::Backend::vm_snapshot;
    spec.vm.machine_name = "box1";
    spec.vm.snapshot_name = "clean";
    spec.vm.connect_addr = "127.0.0.1:1";
    spec.vm.connect_timeout_ms = 300;

    SUBCASE("failing prepare command") {
        spec.vm.prepare_cmd = "exit 7";
        auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
            make_backend(spec, AssertionRegistry::core())));
        auto err = backend->prepare();
        REQUIRE(err.has_value());
        CHECK(err->find("prepare command exited 7") != std::string::npos);
    }

    SUBCASE("unreachable agent address") {
        auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
            make_backend(spec, AssertionRegistry::core())));
        REQUIRE(backend->prepare() == std::nullopt);  // no command configured: phase managed externally
        REQUIRE(backend->start() == std::nullopt);
        auto got = backend->connect();
        REQUIRE(std::holds_alternative<std::string>(got));
        CHECK(std::get<std::string>(got).find("cannot reach agent") != std::string::npos);
    }

    SUBCASE("malformed connect address") {
        spec.vm.connect_addr = "no-port-here";
        auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(
            make_backend(spec, AssertionRegistry::core())));
        auto got = backend->connect();
        REQUIRE(std::holds_alternative<std::string>(got));
        CHECK(std::get<std::string>(got).find("host:port") != std::string::npos);
    }
}
