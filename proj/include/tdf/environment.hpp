#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tdf/assertions.hpp"
#include "tdf/template.hpp"
#include "tdf/transport.hpp"

namespace tdf {

// Sandbox backend: a throwaway directory tree stands in for the machine.
struct SandboxParams {
    // Seeded into the fresh root before the run; absent means an empty tree.
    std::optional<std::filesystem::path> template_tree;
    // Scripted desktop for GUI actions; absent means GUI is unavailable.
    std::optional<std::filesystem::path> screen_model;
    std::optional<int> retry_attempts;
    std::optional<int> retry_spacing_ms;
};

// VM backend: lifecycle phases shell out to configured commands so any
// hypervisor CLI can drive them; no hypervisor bindings live here. Commands
// may reference {{ machine_name }} and {{ snapshot_name }}.
struct VmSnapshotParams {
    std::string machine_name;
    std::string snapshot_name;
    std::string connect_addr;  // host:port of the in-guest agent
    std::string prepare_cmd;   // must revert to the named snapshot
    std::string start_cmd;
    std::string stop_cmd;
    std::string teardown_cmd;
    int connect_timeout_ms = 15000;
};

struct EnvironmentSpec {
    enum class Backend { sandbox, vm_snapshot };

    std::string id;
    Backend backend = Backend::sandbox;
    SandboxParams sandbox;
    VmSnapshotParams vm;
    // Variable name -> path. Sandbox: relative values are joined onto the
    // provisioned root; vm_snapshot: guest-absolute, passed through.
    std::map<std::string, std::string> sys_var_map;
    std::string description;

    // Immutable snapshot embedded in run reports.
    Value to_json() const;
};

const char* to_string(EnvironmentSpec::Backend b);

struct EnvironmentRegistry {
    std::vector<EnvironmentSpec> specs;

    const EnvironmentSpec* find(const std::string& id) const;
};

// Parses the registry document (`environments:` list). Relative paths in
// backend params resolve against the registry file's directory. Duplicate
// ids and malformed entries are errors.
std::variant<EnvironmentRegistry, std::string> load_environment_registry(const std::filesystem::path& file);

// One provisioned instance of an environment. Lifecycle: prepare (reach the
// clean state), start, connect, then stop and teardown; teardown must run
// even when the run aborts. Phase methods return error text on failure.
class EnvironmentBackend {
public:
    virtual ~EnvironmentBackend() = default;

    virtual std::optional<std::string> prepare() = 0;
    virtual std::optional<std::string> start() = 0;
    // Single-shot: the transport for this run's session.
    virtual std::variant<std::unique_ptr<FrameTransport>, std::string> connect() = 0;
    virtual void stop() = 0;
    virtual void teardown() = 0;

    // Absolute system-variable paths, valid after prepare().
    virtual const std::map<std::string, std::string>& sys_vars() const = 0;
    // Content hash of the freshly provisioned tree; sandbox only.
    virtual std::optional<std::string> pre_run_tree_hash() const = 0;
    // Provisioned filesystem root; sandbox only.
    virtual std::optional<std::filesystem::path> root() const = 0;
};

// The sandbox backend hosts the agent in-process over a memory transport;
// the vm_snapshot backend shells out per phase and connects over TCP.
std::variant<std::unique_ptr<EnvironmentBackend>, std::string> make_backend(const EnvironmentSpec& spec,
                                                                            const AssertionRegistry& registry);

}  // namespace tdf
