#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tdf/playbook.hpp"
#include "tdf/template.hpp"

namespace tdf {

inline constexpr int kReportVersion = 1;

enum class Verdict { all_pass, test_failures, aborted_error };

const char* to_string(Verdict v);
std::optional<Verdict> verdict_from_string(std::string_view s);

// One executed leaf step. `started_at` is the host clock at request send;
// `agent_clock` is the guest's own reading, recorded verbatim so clock skew
// stays visible (it is never corrected).
struct StepRecord {
    int index = 0;
    std::string description;
    std::string kind;    // command|click|type_text|scroll|drag_drop|share_file|wait|capture_time|test
    std::string status;  // actions: ok|error; tests: pass|fail|error
    Value outcome;
    std::string started_at;
    int64_t duration_ms = 0;
    std::string agent_clock;

    Value to_json() const;
    static std::optional<StepRecord> from_json(const Value& v);
};

struct RunReport {
    int report_version = kReportVersion;
    std::string run_id;
    std::string author;
    std::string submitted_at;
    std::string engine_version;
    std::string playbook_digest;
    Value environment = Value::object();  // EnvironmentSpec snapshot
    std::string sandbox_root;             // provisioned root; empty for vm backends
    std::string pre_run_tree_hash;        // empty for vm backends
    std::vector<StepRecord> steps;
    Verdict verdict = Verdict::aborted_error;
    std::string abort_reason;  // set only when verdict is aborted_error
    Value captured_variables = Value::object();
    // Guest paths the run knowingly touched; an exclusion hint for
    // interpretation, nothing is filtered.
    std::vector<std::string> agent_touched_paths;

    std::string environment_id() const;
    Value to_json() const;
    static std::optional<RunReport> from_json(const Value& v);
};

// Canonical document form of a serialized playbook.
std::string playbook_digest(const Playbook& pb);

// Content-addressed identifier: stable across machines for identical runs.
std::string compute_run_id(const std::string& playbook_digest, const std::string& environment_id,
                           const std::string& engine_version, const std::string& submitted_at);

// Canonical JSON (stable key order), written atomically.
bool save_run_report(const RunReport& r, const std::filesystem::path& file);
std::variant<RunReport, std::string> load_run_report(const std::filesystem::path& file);

struct ReproCheck {
    enum class Verdict { reproduced, diverged, not_comparable };
    Verdict verdict = Verdict::not_comparable;
    std::vector<std::string> differences;
};

const char* to_string(ReproCheck::Verdict v);

// Field-level replay comparison: step kinds, order, statuses and test
// observed/expected values must match. Timestamps, durations and run ids are
// outside the comparison; each report's own sandbox root is rewritten to a
// placeholder first so per-run scratch paths cancel out. Reports of
// different playbooks or environments are not comparable.
ReproCheck reproduce_check(const RunReport& a, const RunReport& b);

}  // namespace tdf
