#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdf/environment.hpp"
#include "tdf/playbook.hpp"
#include "tdf/report.hpp"

namespace tdf {

// Action errors are not governed here: the environment's state is no longer
// trustworthy after one, so they always abort. A test whose status is
// `error` (the expectation could not be evaluated) aborts for the same
// reason. Nonzero command exits are outcomes, not errors, and continue by
// default.
struct FailurePolicy {
    enum class OnFailure { continue_run, abort_run };
    OnFailure on_test_fail = OnFailure::continue_run;
    OnFailure on_nonzero_exit = OnFailure::continue_run;
};

struct RunOptions {
    FailurePolicy policy;
    std::string author;  // defaults to $USER
    // Per-request bound; expiry poisons the session and aborts the run.
    std::optional<int64_t> action_deadline_ms;
};

// Provisions the environment from its clean state, drives the playbook's
// leaf steps strictly sequentially over one protocol session, and tears the
// environment down afterward even on abort. Never throws; every failure mode
// lands in the report's verdict.
RunReport run_experiment(const Playbook& pb, const EnvironmentSpec& env, const AssertionRegistry& registry,
                         const RunOptions& opts = {});

struct MatrixCell {
    std::string playbook_name;
    std::string environment_id;
    RunReport report;
};

struct MatrixResult {
    // Playbook-major, environments in input order within each playbook.
    std::vector<MatrixCell> cells;

    const RunReport* find(const std::string& playbook_name, const std::string& environment_id) const;
};

// One report per (playbook, environment) cell. Cells on distinct
// environments may run in parallel up to `parallelism`; cells sharing an
// environment id run sequentially. A failing cell never skips another.
MatrixResult run_matrix(const std::vector<std::pair<std::string, Playbook>>& playbooks,
                        const std::vector<EnvironmentSpec>& envs, const AssertionRegistry& registry,
                        const RunOptions& opts = {}, int parallelism = 4);

}  // namespace tdf
