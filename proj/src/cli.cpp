#include "tdf/cli.hpp"

#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <set>

#include "tdf/agent.hpp"
#include "tdf/cursor.hpp"
#include "tdf/diff.hpp"
#include "tdf/report.hpp"
#include "tdf/transport.hpp"
#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFindings = 1;
constexpr int kUnusable = 2;
constexpr int kAborted = 3;

int fail(const std::string& message) {
    std::fprintf(stderr, "tdf: %s\n", message.c_str());
    return kUnusable;
}

std::optional<std::string> parse_policy_value(const std::string& text, FailurePolicy::OnFailure& slot) {
    if (text == "continue") slot = FailurePolicy::OnFailure::continue_run;
    else if (text == "abort") slot = FailurePolicy::OnFailure::abort_run;
    else return "expected 'continue' or 'abort', got '" + text + "'";
    return std::nullopt;
}

std::string describe(const Diagnostic& d) {
    if (d.pos.line > 0) return "line " + std::to_string(d.pos.line) + ": " + d.message;
    return d.message;
}

int verdict_exit(Verdict v) {
    switch (v) {
        case Verdict::all_pass: return kOk;
        case Verdict::test_failures: return kFindings;
        case Verdict::aborted_error: return kAborted;
    }
    return kAborted;
}

// System variables a playbook may reference without naming an environment:
// the union over the registry. A missing registry file narrows the union to
// nothing; a malformed one is a configuration error.
std::variant<std::set<std::string>, std::string> sys_var_union(const fs::path& environments_file) {
    std::set<std::string> names;
    std::error_code ec;
    if (!fs::exists(environments_file, ec)) return names;
    auto loaded = load_environment_registry(environments_file);
    if (auto* err = std::get_if<std::string>(&loaded)) return *err;
    for (const auto& spec : std::get<EnvironmentRegistry>(loaded).specs)
        for (const auto& [name, value] : spec.sys_var_map) names.insert(name);
    return names;
}

struct ParsedPlaybook {
    std::string name;
    Playbook playbook;
};

std::variant<ParsedPlaybook, std::string> read_playbook(const fs::path& path) {
    auto text = read_file(path);
    if (!text) return "cannot read playbook '" + path.string() + "'";
    ParseResult pr = parse_playbook(*text);
    if (!pr.ok()) {
        std::string msg = "playbook '" + path.string() + "' does not parse";
        if (!pr.diagnostics.empty()) msg += ": " + describe(pr.diagnostics.front());
        return msg;
    }
    return ParsedPlaybook{path.stem().string(), std::move(*pr.playbook)};
}

int cmd_validate(const CliConfig& cfg, const std::string& playbook_path) {
    auto text = read_file(playbook_path);
    if (!text) return fail("cannot read playbook '" + playbook_path + "'");

    ParseResult pr = parse_playbook(*text);
    std::vector<std::string> findings;
    for (const Diagnostic& d : pr.diagnostics) findings.push_back(describe(d));

    if (pr.playbook) {
        auto vars = sys_var_union(cfg.environments_file);
        if (auto* err = std::get_if<std::string>(&vars)) return fail(*err);
        ValidationReport vr =
            validate(*pr.playbook, AssertionRegistry::core(), std::get<std::set<std::string>>(vars));
        for (const Diagnostic& d : vr.findings) findings.push_back(describe(d));
    }

    if (!findings.empty()) {
        for (const std::string& f : findings) std::printf("finding: %s\n", f.c_str());
        std::printf("%zu finding(s)\n", findings.size());
        return kFindings;
    }
    if (auto steps = count_expanded_steps(*pr.playbook))
        std::printf("ok: expands to %lld steps\n", static_cast<long long>(*steps));
    else
        std::printf("ok: step count depends on variable values\n");
    return kOk;
}

std::variant<EnvironmentRegistry, std::string> read_registry(const CliConfig& cfg) {
    auto loaded = load_environment_registry(cfg.environments_file);
    if (auto* err = std::get_if<std::string>(&loaded))
        return "environments file '" + cfg.environments_file + "': " + *err;
    return loaded;
}

int cmd_run(const CliConfig& cfg, const std::string& playbook_path, const std::string& env_id,
            const RunOptions& opts, bool verbose) {
    auto parsed = read_playbook(playbook_path);
    if (auto* err = std::get_if<std::string>(&parsed)) return fail(*err);

    auto registry = read_registry(cfg);
    if (auto* err = std::get_if<std::string>(&registry)) return fail(*err);
    const EnvironmentSpec* spec = std::get<EnvironmentRegistry>(registry).find(env_id);
    if (!spec) return fail("unknown environment '" + env_id + "'");

    RunReport report =
        run_experiment(std::get<ParsedPlaybook>(parsed).playbook, *spec, AssertionRegistry::core(), opts);

    fs::path out = fs::path(cfg.reports_dir) / (report.run_id + ".json");
    if (!save_run_report(report, out)) return fail("cannot write report '" + out.string() + "'");
    if (verbose) std::fprintf(stderr, "tdf: wrote %s\n", out.string().c_str());

    std::printf("verdict: %s (%zu steps)\n", to_string(report.verdict), report.steps.size());
    if (!report.abort_reason.empty()) std::printf("abort reason: %s\n", report.abort_reason.c_str());
    std::printf("report: %s\n", out.string().c_str());
    return verdict_exit(report.verdict);
}

int cmd_matrix(const CliConfig& cfg, const std::vector<std::string>& playbook_paths,
               const std::vector<std::string>& env_ids, const RunOptions& opts, int parallelism,
               bool verbose) {
    std::vector<std::pair<std::string, Playbook>> playbooks;
    std::set<std::string> seen_names;
    for (const std::string& path : playbook_paths) {
        auto parsed = read_playbook(path);
        if (auto* err = std::get_if<std::string>(&parsed)) return fail(*err);
        auto& pb = std::get<ParsedPlaybook>(parsed);
        if (!seen_names.insert(pb.name).second)
            return fail("duplicate playbook name '" + pb.name + "'");
        playbooks.emplace_back(pb.name, std::move(pb.playbook));
    }

    auto registry = read_registry(cfg);
    if (auto* err = std::get_if<std::string>(&registry)) return fail(*err);

    std::vector<EnvironmentSpec> envs;
    std::set<std::string> seen_envs;
    for (const std::string& id : env_ids) {
        const EnvironmentSpec* spec = std::get<EnvironmentRegistry>(registry).find(id);
        if (!spec) return fail("unknown environment '" + id + "'");
        if (!seen_envs.insert(id).second) return fail("duplicate environment '" + id + "'");
        envs.push_back(*spec);
    }

    MatrixResult result = run_matrix(playbooks, envs, AssertionRegistry::core(), opts, parallelism);

    Value index = Value::array();
    int exit_code = kOk;
    for (const MatrixCell& cell : result.cells) {
        fs::path out = fs::path(cfg.reports_dir) / (cell.report.run_id + ".json");
        if (!save_run_report(cell.report, out)) return fail("cannot write report '" + out.string() + "'");
        index.push_back(Value{{"playbook", cell.playbook_name},
                              {"environment", cell.environment_id},
                              {"run_id", cell.report.run_id},
                              {"verdict", to_string(cell.report.verdict)},
                              {"report", out.string()}});
        std::printf("%s x %s: %s\n", cell.playbook_name.c_str(), cell.environment_id.c_str(),
                    to_string(cell.report.verdict));
        exit_code = std::max(exit_code, verdict_exit(cell.report.verdict));
    }

    fs::path index_path = fs::path(cfg.reports_dir) / "matrix-index.json";
    std::error_code ec;
    fs::create_directories(index_path.parent_path(), ec);
    Value doc{{"cells", index}};
    if (!atomic_write_file(index_path, doc.dump(2) + "\n"))
        return fail("cannot write index '" + index_path.string() + "'");
    if (verbose) std::fprintf(stderr, "tdf: wrote %s\n", index_path.string().c_str());
    std::printf("%zu cell(s), index: %s\n", result.cells.size(), index_path.string().c_str());
    return exit_code;
}

int cmd_diff(const CliConfig& cfg, const std::string& baseline_dir,
             const std::vector<std::string>& candidate_dirs, bool csv, bool verbose) {
    LoadOutcome baseline = load_report(baseline_dir);
    if (!baseline.ok()) return fail("baseline '" + baseline.report_id + "': " + baseline.error);
    if (baseline.missing()) return fail("baseline report '" + baseline_dir + "' is missing");

    std::vector<DivergenceRecord> records;
    std::set<std::string> seen_ids;
    for (const std::string& dir : candidate_dirs) {
        LoadOutcome cand = load_report(dir);
        if (!cand.ok()) return fail("candidate '" + cand.report_id + "': " + cand.error);
        if (!seen_ids.insert(cand.report_id).second)
            return fail("duplicate candidate '" + cand.report_id + "'");
        records.push_back(cand.missing() ? compare_missing(baseline.report->report_id, cand.report_id)
                                         : compare(*baseline.report, *cand.report));
    }

    bool any_findings = false;
    std::error_code ec;
    fs::create_directories(cfg.reports_dir, ec);
    for (const DivergenceRecord& rec : records) {
        any_findings = any_findings || !rec.empty();
        fs::path out = fs::path(cfg.reports_dir) / ("divergence-" + rec.candidate_id + ".json");
        if (!atomic_write_file(out, rec.to_json().dump(2) + "\n"))
            return fail("cannot write '" + out.string() + "'");
        if (verbose) std::fprintf(stderr, "tdf: wrote %s\n", out.string().c_str());
    }

    auto aggregated = aggregate(records);
    if (auto* err = std::get_if<std::string>(&aggregated)) return fail(*err);
    const auto& matrix = std::get<DivergenceMatrix>(aggregated);

    fs::path matrix_path = fs::path(cfg.reports_dir) / "divergence-matrix.json";
    if (!atomic_write_file(matrix_path, matrix.to_json().dump(2) + "\n"))
        return fail("cannot write '" + matrix_path.string() + "'");
    if (verbose) std::fprintf(stderr, "tdf: wrote %s\n", matrix_path.string().c_str());

    std::fputs(render_matrix(matrix, csv ? MatrixFormat::csv : MatrixFormat::text_table).c_str(),
               stdout);
    return any_findings ? kFindings : kOk;
}

int cmd_reproduce(const std::string& path_a, const std::string& path_b) {
    auto a = load_run_report(path_a);
    if (auto* err = std::get_if<std::string>(&a)) return fail("'" + path_a + "': " + *err);
    auto b = load_run_report(path_b);
    if (auto* err = std::get_if<std::string>(&b)) return fail("'" + path_b + "': " + *err);

    ReproCheck rc = reproduce_check(std::get<RunReport>(a), std::get<RunReport>(b));
    std::printf("%s\n", to_string(rc.verdict));
    for (const std::string& d : rc.differences) std::printf("  %s\n", d.c_str());
    switch (rc.verdict) {
        case ReproCheck::Verdict::reproduced: return kOk;
        case ReproCheck::Verdict::diverged: return kFindings;
        case ReproCheck::Verdict::not_comparable: return kUnusable;
    }
    return kUnusable;
}

// "host:port"; a bare port means loopback.
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

struct AgentArgs {
    std::string listen = "127.0.0.1:" + std::to_string(kDefaultAgentPort);
    std::string mode = "sandbox";
    std::string root;
    std::string sys_vars_file;
    std::string screen_model_file;
    GuiRetryPolicy retry;
};

int cmd_agent(const AgentArgs& args) {
    AgentConfig cfg;
    cfg.retry = args.retry;
    cfg.root.mode = args.mode == "native" ? ExecutionRoot::Mode::native : ExecutionRoot::Mode::sandbox;

    if (cfg.root.mode == ExecutionRoot::Mode::native && args.screen_model_file.empty() &&
        !std::getenv("DISPLAY"))
        return fail("native mode requires a display (DISPLAY is unset)");

    if (cfg.root.mode == ExecutionRoot::Mode::sandbox) {
        if (args.root.empty()) return fail("sandbox mode requires --root");
        std::error_code ec;
        cfg.root.root_path = fs::weakly_canonical(args.root, ec);
        if (ec || !fs::is_directory(cfg.root.root_path))
            return fail("root '" + args.root + "' is not a directory");
    }
    if (!args.sys_vars_file.empty()) {
        auto vars = load_sys_vars_file(args.sys_vars_file);
        if (auto* err = std::get_if<std::string>(&vars)) return fail(*err);
        cfg.root.sys_var_map = std::move(std::get<std::map<std::string, std::string>>(vars));
    }
    if (!args.screen_model_file.empty()) {
        auto model = load_screen_model_file(args.screen_model_file);
        if (auto* err = std::get_if<std::string>(&model)) return fail(*err);
        cfg.screen_model = std::move(std::get<ScreenModel>(model));
    }

    std::string host;
    int port = 0;
    if (!split_listen_addr(args.listen, host, port))
        return fail("bad --listen address '" + args.listen + "'");

    auto bound = TcpListener::bind(host, port);
    if (auto* err = std::get_if<std::string>(&bound)) return fail(*err);
    auto& listener = std::get<std::unique_ptr<TcpListener>>(bound);
    std::fprintf(stderr, "tdf: agent listening on %s:%d\n", host.c_str(), listener->port());

    Agent agent(std::move(cfg), AssertionRegistry::core());
    while (true) {
        auto conn = listener->accept(std::nullopt);
        if (!conn) return fail("listener failed");
        switch (agent.serve(*conn)) {
            case Agent::ServeResult::clean_shutdown: return kOk;
            case Agent::ServeResult::handshake_refused: return kAborted;
            case Agent::ServeResult::connection_lost:
                break;  // reconnects start a fresh session
        }
    }
}

}  // namespace

std::variant<CliConfig, std::string> load_cli_config(const fs::path& file) {
    CliConfig cfg;
    auto bad = [&](const std::string& msg) { return "config '" + file.string() + "': " + msg; };

    YAML::Node doc;
    try {
        doc = YAML::LoadFile(file.string());
    } catch (const std::exception& e) {
        return bad(e.what());
    }
    if (!doc.IsMap()) return bad("expected a mapping");

    fs::path anchor = file.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q.string() : (anchor / q).lexically_normal().string();
    };

    try {
        for (const auto& kv : doc) {
            const std::string key = kv.first.as<std::string>();
            if (key == "environments_file") {
                cfg.environments_file = resolve(kv.second.as<std::string>());
            } else if (key == "reports_dir") {
                cfg.reports_dir = resolve(kv.second.as<std::string>());
            } else if (key == "cv_backend") {
                cfg.cv_backend = kv.second.as<std::string>();
            } else if (key == "parallelism") {
                cfg.parallelism = kv.second.as<int>();
            } else if (key == "failure_policy") {
                if (!kv.second.IsMap()) return bad("failure_policy must be a mapping");
                for (const auto& pkv : kv.second) {
                    const std::string pk = pkv.first.as<std::string>();
                    const std::string pv = pkv.second.as<std::string>();
                    if (pk == "on_test_fail") {
                        if (auto err = parse_policy_value(pv, cfg.policy.on_test_fail))
                            return bad("on_test_fail: " + *err);
                    } else if (pk == "on_nonzero_exit") {
                        if (auto err = parse_policy_value(pv, cfg.policy.on_nonzero_exit))
                            return bad("on_nonzero_exit: " + *err);
                    } else if (pk == "on_action_error") {
                        if (pv != "abort") return bad("on_action_error is fixed to abort");
                    } else {
                        return bad("unknown failure_policy key '" + pk + "'");
                    }
                }
            } else {
                return bad("unknown key '" + key + "'");
            }
        }
    } catch (const std::exception& e) {
        return bad(e.what());
    }
    if (cfg.parallelism < 1) return bad("parallelism must be at least 1");
    return cfg;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Declarative experiment runner for forensic tool validation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_flag;
    std::string reports_dir_flag;
    bool verbose = false;
    app.add_option("--config", config_flag, "configuration file (overrides $TDF_CONFIG)");
    app.add_option("--reports-dir", reports_dir_flag, "directory receiving reports and artifacts");
    app.add_flag("--verbose", verbose, "explain configuration and artifact paths on stderr");

    auto* validate_cmd = app.add_subcommand("validate", "statically check a playbook");
    std::string v_playbook;
    validate_cmd->add_option("playbook", v_playbook, "playbook document")->required();

    std::string author;
    std::string on_test_fail, on_nonzero_exit;
    auto add_run_flags = [&](CLI::App* cmd) {
        cmd->add_option("--author", author, "recorded as the report author");
        cmd->add_option("--on-test-fail", on_test_fail, "continue or abort after a failed test")
            ->check(CLI::IsMember({"continue", "abort"}));
        cmd->add_option("--on-nonzero-exit", on_nonzero_exit, "continue or abort after a nonzero exit")
            ->check(CLI::IsMember({"continue", "abort"}));
    };

    auto* run_cmd = app.add_subcommand("run", "run one playbook in one environment");
    std::string r_playbook, r_env;
    run_cmd->add_option("playbook", r_playbook, "playbook document")->required();
    run_cmd->add_option("--env", r_env, "environment id from the environments file")->required();
    add_run_flags(run_cmd);

    auto* matrix_cmd = app.add_subcommand("matrix", "run playbooks across environments");
    std::vector<std::string> m_playbooks, m_envs;
    int m_parallelism = 0;
    matrix_cmd->add_option("playbooks", m_playbooks, "playbook documents")->required();
    matrix_cmd->add_option("--env", m_envs, "environment id, repeatable");
    matrix_cmd->add_option("--parallelism", m_parallelism, "concurrent environments")
        ->check(CLI::PositiveNumber);
    add_run_flags(matrix_cmd);

    auto* diff_cmd = app.add_subcommand("diff", "diff tool report versions against a baseline");
    std::string d_baseline;
    std::vector<std::string> d_candidates;
    bool d_csv = false;
    diff_cmd->add_option("--baseline", d_baseline, "baseline report directory")->required();
    diff_cmd->add_option("--candidate", d_candidates, "candidate report directory, repeatable")
        ->required();
    diff_cmd->add_flag("--csv", d_csv, "render the divergence matrix as CSV");

    auto* repro_cmd = app.add_subcommand("reproduce", "replay comparison of two run reports");
    std::string p_a, p_b;
    repro_cmd->add_option("report_a", p_a, "first run report")->required();
    repro_cmd->add_option("report_b", p_b, "second run report")->required();

    auto* agent_cmd = app.add_subcommand("agent", "serve the in-guest agent");
    AgentArgs agent_args;
    agent_cmd->add_option("--listen", agent_args.listen, "address to listen on, host:port or bare port");
    agent_cmd->add_option("--mode", agent_args.mode, "execution mode")
        ->check(CLI::IsMember({"native", "sandbox"}));
    agent_cmd->add_option("--root", agent_args.root, "execution root directory (sandbox mode)");
    agent_cmd->add_option("--sys-vars", agent_args.sys_vars_file, "system variable mapping file");
    agent_cmd->add_option("--screen-model", agent_args.screen_model_file, "screen model document");
    agent_cmd->add_option("--retry-attempts", agent_args.retry.attempts, "GUI resolution attempts")
        ->check(CLI::PositiveNumber);
    agent_cmd->add_option("--retry-spacing-ms", agent_args.retry.spacing_ms,
                          "delay between GUI resolution attempts")
        ->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kUnusable;
    }

    CliConfig cfg;
    std::string config_path = config_flag;
    if (config_path.empty()) {
        if (const char* env = std::getenv("TDF_CONFIG")) config_path = env;
    }
    if (!config_path.empty()) {
        auto loaded = load_cli_config(config_path);
        if (auto* err = std::get_if<std::string>(&loaded)) return fail(*err);
        cfg = std::get<CliConfig>(loaded);
    }
    if (!reports_dir_flag.empty()) cfg.reports_dir = reports_dir_flag;
    if (!on_test_fail.empty())
        if (auto err = parse_policy_value(on_test_fail, cfg.policy.on_test_fail)) return fail(*err);
    if (!on_nonzero_exit.empty())
        if (auto err = parse_policy_value(on_nonzero_exit, cfg.policy.on_nonzero_exit)) return fail(*err);
    if (m_parallelism > 0) cfg.parallelism = m_parallelism;

    if (verbose) {
        std::fprintf(stderr, "tdf: config %s\n",
                     config_path.empty() ? "(defaults)" : config_path.c_str());
        std::fprintf(stderr, "tdf: environments %s, reports %s\n", cfg.environments_file.c_str(),
                     cfg.reports_dir.c_str());
    }

    RunOptions opts;
    opts.policy = cfg.policy;
    opts.author = author;

    if (validate_cmd->parsed()) return cmd_validate(cfg, v_playbook);
    if (run_cmd->parsed()) return cmd_run(cfg, r_playbook, r_env, opts, verbose);
    if (matrix_cmd->parsed())
        return cmd_matrix(cfg, m_playbooks, m_envs, opts, cfg.parallelism, verbose);
    if (diff_cmd->parsed()) return cmd_diff(cfg, d_baseline, d_candidates, d_csv, verbose);
    if (repro_cmd->parsed()) return cmd_reproduce(p_a, p_b);
    if (agent_cmd->parsed()) return cmd_agent(agent_args);
    return fail("no command given");
}

}  // namespace tdf
