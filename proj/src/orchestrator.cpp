#include "tdf/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "tdf/cursor.hpp"
#include "tdf/session.hpp"
#include "tdf/util.hpp"

namespace tdf {

namespace {

// Host-side step clock, clamped non-decreasing so the recorded send instants
// always satisfy "next send >= previous receipt".
class StepClock {
public:
    int64_t now_ms() {
        int64_t t = unix_millis(now_utc());
        if (t < floor_) t = floor_;
        floor_ = t;
        return t;
    }
    void advance_floor(int64_t t) { floor_ = std::max(floor_, t); }

private:
    int64_t floor_ = 0;
};

std::string default_author() {
    const char* user = ::getenv("USER");
    return user && *user ? user : "unknown";
}

std::string trim_text(const std::string& s, size_t cap = 80) {
    return s.size() <= cap ? s : s.substr(0, cap) + "...";
}

// Descriptions show the raw (unrendered) document text: it is run-invariant
// and names the operator's intent rather than a scratch path.
std::string target_text(const TargetSpec& t) {
    switch (t.kind) {
        case TargetSpec::Kind::text: return "'" + t.text.raw + "'";
        case TargetSpec::Kind::image: return "[" + t.image.raw + "]";
        case TargetSpec::Kind::coordinates:
            return "(" + std::to_string(t.x) + ", " + std::to_string(t.y) + ")";
    }
    return "";
}

const char* direction_text(ShareFileAction::Direction d) {
    return d == ShareFileAction::Direction::host_to_guest ? "host->guest" : "guest->host";
}

}  // namespace

RunReport run_experiment(const Playbook& pb, const EnvironmentSpec& env, const AssertionRegistry& registry,
                         const RunOptions& opts) {
    RunReport report;
    report.engine_version = kEngineVersion;
    report.author = opts.author.empty() ? default_author() : opts.author;
    report.submitted_at = format_rfc3339_ms(now_utc());
    report.playbook_digest = playbook_digest(pb);
    report.environment = env.to_json();

    Scope scope;
    std::vector<std::string> touched;

    auto finish = [&](Verdict v, const std::string& abort_reason) {
        report.verdict = v;
        report.abort_reason = v == Verdict::aborted_error ? abort_reason : "";
        report.run_id = compute_run_id(report.playbook_digest, env.id, report.engine_version, report.submitted_at);
        Value captured = Value::object();
        for (const auto& decl : pb.variables)
            if (decl.kind == VarKind::dynamic)
                if (const Value* val = scope.find(decl.name)) captured[decl.name] = *val;
        report.captured_variables = captured;
        report.agent_touched_paths = touched;
        return report;
    };

    try {
        std::set<std::string> sys_var_names;
        for (const auto& [k, v] : env.sys_var_map) sys_var_names.insert(k);
        ValidationReport vr = validate(pb, registry, sys_var_names);
        if (!vr.ok())
            return finish(Verdict::aborted_error, "playbook failed validation: " + vr.findings.front().message);

        auto backend_or = make_backend(env, registry);
        if (auto* err = std::get_if<std::string>(&backend_or)) return finish(Verdict::aborted_error, *err);
        auto backend = std::move(std::get<std::unique_ptr<EnvironmentBackend>>(backend_or));

        if (auto err = backend->prepare())
            return finish(Verdict::aborted_error, "provisioning failed: " + *err);
        report.sandbox_root = backend->root() ? backend->root()->string() : "";
        report.pre_run_tree_hash = backend->pre_run_tree_hash().value_or("");
        if (auto err = backend->start())
            return finish(Verdict::aborted_error, "environment start failed: " + *err);

        auto transport_or = backend->connect();
        if (auto* err = std::get_if<std::string>(&transport_or))
            return finish(Verdict::aborted_error, "agent connection failed: " + *err);

        Handshake hello;
        hello.capabilities = {"file_transfer"};
        hello.registry_digest = registry.digest();
        auto session_or =
            Session::establish(std::move(std::get<std::unique_ptr<FrameTransport>>(transport_or)), hello);
        if (auto* err = std::get_if<std::string>(&session_or))
            return finish(Verdict::aborted_error, "handshake failed: " + *err);
        // Declared after `backend` so it is destroyed first; the backend can
        // then unblock and join its serve thread.
        std::unique_ptr<Session> session = std::move(std::get<std::unique_ptr<Session>>(session_or));

        for (const auto& [k, v] : backend->sys_vars()) scope.set(k, v);
        for (const auto& decl : pb.variables) {
            if (decl.kind == VarKind::dynamic) {
                scope.unset_dynamic.insert(decl.name);
                continue;
            }
            std::string rendered;
            try {
                rendered = render_template(decl.value, scope);
            } catch (const TemplateError& e) {
                session->shutdown();
                return finish(Verdict::aborted_error, "variable '" + decl.name + "': " + e.what());
            }
            auto coerced = coerce_rendered(decl.kind, rendered);
            if (!coerced) {
                session->shutdown();
                return finish(Verdict::aborted_error, "variable '" + decl.name + "' does not parse as " +
                                                          to_string(decl.kind));
            }
            scope.set(decl.name, *coerced);
        }

        ExecutionCursor cursor(pb);
        StepClock clock;
        int index = 0;
        bool aborted = false;
        bool any_fail = false;
        bool policy_stop = false;
        std::string stop_reason;

        auto touch = [&](const std::string& path) {
            if (std::find(touched.begin(), touched.end(), path) == touched.end()) touched.push_back(path);
        };

        while (!aborted && !policy_stop) {
            const Step* step = nullptr;
            try {
                step = cursor.next(scope);
            } catch (const CursorError& e) {
                aborted = true;
                stop_reason = "step expansion failed: " + std::string(e.what());
                break;
            }
            if (!step) break;

            int64_t started_ms = clock.now_ms();
            auto t0 = std::chrono::steady_clock::now();
            StepRecord rec;
            rec.index = index++;
            rec.started_at = format_rfc3339_ms(from_unix_millis(started_ms));

            auto fail_render = [&](const std::string& what) {
                rec.status = "error";
                rec.outcome = Value{{"error_class", "render_error"}, {"message", what}};
                aborted = true;
                stop_reason = "template rendering failed: " + what;
            };

            // Wire action call; error responses (agent-side or synthesized)
            // always abort.
            auto do_call = [&](RequestKind kind, Value payload) -> Response {
                Response resp = session->call(kind, std::move(payload), opts.action_deadline_ms);
                rec.agent_clock = resp.agent_clock;
                rec.outcome = resp.payload;
                return resp;
            };
            auto do_action_call = [&](Value payload) {
                Response resp = do_call(RequestKind::action, std::move(payload));
                if (resp.status == ResponseStatus::ok) {
                    rec.status = "ok";
                } else {
                    rec.status = "error";
                    aborted = true;
                    stop_reason = "action failed: " + error_text(resp);
                }
            };
            auto render_target = [&](const TargetSpec& t, Value& out) -> bool {
                try {
                    switch (t.kind) {
                        case TargetSpec::Kind::text:
                            out = Value{{"kind", "text"}, {"text", render_template(t.text, scope)}};
                            break;
                        case TargetSpec::Kind::image:
                            out = Value{{"kind", "image"}, {"image", render_template(t.image, scope)}};
                            break;
                        case TargetSpec::Kind::coordinates:
                            out = Value{{"kind", "coordinates"}, {"x", t.x}, {"y", t.y}};
                            break;
                    }
                    return true;
                } catch (const TemplateError& e) {
                    fail_render(e.what());
                    return false;
                }
            };

            if (const auto* ti = std::get_if<TestInvocation>(&step->node)) {
                rec.kind = "test";
                rec.description = "test " + ti->test_name;
                const TestDef* def = pb.find_test(ti->test_name);
                if (!def) {
                    rec.status = "error";
                    aborted = true;
                    stop_reason = "test '" + ti->test_name + "' is not defined";
                } else {
                    Value params = Value::object();
                    bool rendered_ok = true;
                    for (const auto& [key, val] : def->parameter) {
                        if (val.is_string()) {
                            try {
                                params[key] = render_template(TemplateString(val.get<std::string>()), scope);
                            } catch (const TemplateError& e) {
                                fail_render(std::string("test '") + ti->test_name + "': " + e.what());
                                rendered_ok = false;
                                break;
                            }
                        } else {
                            params[key] = val;
                        }
                    }
                    if (rendered_ok) {
                        Response resp = do_call(RequestKind::test, Value{{"name", ti->test_name},
                                                                         {"function", def->function},
                                                                         {"params", params}});
                        switch (resp.status) {
                            case ResponseStatus::test_pass: rec.status = "pass"; break;
                            case ResponseStatus::test_fail:
                                rec.status = "fail";
                                any_fail = true;
                                if (opts.policy.on_test_fail == FailurePolicy::OnFailure::abort_run)
                                    policy_stop = true;
                                break;
                            default:
                                // An unevaluable expectation leaves the run's
                                // ground truth unverifiable.
                                rec.status = "error";
                                aborted = true;
                                stop_reason =
                                    "test '" + ti->test_name + "' could not be evaluated: " + error_text(resp);
                                break;
                        }
                    }
                }
            } else if (const auto* action = std::get_if<Action>(&step->node)) {
                std::visit(
                    [&](const auto& a) {
                        using T = std::decay_t<decltype(a)>;
                        if constexpr (std::is_same_v<T, ClickAction>) {
                            rec.kind = "click";
                            rec.description =
                                std::string("click ") + to_string(a.button) + " " + target_text(a.target);
                            Value tgt;
                            if (!render_target(a.target, tgt)) return;
                            do_action_call(Value{{"kind", "click"}, {"button", to_string(a.button)}, {"target", tgt}});
                        } else if constexpr (std::is_same_v<T, TypeTextAction>) {
                            rec.kind = "type_text";
                            rec.description = "type_text '" + trim_text(a.text.raw) + "'";
                            try {
                                std::string text = render_template(a.text, scope);
                                do_action_call(Value{{"kind", "type_text"}, {"text", text}});
                            } catch (const TemplateError& e) {
                                fail_render(e.what());
                            }
                        } else if constexpr (std::is_same_v<T, ScrollAction>) {
                            rec.kind = "scroll";
                            rec.description = "scroll " + a.direction + " x" + std::to_string(a.amount);
                            do_action_call(
                                Value{{"kind", "scroll"}, {"direction", a.direction}, {"amount", a.amount}});
                        } else if constexpr (std::is_same_v<T, DragDropAction>) {
                            rec.kind = "drag_drop";
                            rec.description = "drag_drop " + target_text(a.from) + " -> " + target_text(a.to);
                            Value from, to;
                            if (!render_target(a.from, from) || !render_target(a.to, to)) return;
                            do_action_call(Value{{"kind", "drag_drop"}, {"from", from}, {"to", to}});
                        } else if constexpr (std::is_same_v<T, CommandAction>) {
                            rec.kind = "command";
                            rec.description = "command: " + trim_text(a.command.raw);
                            std::string command;
                            try {
                                command = render_template(a.command, scope);
                            } catch (const TemplateError& e) {
                                fail_render(e.what());
                                return;
                            }
                            do_action_call(Value{{"kind", "command"}, {"command", command}, {"shell", a.shell}});
                            if (rec.status == "ok") {
                                int64_t exit_code = rec.outcome.is_object()
                                                        ? rec.outcome.value("exit_code", int64_t{0})
                                                        : 0;
                                if (exit_code != 0 &&
                                    opts.policy.on_nonzero_exit == FailurePolicy::OnFailure::abort_run) {
                                    aborted = true;
                                    stop_reason = "command exited " + std::to_string(exit_code) +
                                                  " under the abort policy";
                                }
                            }
                        } else if constexpr (std::is_same_v<T, ShareFileAction>) {
                            rec.kind = "share_file";
                            rec.description = std::string("share_file ") + direction_text(a.direction) + " '" +
                                              a.src.raw + "' -> '" + a.dst.raw + "'";
                            std::string src, dst;
                            try {
                                src = render_template(a.src, scope);
                                dst = render_template(a.dst, scope);
                            } catch (const TemplateError& e) {
                                fail_render(e.what());
                                return;
                            }
                            bool to_guest = a.direction == ShareFileAction::Direction::host_to_guest;
                            std::optional<std::string> err = to_guest ? session->push_file(src, dst)
                                                                      : session->fetch_file(src, dst);
                            if (err) {
                                rec.status = "error";
                                rec.outcome = Value{{"error_class", "transfer_failed"}, {"message", *err}};
                                aborted = true;
                                stop_reason = "file transfer failed: " + *err;
                                return;
                            }
                            touch(to_guest ? dst : src);
                            const std::string& local = to_guest ? src : dst;
                            std::error_code ec;
                            auto bytes = std::filesystem::file_size(local, ec);
                            rec.status = "ok";
                            rec.outcome = Value{{"direction", direction_text(a.direction)},
                                                {"src", src},
                                                {"dst", dst},
                                                {"bytes", ec ? Value() : Value(bytes)},
                                                {"content_hash",
                                                 sha256_file_hex(local).value_or("")}};
                        } else if constexpr (std::is_same_v<T, WaitAction>) {
                            rec.kind = "wait";
                            rec.description = "wait " + std::to_string(a.duration_ms) + " ms";
                            do_action_call(Value{{"kind", "wait"}, {"duration_ms", a.duration_ms}});
                        } else if constexpr (std::is_same_v<T, CaptureTimeAction>) {
                            rec.kind = "capture_time";
                            rec.description = "capture_time -> " + a.into;
                            bool overwrote = scope.find(a.into) != nullptr;
                            scope.set(a.into, rec.started_at);
                            rec.status = "ok";
                            rec.outcome = Value{{"variable", a.into},
                                                {"value", rec.started_at},
                                                {"overwrote", overwrote}};
                        }
                    },
                    *action);
            } else {
                // Loops and conditionals never surface from the cursor.
                rec.kind = "internal";
                rec.status = "error";
                aborted = true;
                stop_reason = "cursor yielded a non-leaf step";
            }

            rec.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            clock.advance_floor(started_ms + rec.duration_ms);
            report.steps.push_back(std::move(rec));
        }

        session->shutdown();
        if (aborted) return finish(Verdict::aborted_error, stop_reason);
        return finish(any_fail ? Verdict::test_failures : Verdict::all_pass, "");
    } catch (const std::exception& e) {
        return finish(Verdict::aborted_error, std::string("internal error: ") + e.what());
    }
}

const RunReport* MatrixResult::find(const std::string& playbook_name, const std::string& environment_id) const {
    for (const auto& c : cells)
        if (c.playbook_name == playbook_name && c.environment_id == environment_id) return &c.report;
    return nullptr;
}

MatrixResult run_matrix(const std::vector<std::pair<std::string, Playbook>>& playbooks,
                        const std::vector<EnvironmentSpec>& envs, const AssertionRegistry& registry,
                        const RunOptions& opts, int parallelism) {
    MatrixResult out;
    if (playbooks.empty() || envs.empty()) return out;

    out.cells.resize(playbooks.size() * envs.size());
    for (size_t p = 0; p < playbooks.size(); ++p) {
        for (size_t e = 0; e < envs.size(); ++e) {
            auto& cell = out.cells[p * envs.size() + e];
            cell.playbook_name = playbooks[p].first;
            cell.environment_id = envs[e].id;
        }
    }

    // Cells sharing an environment id form one sequential lane; lanes run in
    // parallel up to the configured limit.
    std::vector<std::vector<size_t>> lanes;
    {
        std::map<std::string, size_t> lane_of;
        for (size_t e = 0; e < envs.size(); ++e) {
            auto [it, inserted] = lane_of.emplace(envs[e].id, lanes.size());
            if (inserted) lanes.emplace_back();
            lanes[it->second].push_back(e);
        }
    }

    std::atomic<size_t> next_lane{0};
    auto work = [&] {
        while (true) {
            size_t li = next_lane.fetch_add(1);
            if (li >= lanes.size()) return;
            for (size_t e : lanes[li])
                for (size_t p = 0; p < playbooks.size(); ++p)
                    out.cells[p * envs.size() + e].report =
                        run_experiment(playbooks[p].second, envs[e], registry, opts);
        }
    };

    int workers = std::max(1, std::min(parallelism, static_cast<int>(lanes.size())));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

}  // namespace tdf
