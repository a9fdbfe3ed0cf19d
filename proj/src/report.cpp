#include "tdf/report.hpp"

#include <cctype>

#include "tdf/util.hpp"

namespace tdf {

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::all_pass: return "all_pass";
        case Verdict::test_failures: return "test_failures";
        case Verdict::aborted_error: return "aborted_error";
    }
    return "aborted_error";
}

std::optional<Verdict> verdict_from_string(std::string_view s) {
    if (s == "all_pass") return Verdict::all_pass;
    if (s == "test_failures") return Verdict::test_failures;
    if (s == "aborted_error") return Verdict::aborted_error;
    return std::nullopt;
}

const char* to_string(ReproCheck::Verdict v) {
    switch (v) {
        case ReproCheck::Verdict::reproduced: return "reproduced";
        case ReproCheck::Verdict::diverged: return "diverged";
        case ReproCheck::Verdict::not_comparable: return "not_comparable";
    }
    return "not_comparable";
}

Value StepRecord::to_json() const {
    return Value{{"index", index},
                 {"description", description},
                 {"kind", kind},
                 {"status", status},
                 {"outcome", outcome},
                 {"started_at", started_at},
                 {"duration_ms", duration_ms},
                 {"agent_clock", agent_clock}};
}

std::optional<StepRecord> StepRecord::from_json(const Value& v) {
    if (!v.is_object()) return std::nullopt;
    if (!v.contains("index") || !v["index"].is_number_integer()) return std::nullopt;
    if (!v.contains("kind") || !v["kind"].is_string()) return std::nullopt;
    if (!v.contains("status") || !v["status"].is_string()) return std::nullopt;
    StepRecord s;
    s.index = v["index"].get<int>();
    s.description = v.value("description", "");
    s.kind = v["kind"].get<std::string>();
    s.status = v["status"].get<std::string>();
    s.outcome = v.value("outcome", Value());
    s.started_at = v.value("started_at", "");
    s.duration_ms = v.value("duration_ms", int64_t{0});
    s.agent_clock = v.value("agent_clock", "");
    return s;
}

std::string RunReport::environment_id() const {
    return environment.is_object() ? environment.value("id", "") : "";
}

Value RunReport::to_json() const {
    Value steps_json = Value::array();
    for (const auto& s : steps) steps_json.push_back(s.to_json());
    Value touched = Value::array();
    for (const auto& p : agent_touched_paths) touched.push_back(p);
    return Value{{"report_version", report_version},
                 {"run_id", run_id},
                 {"author", author},
                 {"submitted_at", submitted_at},
                 {"engine_version", engine_version},
                 {"playbook_digest", playbook_digest},
                 {"environment", environment},
                 {"sandbox_root", sandbox_root},
                 {"pre_run_tree_hash", pre_run_tree_hash},
                 {"steps", steps_json},
                 {"verdict", to_string(verdict)},
                 {"abort_reason", abort_reason},
                 {"captured_variables", captured_variables},
                 {"agent_touched_paths", touched}};
}

std::optional<RunReport> RunReport::from_json(const Value& v) {
    if (!v.is_object()) return std::nullopt;
    if (!v.contains("report_version") || !v["report_version"].is_number_integer()) return std::nullopt;
    if (!v.contains("verdict") || !v["verdict"].is_string()) return std::nullopt;
    auto verdict = verdict_from_string(v["verdict"].get<std::string>());
    if (!verdict) return std::nullopt;
    if (!v.contains("steps") || !v["steps"].is_array()) return std::nullopt;

    RunReport r;
    r.report_version = v["report_version"].get<int>();
    r.run_id = v.value("run_id", "");
    r.author = v.value("author", "");
    r.submitted_at = v.value("submitted_at", "");
    r.engine_version = v.value("engine_version", "");
    r.playbook_digest = v.value("playbook_digest", "");
    r.environment = v.value("environment", Value::object());
    r.sandbox_root = v.value("sandbox_root", "");
    r.pre_run_tree_hash = v.value("pre_run_tree_hash", "");
    r.verdict = *verdict;
    r.abort_reason = v.value("abort_reason", "");
    r.captured_variables = v.value("captured_variables", Value::object());
    if (v.contains("agent_touched_paths")) {
        if (!v["agent_touched_paths"].is_array()) return std::nullopt;
        for (const auto& p : v["agent_touched_paths"]) {
            if (!p.is_string()) return std::nullopt;
            r.agent_touched_paths.push_back(p.get<std::string>());
        }
    }
    for (const auto& sj : v["steps"]) {
        auto step = StepRecord::from_json(sj);
        if (!step) return std::nullopt;
        r.steps.push_back(std::move(*step));
    }
    return r;
}

std::string playbook_digest(const Playbook& pb) { return sha256_hex(serialize_playbook(pb)); }

std::string compute_run_id(const std::string& playbook_digest, const std::string& environment_id,
                           const std::string& engine_version, const std::string& submitted_at) {
    return sha256_hex(playbook_digest + "\n" + environment_id + "\n" + engine_version + "\n" + submitted_at);
}

bool save_run_report(const RunReport& r, const std::filesystem::path& file) {
    std::error_code ec;
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path(), ec);
    return atomic_write_file(file, r.to_json().dump(2) + "\n");
}

std::variant<RunReport, std::string> load_run_report(const std::filesystem::path& file) {
    auto content = read_file(file);
    if (!content) return "cannot read report file " + file.string();
    Value doc = Value::parse(*content, nullptr, false);
    if (doc.is_discarded()) return "report file " + file.string() + " is not valid JSON";
    auto report = RunReport::from_json(doc);
    if (!report) return "report file " + file.string() + " does not hold a run report";
    if (report->report_version != kReportVersion)
        return "report file " + file.string() + " has unsupported version " +
               std::to_string(report->report_version);
    return std::move(*report);
}

namespace {

constexpr const char* kRootPlaceholder = "<run-root>";

bool boundary_char(char c) { return !(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'); }

// Rewrites occurrences of `root` that end at a path boundary, so a root that
// happens to prefix an unrelated name is left alone.
std::string rewrite_root(const std::string& text, const std::string& root) {
    if (root.empty()) return text;
    std::string out;
    size_t pos = 0;
    while (true) {
        size_t hit = text.find(root, pos);
        if (hit == std::string::npos) {
            out += text.substr(pos);
            return out;
        }
        size_t end = hit + root.size();
        if (end == text.size() || boundary_char(text[end])) {
            out += text.substr(pos, hit - pos);
            out += kRootPlaceholder;
            pos = end;
        } else {
            out += text.substr(pos, end - pos);
            pos = end;
        }
    }
}

// A formatted instant, as opposed to a bare number that merely parses as an
// epoch offset.
bool timestamp_like(const std::string& s) {
    bool non_digit = false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) non_digit = true;
    return non_digit && !s.empty() && parse_timestamp(s).has_value();
}

bool duration_key(const std::string& key) {
    return key.size() > 3 && key.compare(key.size() - 3, 3, "_ms") == 0;
}

// Wall-clock noise never counts as divergence: formatted instants match any
// formatted instant, and numeric *_ms object fields are skipped.
bool values_equal(const Value& a, const Value& b, const std::string& root_a, const std::string& root_b) {
    if (a.is_string() && b.is_string()) {
        std::string sa = rewrite_root(a.get<std::string>(), root_a);
        std::string sb = rewrite_root(b.get<std::string>(), root_b);
        if (sa == sb) return true;
        return timestamp_like(sa) && timestamp_like(sb);
    }
    if (a.is_object() && b.is_object()) {
        for (auto it = a.begin(); it != a.end(); ++it) {
            if (duration_key(it.key()) && it.value().is_number()) continue;
            if (!b.contains(it.key())) return false;
        }
        for (auto it = b.begin(); it != b.end(); ++it) {
            if (duration_key(it.key()) && it.value().is_number()) continue;
            if (!a.contains(it.key())) return false;
            if (!values_equal(a[it.key()], it.value(), root_a, root_b)) return false;
        }
        return true;
    }
    if (a.is_array() && b.is_array()) {
        if (a.size() != b.size()) return false;
        for (size_t i = 0; i < a.size(); ++i)
            if (!values_equal(a[i], b[i], root_a, root_b)) return false;
        return true;
    }
    return a == b;
}

std::string step_label(const StepRecord& s) {
    return "step " + std::to_string(s.index) + " (" + (s.description.empty() ? s.kind : s.description) + ")";
}

}  // namespace

ReproCheck reproduce_check(const RunReport& a, const RunReport& b) {
    ReproCheck out;
    if (a.playbook_digest != b.playbook_digest) {
        out.verdict = ReproCheck::Verdict::not_comparable;
        out.differences.push_back("playbook_digest: " + a.playbook_digest + " vs " + b.playbook_digest);
        return out;
    }
    if (a.environment_id() != b.environment_id()) {
        out.verdict = ReproCheck::Verdict::not_comparable;
        out.differences.push_back("environment id: " + a.environment_id() + " vs " + b.environment_id());
        return out;
    }

    if (a.verdict != b.verdict)
        out.differences.push_back(std::string("verdict: ") + to_string(a.verdict) + " vs " + to_string(b.verdict));
    if (a.steps.size() != b.steps.size())
        out.differences.push_back("step count: " + std::to_string(a.steps.size()) + " vs " +
                                  std::to_string(b.steps.size()));

    size_t n = std::min(a.steps.size(), b.steps.size());
    for (size_t i = 0; i < n; ++i) {
        const StepRecord& sa = a.steps[i];
        const StepRecord& sb = b.steps[i];
        if (sa.kind != sb.kind) {
            out.differences.push_back(step_label(sa) + " kind: " + sa.kind + " vs " + sb.kind);
            continue;
        }
        if (sa.description != sb.description)
            out.differences.push_back(step_label(sa) + " description: '" + sa.description + "' vs '" +
                                      sb.description + "'");
        if (sa.status != sb.status) {
            out.differences.push_back(step_label(sa) + " status: " + sa.status + " vs " + sb.status);
            continue;
        }
        if (sa.kind == "test") {
            const Value& oa = sa.outcome.is_object() ? sa.outcome : Value::object();
            const Value& ob = sb.outcome.is_object() ? sb.outcome : Value::object();
            if (!values_equal(oa.value("observed", Value()), ob.value("observed", Value()), a.sandbox_root,
                              b.sandbox_root))
                out.differences.push_back(step_label(sa) + " observed values differ");
            if (!values_equal(oa.value("expected", Value()), ob.value("expected", Value()), a.sandbox_root,
                              b.sandbox_root))
                out.differences.push_back(step_label(sa) + " expected values differ");
        }
    }

    out.verdict = out.differences.empty() ? ReproCheck::Verdict::reproduced : ReproCheck::Verdict::diverged;
    return out;
}

}  // namespace tdf
