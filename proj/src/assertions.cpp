#include "tdf/assertions.hpp"

#include <sys/stat.h>

#include <sqlite3.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <regex>
#include <sstream>

#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

std::string to_string(TestStatus s) {
    switch (s) {
        case TestStatus::pass: return "pass";
        case TestStatus::fail: return "fail";
        case TestStatus::error: return "error";
    }
    return "error";
}

std::optional<TestStatus> test_status_from_string(std::string_view s) {
    if (s == "pass") return TestStatus::pass;
    if (s == "fail") return TestStatus::fail;
    if (s == "error") return TestStatus::error;
    return std::nullopt;
}

Value TestResult::to_json() const {
    Value v;
    v["test_name"] = test_name;
    v["function"] = function;
    v["status"] = to_string(status);
    v["observed"] = observed;
    v["expected"] = expected;
    v["message"] = message;
    v["started_at"] = started_at;
    v["duration_ms"] = duration_ms;
    return v;
}

std::optional<TestResult> TestResult::from_json(const Value& v) {
    if (!v.is_object() || !v.contains("status") || !v["status"].is_string()) return std::nullopt;
    auto status = test_status_from_string(v["status"].get<std::string>());
    if (!status) return std::nullopt;
    TestResult r;
    r.status = *status;
    r.test_name = v.value("test_name", "");
    r.function = v.value("function", "");
    r.observed = v.value("observed", Value());
    r.expected = v.value("expected", Value());
    r.message = v.value("message", "");
    r.started_at = v.value("started_at", "");
    r.duration_ms = v.value("duration_ms", int64_t{0});
    return r;
}

const ParamSpec* FunctionDescriptor::find_param(const std::string& p) const {
    for (const auto& ps : params) {
        if (ps.name == p) return &ps;
    }
    return nullptr;
}

namespace {

TestResult make_error(const std::string& fn, const std::string& error_class, const std::string& detail) {
    TestResult r;
    r.function = fn;
    r.status = TestStatus::error;
    r.message = error_class + ": " + detail;
    return r;
}

TestResult make_pass(const std::string& fn, Value observed, Value expected) {
    TestResult r;
    r.function = fn;
    r.status = TestStatus::pass;
    r.observed = std::move(observed);
    r.expected = std::move(expected);
    return r;
}

TestResult make_fail(const std::string& fn, Value observed, Value expected, const std::string& message) {
    TestResult r;
    r.function = fn;
    r.status = TestStatus::fail;
    r.observed = std::move(observed);
    r.expected = std::move(expected);
    r.message = message;
    return r;
}

enum class Presence { present, absent, inaccessible };

// Distinguishes a path that is genuinely absent from one that cannot be
// examined (permission on a parent component, symlink loop, I/O failure).
Presence probe_path(const fs::path& p, std::string& detail) {
    struct stat st{};
    if (::stat(p.c_str(), &st) == 0) return Presence::present;
    int err = errno;
    if (err == ENOENT || err == ENOTDIR) return Presence::absent;
    detail = std::strerror(err);
    return Presence::inaccessible;
}

// -- file_exists / file_absent --

TestResult eval_existence(const std::string& fn, const Value& params, bool expect_present) {
    fs::path dst = params.at("dst").get<std::string>();
    std::string detail;
    Presence presence = probe_path(dst, detail);
    if (presence == Presence::inaccessible) {
        return make_error(fn, "io", "cannot examine '" + dst.string() + "': " + detail);
    }
    bool present = presence == Presence::present;
    Value observed = present ? "present" : "absent";
    Value expected = expect_present ? "present" : "absent";
    if (present == expect_present) return make_pass(fn, observed, expected);
    return make_fail(fn, observed, expected, "path '" + dst.string() + "' is " + (present ? "present" : "absent"));
}

// -- file_contains --

TestResult eval_file_contains(const Value& params, const AssertionContext& ctx) {
    const std::string fn = "file_contains";
    fs::path dst = params.at("dst").get<std::string>();
    std::string pattern = params.at("pattern").get<std::string>();
    std::string mode = params.value("mode", "substring");

    std::error_code ec;
    if (!fs::exists(dst, ec)) {
        return make_error(fn, "io", "file '" + dst.string() + "' does not exist");
    }
    if (!fs::is_regular_file(dst, ec)) {
        return make_error(fn, "io", "'" + dst.string() + "' is not a regular file");
    }
    uint64_t size = fs::file_size(dst, ec);
    if (ec) return make_error(fn, "io", "cannot stat '" + dst.string() + "'");
    if (size > ctx.file_size_cap) {
        return make_error(fn, "io", "file exceeds size cap (" + std::to_string(size) + " bytes)");
    }
    auto content = read_file(dst);
    if (!content) return make_error(fn, "io", "cannot read '" + dst.string() + "'");

    bool found = false;
    if (mode == "substring") {
        found = content->find(pattern) != std::string::npos;
    } else if (mode == "regex" || mode == "full_match") {
        try {
            std::regex re(pattern, std::regex::ECMAScript);
            found = mode == "regex" ? std::regex_search(*content, re) : std::regex_match(*content, re);
        } catch (const std::regex_error& e) {
            return make_error(fn, "bad_query", std::string("invalid regex: ") + e.what());
        }
    } else {
        return make_error(fn, "bad_parameter", "unknown mode '" + mode + "'");
    }

    Value expected;
    expected["pattern"] = pattern;
    expected["mode"] = mode;
    if (found) return make_pass(fn, Value(), expected);
    std::string excerpt = lossy_utf8(std::string_view(*content).substr(0, 256));
    return make_fail(fn, excerpt, expected, "pattern not found in '" + dst.string() + "'");
}

// -- json_query_equals --

TestResult eval_json_query(const Value& params, const AssertionContext&) {
    const std::string fn = "json_query_equals";
    fs::path dst = params.at("dst").get<std::string>();
    std::string query = params.at("query").get<std::string>();
    const Value& expected = params.at("expected");

    auto content = read_file(dst);
    if (!content) return make_error(fn, "io", "cannot read '" + dst.string() + "'");
    Value doc = Value::parse(*content, nullptr, false);
    if (doc.is_discarded()) return make_error(fn, "malformed_file", "'" + dst.string() + "' is not valid JSON");

    Value actual;
    try {
        nlohmann::json::json_pointer ptr(query);
        if (!doc.contains(ptr)) return make_fail(fn, "path absent", expected, "no value at '" + query + "'");
        actual = doc.at(ptr);
    } catch (const nlohmann::json::exception& e) {
        return make_error(fn, "bad_query", std::string("invalid JSON pointer '") + query + "': " + e.what());
    }

    if (actual == expected) return make_pass(fn, actual, expected);
    return make_fail(fn, actual, expected, "value at '" + query + "' differs");
}

// -- xml_query_equals --

struct XmlStep {
    std::string name;
    int index = 0;  // 1-based, 0 = unspecified
};

struct XmlQuery {
    std::vector<XmlStep> steps;
    std::string attribute;  // empty = element text
};

std::optional<XmlQuery> parse_xml_query(const std::string& q) {
    XmlQuery out;
    std::string path = q;
    auto at = path.find('@');
    if (at != std::string::npos) {
        out.attribute = path.substr(at + 1);
        path = path.substr(0, at);
        if (out.attribute.empty()) return std::nullopt;
    }
    if (path.empty()) return std::nullopt;
    std::istringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/')) {
        if (part.empty()) return std::nullopt;
        XmlStep step;
        auto lb = part.find('[');
        if (lb != std::string::npos) {
            if (part.back() != ']') return std::nullopt;
            std::string idx = part.substr(lb + 1, part.size() - lb - 2);
            if (idx.empty() || !std::all_of(idx.begin(), idx.end(), ::isdigit)) return std::nullopt;
            step.index = std::stoi(idx);
            if (step.index < 1) return std::nullopt;
            step.name = part.substr(0, lb);
        } else {
            step.name = part;
        }
        if (step.name.empty()) return std::nullopt;
        out.steps.push_back(std::move(step));
    }
    return out;
}

TestResult eval_xml_query(const Value& params, const AssertionContext&) {
    const std::string fn = "xml_query_equals";
    namespace pt = boost::property_tree;
    fs::path dst = params.at("dst").get<std::string>();
    std::string query = params.at("query").get<std::string>();
    std::string expected = params.at("expected").get<std::string>();

    auto content = read_file(dst);
    if (!content) return make_error(fn, "io", "cannot read '" + dst.string() + "'");

    pt::ptree doc;
    try {
        std::istringstream in(*content);
        pt::read_xml(in, doc, pt::xml_parser::trim_whitespace | pt::xml_parser::no_comments);
    } catch (const pt::xml_parser_error& e) {
        return make_error(fn, "malformed_file", std::string("XML parse error: ") + e.what());
    }

    auto parsed = parse_xml_query(query);
    if (!parsed) return make_error(fn, "bad_query", "invalid path expression '" + query + "'");

    // Queries are evaluated relative to the document element.
    const pt::ptree* root = nullptr;
    for (const auto& [key, child] : doc) {
        if (key == "<xmlattr>" || key == "<xmlcomment>") continue;
        if (root) return make_error(fn, "malformed_file", "multiple document elements");
        root = &child;
    }
    if (!root) return make_error(fn, "malformed_file", "no document element");

    std::vector<const pt::ptree*> selection = {root};
    for (const auto& step : parsed->steps) {
        std::vector<const pt::ptree*> next;
        for (const pt::ptree* node : selection) {
            for (const auto& [key, child] : *node) {
                if (key == step.name) next.push_back(&child);
            }
        }
        if (step.index > 0) {
            if (static_cast<size_t>(step.index) > next.size()) {
                next.clear();
            } else {
                next = {next[static_cast<size_t>(step.index) - 1]};
            }
        }
        selection = std::move(next);
    }

    Value exp_json = expected;
    if (selection.size() != 1) {
        Value observed;
        observed["count"] = selection.size();
        return make_fail(fn, observed, exp_json,
                         "query '" + query + "' selected " + std::to_string(selection.size()) + " nodes");
    }

    std::string actual;
    if (!parsed->attribute.empty()) {
        auto attrs = selection[0]->get_child_optional("<xmlattr>");
        boost::optional<std::string> v;
        if (attrs) v = attrs->get_optional<std::string>(pt::ptree::path_type(parsed->attribute, '\0'));
        if (!v) {
            return make_fail(fn, "attribute absent", exp_json, "no attribute '" + parsed->attribute + "'");
        }
        actual = *v;
    } else {
        actual = selection[0]->data();
    }

    if (actual == expected) return make_pass(fn, actual, exp_json);
    return make_fail(fn, actual, exp_json, "selected value differs");
}

// -- sqlite_query_equals --

bool sql_is_select(const std::string& sql) {
    size_t i = 0;
    const size_t n = sql.size();
    while (i < n) {
        if (std::isspace(static_cast<unsigned char>(sql[i]))) {
            ++i;
        } else if (sql[i] == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
        } else if (sql[i] == '/' && i + 1 < n && sql[i + 1] == '*') {
            i += 2;
            while (i + 1 < n && !(sql[i] == '*' && sql[i + 1] == '/')) ++i;
            i = std::min(n, i + 2);
        } else {
            break;
        }
    }
    auto starts = [&](const char* kw) {
        size_t len = std::strlen(kw);
        if (i + len > n) return false;
        for (size_t k = 0; k < len; ++k) {
            if (std::tolower(static_cast<unsigned char>(sql[i + k])) != kw[k]) return false;
        }
        return i + len == n || !std::isalnum(static_cast<unsigned char>(sql[i + len]));
    };
    return starts("select") || starts("with");
}

bool sql_has_order_by(const std::string& sql) {
    // Token scan outside string/identifier literals.
    std::string stripped;
    stripped.reserve(sql.size());
    for (size_t i = 0; i < sql.size(); ++i) {
        char c = sql[i];
        if (c == '\'' || c == '"') {
            char q = c;
            ++i;
            while (i < sql.size() && sql[i] != q) ++i;
            stripped.push_back(' ');
        } else {
            stripped.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    static const std::regex re(R"(\border\s+by\b)");
    return std::regex_search(stripped, re);
}

Value sqlite_column_value(sqlite3_stmt* stmt, int col) {
    switch (sqlite3_column_type(stmt, col)) {
        case SQLITE_INTEGER: return sqlite3_column_int64(stmt, col);
        case SQLITE_FLOAT: return sqlite3_column_double(stmt, col);
        case SQLITE_NULL: return nullptr;
        case SQLITE_BLOB: {
            const void* data = sqlite3_column_blob(stmt, col);
            int n = sqlite3_column_bytes(stmt, col);
            return base64_encode(std::string_view(static_cast<const char*>(data), static_cast<size_t>(n)));
        }
        default: {
            const unsigned char* text = sqlite3_column_text(stmt, col);
            int n = sqlite3_column_bytes(stmt, col);
            return lossy_utf8(std::string_view(reinterpret_cast<const char*>(text), static_cast<size_t>(n)));
        }
    }
}

Value normalize_rows(const Value& expected) {
    if (!expected.is_array()) return Value::array({Value::array({expected})});
    if (expected.empty()) return Value::array();
    if (!expected[0].is_array()) return Value::array({expected});
    return expected;
}

Value numbers_to_double(const Value& v) {
    if (v.is_number_integer()) return static_cast<double>(v.get<int64_t>());
    if (v.is_number_unsigned()) return static_cast<double>(v.get<uint64_t>());
    if (v.is_array()) {
        Value out = Value::array();
        for (const auto& e : v) out.push_back(numbers_to_double(e));
        return out;
    }
    return v;
}

TestResult eval_sqlite_query(const Value& params, const AssertionContext&) {
    const std::string fn = "sqlite_query_equals";
    fs::path dst = params.at("dst").get<std::string>();
    std::string sql = params.at("sql").get<std::string>();
    Value expected = params.at("expected");

    std::error_code ec;
    if (!fs::exists(dst, ec)) return make_error(fn, "io", "database '" + dst.string() + "' does not exist");
    if (!sql_is_select(sql)) {
        return make_error(fn, "bad_query", "only a single SELECT statement is allowed (write rejected)");
    }

    // Percent-escape for the URI form; immutable mode keeps evaluation free
    // of journal/lock side effects.
    std::string uri = "file:";
    for (char c : dst.string()) {
        if (c == '?' || c == '#' || c == '%') {
            char buf[4];
            std::snprintf(buf, sizeof(buf), "%%%02X", static_cast<unsigned char>(c));
            uri += buf;
        } else {
            uri.push_back(c);
        }
    }
    uri += "?immutable=1";

    sqlite3* db = nullptr;
    if (sqlite3_open_v2(uri.c_str(), &db, SQLITE_OPEN_READONLY | SQLITE_OPEN_URI, nullptr) != SQLITE_OK) {
        std::string msg = db ? sqlite3_errmsg(db) : "open failed";
        sqlite3_close(db);
        return make_error(fn, "io", "cannot open database: " + msg);
    }

    sqlite3_stmt* stmt = nullptr;
    const char* tail = nullptr;
    int rc = sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt, &tail);
    if (rc != SQLITE_OK) {
        std::string msg = sqlite3_errmsg(db);
        sqlite3_finalize(stmt);
        sqlite3_close(db);
        return make_error(fn, "bad_query", "prepare failed: " + msg);
    }
    if (tail) {
        for (const char* p = tail; *p; ++p) {
            if (!std::isspace(static_cast<unsigned char>(*p)) && *p != ';') {
                sqlite3_finalize(stmt);
                sqlite3_close(db);
                return make_error(fn, "bad_query", "multiple statements are not allowed");
            }
        }
    }
    if (!sqlite3_stmt_readonly(stmt)) {
        sqlite3_finalize(stmt);
        sqlite3_close(db);
        return make_error(fn, "bad_query", "statement is not read-only (write rejected)");
    }

    Value rows = Value::array();
    while ((rc = sqlite3_step(stmt)) == SQLITE_ROW) {
        Value row = Value::array();
        int cols = sqlite3_column_count(stmt);
        for (int c = 0; c < cols; ++c) row.push_back(sqlite_column_value(stmt, c));
        rows.push_back(std::move(row));
    }
    bool step_failed = rc != SQLITE_DONE;
    std::string step_msg = step_failed ? sqlite3_errmsg(db) : "";
    sqlite3_finalize(stmt);
    sqlite3_close(db);
    if (step_failed) return make_error(fn, "io", "query failed: " + step_msg);

    Value want = normalize_rows(expected);
    Value got_cmp = numbers_to_double(rows);
    Value want_cmp = numbers_to_double(want);
    if (!sql_has_order_by(sql)) {
        auto sort_rows = [](Value& v) {
            std::vector<Value> elems(v.begin(), v.end());
            std::sort(elems.begin(), elems.end(),
                      [](const Value& a, const Value& b) { return a.dump() < b.dump(); });
            v = Value(elems);
        };
        sort_rows(got_cmp);
        sort_rows(want_cmp);
    }

    // 1x1 results read better as scalars in reports.
    Value observed = rows;
    if (rows.size() == 1 && rows[0].size() == 1) observed = rows[0][0];

    if (got_cmp == want_cmp) return make_pass(fn, observed, expected);
    return make_fail(fn, observed, expected, "result set differs");
}

// -- timestamp_within --

std::optional<int64_t> file_mtime_millis(const fs::path& p) {
    struct stat st{};
    if (::stat(p.c_str(), &st) != 0) return std::nullopt;
    return static_cast<int64_t>(st.st_mtim.tv_sec) * 1000 + st.st_mtim.tv_nsec / 1000000;
}

constexpr const char* kTimestampFormats = "RFC 3339, YYYY-MM-DDThh:mm:ss (local), epoch seconds/millis";

TestResult eval_timestamp_within(const Value& params, const AssertionContext&) {
    const std::string fn = "timestamp_within";
    std::string source = params.value("source", "");
    if (source.empty()) {
        if (params.contains("actual")) {
            source = "variable";
        } else if (params.contains("pattern")) {
            source = "content";
        } else {
            source = "mtime";
        }
    }

    int64_t tolerance_ms = 2000;
    if (params.contains("tolerance_ms")) {
        if (!params["tolerance_ms"].is_number()) {
            return make_error(fn, "bad_parameter", "tolerance_ms must be a number");
        }
        tolerance_ms = params["tolerance_ms"].get<int64_t>();
    }
    if (tolerance_ms < 0) return make_error(fn, "bad_parameter", "tolerance_ms must be >= 0");

    int64_t actual_ms = 0;
    if (source == "mtime") {
        if (!params.contains("dst")) return make_error(fn, "bad_parameter", "source=mtime requires dst");
        fs::path dst = params["dst"].get<std::string>();
        auto mt = file_mtime_millis(dst);
        if (!mt) return make_error(fn, "io", "cannot stat '" + dst.string() + "'");
        actual_ms = *mt;
    } else if (source == "content") {
        if (!params.contains("dst") || !params.contains("pattern")) {
            return make_error(fn, "bad_parameter", "source=content requires dst and pattern");
        }
        fs::path dst = params["dst"].get<std::string>();
        auto content = read_file(dst);
        if (!content) return make_error(fn, "io", "cannot read '" + dst.string() + "'");
        std::smatch m;
        try {
            std::regex re(params["pattern"].get<std::string>(), std::regex::ECMAScript);
            if (!std::regex_search(*content, m, re)) {
                return make_error(fn, "io", "extraction pattern matched nothing in '" + dst.string() + "'");
            }
        } catch (const std::regex_error& e) {
            return make_error(fn, "bad_query", std::string("invalid regex: ") + e.what());
        }
        std::string text = (m.size() > 1 && m[1].matched) ? m[1].str() : m[0].str();
        auto tp = parse_timestamp(text);
        if (!tp) {
            return make_error(fn, "malformed_file",
                              "unparseable timestamp '" + text + "' (expected " + kTimestampFormats + ")");
        }
        actual_ms = unix_millis(*tp);
    } else if (source == "variable") {
        if (!params.contains("actual")) return make_error(fn, "bad_parameter", "source=variable requires actual");
        std::string text = params["actual"].is_string() ? params["actual"].get<std::string>()
                                                        : value_to_string(params["actual"]);
        auto tp = parse_timestamp(text);
        if (!tp) {
            return make_error(fn, "malformed_file",
                              "unparseable timestamp '" + text + "' (expected " + kTimestampFormats + ")");
        }
        actual_ms = unix_millis(*tp);
    } else {
        return make_error(fn, "bad_parameter", "unknown source '" + source + "'");
    }

    std::string ref_text = params.at("reference").is_string() ? params.at("reference").get<std::string>()
                                                              : value_to_string(params.at("reference"));
    auto ref = parse_timestamp(ref_text);
    if (!ref) {
        return make_error(fn, "malformed_file",
                          "unparseable reference '" + ref_text + "' (expected " + kTimestampFormats + ")");
    }
    int64_t ref_ms = unix_millis(*ref);
    int64_t delta = actual_ms >= ref_ms ? actual_ms - ref_ms : ref_ms - actual_ms;

    Value observed;
    observed["actual"] = format_rfc3339_ms(from_unix_millis(actual_ms));
    observed["delta_ms"] = delta;
    Value expected;
    expected["reference"] = format_rfc3339_ms(from_unix_millis(ref_ms));
    expected["tolerance_ms"] = tolerance_ms;

    if (delta <= tolerance_ms) return make_pass(fn, observed, expected);
    return make_fail(fn, observed, expected,
                     "timestamps differ by " + std::to_string(delta) + " ms (tolerance " +
                         std::to_string(tolerance_ms) + " ms)");
}

FunctionDescriptor make_desc(std::string name, std::vector<ParamSpec> params) {
    FunctionDescriptor d;
    d.name = std::move(name);
    d.library = "core";
    d.params = std::move(params);
    return d;
}

}  // namespace

AssertionRegistry AssertionRegistry::core() {
    AssertionRegistry reg;
    reg.register_function(make_desc("file_exists", {{"dst", "path", true, {}}}),
                          [](const Value& p, const AssertionContext&) { return eval_existence("file_exists", p, true); });
    reg.register_function(make_desc("file_absent", {{"dst", "path", true, {}}}),
                          [](const Value& p, const AssertionContext&) { return eval_existence("file_absent", p, false); });
    reg.register_function(make_desc("file_contains", {{"dst", "path", true, {}},
                                                      {"pattern", "string", true, {}},
                                                      {"mode", "string", false, "substring"}}),
                          eval_file_contains);
    reg.register_function(make_desc("json_query_equals", {{"dst", "path", true, {}},
                                                          {"query", "string", true, {}},
                                                          {"expected", "any", true, {}}}),
                          eval_json_query);
    reg.register_function(make_desc("xml_query_equals", {{"dst", "path", true, {}},
                                                         {"query", "string", true, {}},
                                                         {"expected", "string", true, {}}}),
                          eval_xml_query);
    reg.register_function(make_desc("sqlite_query_equals", {{"dst", "path", true, {}},
                                                            {"sql", "string", true, {}},
                                                            {"expected", "any", true, {}}}),
                          eval_sqlite_query);
    reg.register_function(make_desc("timestamp_within", {{"reference", "string", true, {}},
                                                         {"source", "string", false, {}},
                                                         {"dst", "path", false, {}},
                                                         {"pattern", "string", false, {}},
                                                         {"actual", "string", false, {}},
                                                         {"tolerance_ms", "number", false, 2000}}),
                          eval_timestamp_within);
    return reg;
}

bool AssertionRegistry::register_function(FunctionDescriptor desc, AssertionFn fn) {
    if (entries_.count(desc.name)) return false;
    std::string name = desc.name;
    entries_.emplace(std::move(name), Entry{std::move(desc), std::move(fn)});
    return true;
}

bool AssertionRegistry::load_manifest(const std::filesystem::path& manifest, std::string* error) {
    auto content = read_file(manifest);
    if (!content) {
        if (error) *error = "cannot read manifest '" + manifest.string() + "'";
        return false;
    }
    Value doc = Value::parse(*content, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("functions") || !doc["functions"].is_array()) {
        if (error) *error = "manifest must be a JSON object with a 'functions' array";
        return false;
    }
    std::string library = doc.value("library", manifest.stem().string());
    std::vector<std::pair<FunctionDescriptor, AssertionFn>> staged;
    for (const auto& f : doc["functions"]) {
        if (!f.is_object() || !f.contains("name") || !f["name"].is_string()) {
            if (error) *error = "every function entry needs a string 'name'";
            return false;
        }
        FunctionDescriptor d;
        d.name = f["name"].get<std::string>();
        d.library = library;
        for (const auto& p : f.value("params", Value::array())) {
            ParamSpec ps;
            ps.name = p.value("name", "");
            ps.type = p.value("type", "string");
            ps.required = p.value("required", true);
            ps.default_value = p.value("default", Value());
            if (ps.name.empty()) {
                if (error) *error = "parameter without a name in function '" + d.name + "'";
                return false;
            }
            d.params.push_back(std::move(ps));
        }
        if (entries_.count(d.name)) {
            if (error) *error = "function '" + d.name + "' already registered";
            return false;
        }
        std::string fname = d.name;
        staged.emplace_back(std::move(d), [fname](const Value&, const AssertionContext&) {
            return make_error(fname, "not_implemented", "function '" + fname + "' has no bound implementation");
        });
    }
    for (auto& [d, fn] : staged) register_function(std::move(d), std::move(fn));
    return true;
}

const FunctionDescriptor* AssertionRegistry::find(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second.desc;
}

std::vector<std::string> AssertionRegistry::function_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

Value AssertionRegistry::manifest_json() const {
    Value fns = Value::array();
    for (const auto& [name, entry] : entries_) {
        Value f;
        f["name"] = name;
        f["library"] = entry.desc.library;
        Value params = Value::array();
        for (const auto& p : entry.desc.params) {
            Value pv;
            pv["name"] = p.name;
            pv["type"] = p.type;
            pv["required"] = p.required;
            if (!p.default_value.is_null()) pv["default"] = p.default_value;
            params.push_back(std::move(pv));
        }
        f["params"] = std::move(params);
        fns.push_back(std::move(f));
    }
    Value out;
    out["functions"] = std::move(fns);
    return out;
}

std::string AssertionRegistry::digest() const {
    return sha256_hex(manifest_json().dump());
}

TestResult AssertionRegistry::evaluate(const std::string& function, const Value& params,
                                       const AssertionContext& ctx) const {
    auto started = now_utc();
    auto t0 = std::chrono::steady_clock::now();
    TestResult result = [&] {
        auto it = entries_.find(function);
        if (it == entries_.end()) {
            return make_error(function, "unknown_function", "'" + function + "' is not registered");
        }
        Value filled = params.is_object() ? params : Value::object();
        for (const auto& p : it->second.desc.params) {
            if (!filled.contains(p.name)) {
                if (p.required) {
                    return make_error(function, "bad_parameter", "missing required parameter '" + p.name + "'");
                }
                if (!p.default_value.is_null()) filled[p.name] = p.default_value;
            } else if (p.type == "path" || p.type == "string") {
                if (!filled[p.name].is_string()) {
                    return make_error(function, "bad_parameter", "parameter '" + p.name + "' must be a string");
                }
            }
            if (p.type == "path" && filled.contains(p.name)) {
                fs::path path = filled[p.name].get<std::string>();
                if (!path.is_absolute()) {
                    return make_error(function, "bad_parameter",
                                      "path parameter '" + p.name + "' must be absolute: " + path.string());
                }
                if (ctx.sandbox_root && !path_within(*ctx.sandbox_root, path)) {
                    return make_error(function, "path_escape",
                                      "path '" + path.string() + "' escapes the execution root");
                }
            }
        }
        try {
            return it->second.fn(filled, ctx);
        } catch (const std::exception& e) {
            return make_error(function, "internal", e.what());
        }
    }();
    result.function = function;
    result.started_at = format_rfc3339_ms(started);
    result.duration_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace tdf
