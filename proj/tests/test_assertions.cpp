#include <doctest.h>

#include <sys/stat.h>

#include <filesystem>

#include "tdf/assertions.hpp"
#include "tdf/util.hpp"

using namespace tdf;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = TDF_FIXTURES_DIR;

struct TempDir {
    fs::path path;
    TempDir() : path(make_temp_dir("tdf_assert_")) {}
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

TestResult eval(const std::string& fn, Value params, AssertionContext ctx = {}) {
    static const AssertionRegistry reg = AssertionRegistry::core();
    return reg.evaluate(fn, params, ctx);
}

}  // namespace

TEST_CASE("file_exists and file_absent are exact mirrors") {
    TempDir tmp;
    fs::path present = tmp.path / "here.txt";
    write_file(present, "x");
    fs::path absent = tmp.path / "not_here.txt";

    CHECK(eval("file_exists", {{"dst", present.string()}}).status == TestStatus::pass);
    CHECK(eval("file_exists", {{"dst", absent.string()}}).status == TestStatus::fail);
    CHECK(eval("file_absent", {{"dst", absent.string()}}).status == TestStatus::pass);
    CHECK(eval("file_absent", {{"dst", present.string()}}).status == TestStatus::fail);

    auto r = eval("file_exists", {{"dst", absent.string()}});
    CHECK(r.observed == Value("absent"));
    CHECK(r.expected == Value("present"));

    // Directories count as present paths.
    CHECK(eval("file_exists", {{"dst", tmp.path.string()}}).status == TestStatus::pass);
}

TEST_CASE("existence checks distinguish absent from unobservable") {
    TempDir tmp;
    fs::path locked = tmp.path / "locked";
    fs::create_directories(locked);
    fs::path inside = locked / "secret";
    write_file(inside, "x");
    ::chmod(locked.c_str(), 0000);

    // The OS itself is the oracle: with enough privilege (root) the probe
    // succeeds and the verdict is pass; otherwise the path is unobservable
    // and the verdict must be error, never a confident absent.
    struct stat st{};
    bool os_can_see = ::stat(inside.c_str(), &st) == 0;
    auto r = eval("file_exists", {{"dst", inside.string()}});
    if (os_can_see) {
        CHECK(r.status == TestStatus::pass);
    } else {
        CHECK(r.status == TestStatus::error);
        CHECK(r.message.find("cannot examine") != std::string::npos);
    }
    ::chmod(locked.c_str(), 0755);
}

TEST_CASE("path parameters must be absolute and stay inside the execution root") {
    TempDir tmp;
    write_file(tmp.path / "f.txt", "x");

    auto rel = eval("file_exists", {{"dst", "relative/path"}});
    CHECK(rel.status == TestStatus::error);
    CHECK(rel.message.find("absolute") != std::string::npos);

    AssertionContext ctx;
    ctx.sandbox_root = tmp.path;
    CHECK(eval("file_exists", {{"dst", (tmp.path / "f.txt").string()}}, ctx).status == TestStatus::pass);

    auto escape = eval("file_exists", {{"dst", "/etc/passwd"}}, ctx);
    CHECK(escape.status == TestStatus::error);
    CHECK(escape.message.find("escapes") != std::string::npos);

    auto dotdot = eval("file_exists", {{"dst", (tmp.path / ".." / "x").string()}}, ctx);
    CHECK(dotdot.status == TestStatus::error);
}

TEST_CASE("file_contains substring mode") {
    TempDir tmp;
    fs::path f = tmp.path / "log.txt";
    write_file(f, "alpha beta gamma");

    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "beta"}}).status == TestStatus::pass);
    auto miss = eval("file_contains", {{"dst", f.string()}, {"pattern", "delta"}});
    CHECK(miss.status == TestStatus::fail);
    CHECK(miss.observed == Value("alpha beta gamma"));  // short files quoted whole

    auto gone = eval("file_contains", {{"dst", (tmp.path / "nope").string()}, {"pattern", "x"}});
    CHECK(gone.status == TestStatus::error);

    auto dir = eval("file_contains", {{"dst", tmp.path.string()}, {"pattern", "x"}});
    CHECK(dir.status == TestStatus::error);
}

TEST_CASE("file_contains regex agrees with grep -E") {
    fs::path info = kFixtures / "sample.trashinfo";
    struct Case {
        const char* pattern;
    } cases[] = {
        {"secret\\.(txt|doc)"},
        {"DeletionDate=2024-05-01T[0-9:]+"},
        {"absent_token"},
        {"Path=/home/[a-z]+/Documents"},
    };
    for (const auto& c : cases) {
        ProcessOptions opts;
        opts.inherit_env = true;
        auto grep = run_process({"grep", "-q", "-E", c.pattern, info.string()}, opts);
        REQUIRE_FALSE(grep.spawn_failed);
        bool oracle_found = grep.exit_code == 0;
        auto r = eval("file_contains", {{"dst", info.string()}, {"pattern", c.pattern}, {"mode", "regex"}});
        CAPTURE(c.pattern);
        CHECK(r.status == (oracle_found ? TestStatus::pass : TestStatus::fail));
    }
}

TEST_CASE("file_contains full_match covers the entire content") {
    TempDir tmp;
    fs::path f = tmp.path / "counter";
    write_file(f, "42");
    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "42"}, {"mode", "full_match"}}).status ==
          TestStatus::pass);
    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "4"}, {"mode", "full_match"}}).status ==
          TestStatus::fail);
    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "[0-9]+"}, {"mode", "full_match"}}).status ==
          TestStatus::pass);
}

TEST_CASE("file_contains failure excerpt is capped at 256 bytes") {
    TempDir tmp;
    fs::path f = tmp.path / "big.txt";
    write_file(f, std::string(1000, 'a'));
    auto r = eval("file_contains", {{"dst", f.string()}, {"pattern", "zzz"}});
    CHECK(r.status == TestStatus::fail);
    CHECK(r.observed.get<std::string>().size() == 256);
}

TEST_CASE("file_contains rejects bad modes, bad regexes and oversized files") {
    TempDir tmp;
    fs::path f = tmp.path / "f";
    write_file(f, "0123456789_0123456789_0123456789");

    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "x"}, {"mode", "glob"}}).status ==
          TestStatus::error);
    CHECK(eval("file_contains", {{"dst", f.string()}, {"pattern", "("}, {"mode", "regex"}}).status ==
          TestStatus::error);

    AssertionContext small;
    small.file_size_cap = 16;
    auto capped = eval("file_contains", {{"dst", f.string()}, {"pattern", "x"}}, small);
    CHECK(capped.status == TestStatus::error);
    CHECK(capped.message.find("size cap") != std::string::npos);
}

TEST_CASE("json_query_equals resolves pointers like an independent reader") {
    fs::path doc = kFixtures / "sample.json";
    auto q = [&](const std::string& query, Value expected) {
        return eval("json_query_equals", {{"dst", doc.string()}, {"query", query}, {"expected", expected}});
    };
    // Expected values frozen from a hand-rolled pointer walk over the fixture.
    CHECK(q("/profile/name", "default").status == TestStatus::pass);
    CHECK(q("/visits/1/count", 1).status == TestStatus::pass);
    CHECK(q("/flags/sync", false).status == TestStatus::pass);
    CHECK(q("/visits/0/last", "2024-05-01T10:00:00Z").status == TestStatus::pass);
    CHECK(q("/flags/beta", nullptr).status == TestStatus::pass);

    CHECK(q("/visits/1/count", 1.0).status == TestStatus::pass);  // numeric equality across kinds
    CHECK(q("/visits/1/count", "1").status == TestStatus::fail);  // but never across types

    auto wrong = q("/profile/name", "other");
    CHECK(wrong.status == TestStatus::fail);
    CHECK(wrong.observed == Value("default"));

    auto missing = q("/profile/missing_key", "x");
    CHECK(missing.status == TestStatus::fail);
    CHECK(missing.observed == Value("path absent"));

    CHECK(q("no/leading/slash", "x").status == TestStatus::error);
}

TEST_CASE("json_query_equals flags unreadable or invalid documents") {
    TempDir tmp;
    fs::path bad = tmp.path / "bad.json";
    write_file(bad, "{ not json !");
    CHECK(eval("json_query_equals", {{"dst", bad.string()}, {"query", "/a"}, {"expected", 1}}).status ==
          TestStatus::error);
    CHECK(eval("json_query_equals",
               {{"dst", (tmp.path / "gone.json").string()}, {"query", "/a"}, {"expected", 1}})
              .status == TestStatus::error);
}

TEST_CASE("xml_query_equals selects elements and attributes") {
    fs::path doc = kFixtures / "recent_files.xbel";
    auto q = [&](const std::string& query, const std::string& expected) {
        return eval("xml_query_equals", {{"dst", doc.string()}, {"query", query}, {"expected", expected}});
    };
    // Expected values frozen from an ElementTree walk over the fixture.
    CHECK(q("bookmark[2]@href", "file:///home/user/Documents/secret.txt").status == TestStatus::pass);
    CHECK(q("bookmark[1]@visited", "1969-12-31T23:59:59Z").status == TestStatus::pass);
    CHECK(q("bookmark[2]/title", "secret.txt").status == TestStatus::pass);
    CHECK(q("bookmark[1]/info/metadata/mime-type@type", "application/vnd.oasis.opendocument.text").status ==
          TestStatus::pass);

    auto wrong = q("bookmark[2]/title", "report.odt");
    CHECK(wrong.status == TestStatus::fail);
    CHECK(wrong.observed == Value("secret.txt"));
}

TEST_CASE("xml_query_equals requires a unique selection") {
    fs::path doc = kFixtures / "recent_files.xbel";
    auto ambiguous = eval("xml_query_equals",
                          {{"dst", doc.string()}, {"query", "bookmark@href"}, {"expected", "x"}});
    CHECK(ambiguous.status == TestStatus::fail);
    CHECK(ambiguous.observed["count"] == 2);

    auto none = eval("xml_query_equals",
                     {{"dst", doc.string()}, {"query", "bookmark[3]@href"}, {"expected", "x"}});
    CHECK(none.status == TestStatus::fail);
    CHECK(none.observed["count"] == 0);

    auto no_attr = eval("xml_query_equals",
                        {{"dst", doc.string()}, {"query", "bookmark[1]@nonexistent"}, {"expected", "x"}});
    CHECK(no_attr.status == TestStatus::fail);
    CHECK(no_attr.observed == Value("attribute absent"));
}

TEST_CASE("xml_query_equals rejects malformed queries and documents") {
    TempDir tmp;
    fs::path doc = kFixtures / "recent_files.xbel";
    for (const char* bad : {"", "@", "a//b", "a[0]", "a[x]", "a[1", "/a"}) {
        CAPTURE(bad);
        CHECK(eval("xml_query_equals", {{"dst", doc.string()}, {"query", bad}, {"expected", "x"}}).status ==
              TestStatus::error);
    }
    fs::path broken = tmp.path / "broken.xml";
    write_file(broken, "<a><b></a>");
    CHECK(eval("xml_query_equals", {{"dst", broken.string()}, {"query", "b"}, {"expected", "x"}}).status ==
          TestStatus::error);
}

TEST_CASE("sqlite_query_equals answers read-only queries") {
    fs::path db = kFixtures / "history.sqlite";
    auto q = [&](const std::string& sql, Value expected) {
        return eval("sqlite_query_equals", {{"dst", db.string()}, {"sql", sql}, {"expected", expected}});
    };
    // Expected values frozen from an independent client run against the fixture.
    CHECK(q("SELECT url FROM visits WHERE id=2", "https://files.test/dl").status == TestStatus::pass);
    CHECK(q("SELECT COUNT(*) FROM visits", 3).status == TestStatus::pass);
    CHECK(q("SELECT COUNT(*) FROM visits", 3.0).status == TestStatus::pass);
    CHECK(q("SELECT id, visit_count FROM visits ORDER BY id",
            Value::parse("[[1,4],[2,1],[3,2]]"))
              .status == TestStatus::pass);
    CHECK(q("SELECT last_visit_date FROM visits WHERE id=3", nullptr).status == TestStatus::pass);
    CHECK(q("WITH x AS (SELECT 41+1) SELECT * FROM x", 42).status == TestStatus::pass);

    // Without ORDER BY the comparison is order-insensitive.
    CHECK(q("SELECT id FROM visits", Value::parse("[[3],[1],[2]]")).status == TestStatus::pass);
    // With ORDER BY it is positional.
    CHECK(q("SELECT id FROM visits ORDER BY id", Value::parse("[[3],[1],[2]]")).status == TestStatus::fail);

    auto wrong = q("SELECT COUNT(*) FROM visits", 4);
    CHECK(wrong.status == TestStatus::fail);
    CHECK(wrong.observed == Value(3));
}

TEST_CASE("sqlite_query_equals refuses anything but a single SELECT") {
    fs::path db = kFixtures / "history.sqlite";
    auto q = [&](const std::string& sql) {
        return eval("sqlite_query_equals", {{"dst", db.string()}, {"sql", sql}, {"expected", 1}}).status;
    };
    CHECK(q("DELETE FROM visits") == TestStatus::error);
    CHECK(q("INSERT INTO visits VALUES (9,'x',1,0)") == TestStatus::error);
    CHECK(q("PRAGMA user_version") == TestStatus::error);
    CHECK(q("SELECT 1; SELECT 2") == TestStatus::error);
    CHECK(q("SELECT 1;") == TestStatus::pass);  // trailing semicolon is harmless
    CHECK(q("  -- comment\n SELECT 1") == TestStatus::pass);
    CHECK(q("/* c */ SELECT 1") == TestStatus::pass);
    CHECK(q("SELECT * FROM no_such_table") == TestStatus::error);
}

TEST_CASE("sqlite_query_equals never mutates the database file") {
    fs::path db = kFixtures / "history.sqlite";
    auto before = sha256_file_hex(db);
    REQUIRE(before.has_value());
    eval("sqlite_query_equals", {{"dst", db.string()}, {"sql", "SELECT * FROM visits"}, {"expected", 0}});
    eval("sqlite_query_equals", {{"dst", db.string()}, {"sql", "DELETE FROM visits"}, {"expected", 0}});
    CHECK(sha256_file_hex(db) == before);
}

TEST_CASE("timestamp_within compares explicit values") {
    auto q = [&](Value params) { return eval("timestamp_within", params); };
    CHECK(q({{"actual", "2024-05-01T10:00:00Z"}, {"reference", "2024-05-01T10:00:01.5Z"}}).status ==
          TestStatus::pass);  // 1500ms inside default 2000ms
    CHECK(q({{"actual", "2024-05-01T10:00:00Z"},
             {"reference", "2024-05-01T10:00:01.5Z"},
             {"tolerance_ms", 1000}})
              .status == TestStatus::fail);
    CHECK(q({{"actual", "2024-05-01T10:00:02Z"}, {"reference", "2024-05-01T10:00:00Z"}}).status ==
          TestStatus::pass);  // boundary: exactly 2000ms passes
    CHECK(q({{"actual", "2024-05-01T10:00:02.001Z"}, {"reference", "2024-05-01T10:00:00Z"}}).status ==
          TestStatus::fail);
    // Mixed calendars: offset form against epoch form.
    CHECK(q({{"actual", "2024-03-01T12:00:00+02:00"}, {"reference", "1709287200"}}).status == TestStatus::pass);

    auto fail = q({{"actual", "2024-05-01T10:00:10Z"}, {"reference", "2024-05-01T10:00:00Z"}});
    CHECK(fail.status == TestStatus::fail);
    CHECK(fail.observed["delta_ms"] == 10000);
}

TEST_CASE("timestamp_within reads timestamps out of file content") {
    TempDir tmp;
    fs::path f = tmp.path / "log.txt";
    write_file(f, "start\ncreated_at=2024-05-01T10:00:00Z\nend\n");
    Value params = {{"dst", f.string()},
                    {"pattern", "created_at=([0-9TZ:.-]+)"},
                    {"reference", "2024-05-01T10:00:01Z"}};
    CHECK(eval("timestamp_within", params).status == TestStatus::pass);

    params["reference"] = "2024-05-01T10:01:00Z";
    CHECK(eval("timestamp_within", params).status == TestStatus::fail);

    params["pattern"] = "updated_at=(.*)";
    auto nomatch = eval("timestamp_within", params);
    CHECK(nomatch.status == TestStatus::error);
    CHECK(nomatch.message.find("matched nothing") != std::string::npos);

    write_file(f, "created_at=yesterday\n");
    params["pattern"] = "created_at=(.*)";
    CHECK(eval("timestamp_within", params).status == TestStatus::error);
}

TEST_CASE("timestamp_within defaults to file modification time") {
    TempDir tmp;
    fs::path f = tmp.path / "fresh";
    write_file(f, "x");
    std::string now = format_rfc3339_ms(now_utc());
    CHECK(eval("timestamp_within", {{"dst", f.string()}, {"reference", now}, {"tolerance_ms", 60000}}).status ==
          TestStatus::pass);
    std::string hour_ago = format_rfc3339_ms(from_unix_millis(unix_millis(now_utc()) - 3600 * 1000));
    CHECK(eval("timestamp_within", {{"dst", f.string()}, {"reference", hour_ago}}).status == TestStatus::fail);
    CHECK(eval("timestamp_within", {{"dst", (tmp.path / "gone").string()}, {"reference", now}}).status ==
          TestStatus::error);
}

TEST_CASE("timestamp_within validates its parameters") {
    CHECK(eval("timestamp_within", {{"actual", "2024-05-01T10:00:00Z"}}).status == TestStatus::error);
    CHECK(eval("timestamp_within", {{"actual", "junk"}, {"reference", "2024-05-01T10:00:00Z"}}).status ==
          TestStatus::error);
    CHECK(eval("timestamp_within", {{"actual", "2024-05-01T10:00:00Z"}, {"reference", "junk"}}).status ==
          TestStatus::error);
    CHECK(eval("timestamp_within",
               {{"actual", "2024-05-01T10:00:00Z"}, {"reference", "2024-05-01T10:00:00Z"}, {"tolerance_ms", -5}})
              .status == TestStatus::error);
    CHECK(eval("timestamp_within",
               {{"source", "oracle"}, {"actual", "2024-05-01T10:00:00Z"}, {"reference", "2024-05-01T10:00:00Z"}})
              .status == TestStatus::error);
}

TEST_CASE("registry rejects unknown functions and missing parameters") {
    auto unknown = eval("no_such_function", Value::object());
    CHECK(unknown.status == TestStatus::error);
    CHECK(unknown.message.find("not registered") != std::string::npos);

    auto missing = eval("file_exists", Value::object());
    CHECK(missing.status == TestStatus::error);
    CHECK(missing.message.find("dst") != std::string::npos);

    auto wrong_type = eval("file_exists", {{"dst", 42}});
    CHECK(wrong_type.status == TestStatus::error);
}

TEST_CASE("every result carries timing metadata") {
    TempDir tmp;
    write_file(tmp.path / "f", "x");
    auto r = eval("file_exists", {{"dst", (tmp.path / "f").string()}});
    CHECK(r.function == "file_exists");
    CHECK(r.duration_ms >= 0);
    CHECK(parse_timestamp(r.started_at).has_value());
}

TEST_CASE("test results survive a serialization round-trip") {
    TempDir tmp;
    write_file(tmp.path / "f", "x");
    auto r = eval("file_contains", {{"dst", (tmp.path / "f").string()}, {"pattern", "y"}});
    r.test_name = "sample";
    auto back = TestResult::from_json(r.to_json());
    REQUIRE(back.has_value());
    CHECK(back->test_name == r.test_name);
    CHECK(back->function == r.function);
    CHECK(back->status == r.status);
    CHECK(back->observed == r.observed);
    CHECK(back->expected == r.expected);
    CHECK(back->message == r.message);
    CHECK(back->started_at == r.started_at);
    CHECK_FALSE(TestResult::from_json(Value::parse(R"({"status":"bogus"})")).has_value());
}

TEST_CASE("manifest-described functions register but refuse to run") {
    AssertionRegistry reg = AssertionRegistry::core();
    std::string err;
    REQUIRE_MESSAGE(reg.load_manifest(kFixtures / "functions_ext.json", &err), err);

    const auto* desc = reg.find("history_entry_exists");
    REQUIRE(desc != nullptr);
    CHECK(desc->library == "browser_forensics");
    REQUIRE(desc->find_param("min_visits") != nullptr);
    CHECK_FALSE(desc->find_param("min_visits")->required);
    CHECK(desc->find_param("min_visits")->default_value == Value(1));

    auto r = reg.evaluate("history_entry_exists",
                          {{"dst", "/tmp/db.sqlite"}, {"url", "https://example.org/"}}, {});
    CHECK(r.status == TestStatus::error);
    CHECK(r.message.find("no bound implementation") != std::string::npos);
}

TEST_CASE("manifest loading reports conflicts and damage") {
    TempDir tmp;
    AssertionRegistry reg = AssertionRegistry::core();
    std::string err;

    fs::path clash = tmp.path / "clash.json";
    write_file(clash, R"({"library":"x","functions":[{"name":"file_exists"}]})");
    CHECK_FALSE(reg.load_manifest(clash, &err));
    CHECK(err.find("already registered") != std::string::npos);

    fs::path broken = tmp.path / "broken.json";
    write_file(broken, "not json");
    CHECK_FALSE(reg.load_manifest(broken, &err));

    CHECK_FALSE(reg.load_manifest(tmp.path / "missing.json", &err));
}

TEST_CASE("registry digest reflects the available function surface") {
    AssertionRegistry a = AssertionRegistry::core();
    AssertionRegistry b = AssertionRegistry::core();
    CHECK(a.digest() == b.digest());

    std::string err;
    REQUIRE(b.load_manifest(kFixtures / "functions_ext.json", &err));
    CHECK(a.digest() != b.digest());

    AssertionRegistry c = AssertionRegistry::core();
    REQUIRE(c.load_manifest(kFixtures / "functions_ext.json", &err));
    CHECK(b.digest() == c.digest());

    auto names = a.function_names();
    CHECK(names.size() == 7);
}
