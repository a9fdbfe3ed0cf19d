#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>

#include "diff_oracle.hpp"
#include "tdf/diff.hpp"
#include "tdf/util.hpp"

using namespace tdf;
using oracle::Gen;
using oracle::canonical;
using oracle::finding_key;
using oracle::mutate;
using oracle::random_report;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(make_temp_dir("tdf_diff_")) {}
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    REQUIRE(write_file(p, text));
}

Sheet make_sheet(std::vector<std::string> header, std::vector<std::vector<std::string>> rows) {
    return Sheet{std::move(header), std::move(rows)};
}

}  // namespace

TEST_CASE("cell normalization trims and composes") {
    CHECK(normalize_cell("  spaced out  ") == "spaced out");
    CHECK(normalize_cell("\t x \r\n") == "x");
    CHECK(normalize_cell("") == "");
    CHECK(normalize_cell("   ") == "");
    // U+0065 U+0301 composes to U+00E9.
    CHECK(normalize_cell("caf\x65\xCC\x81") == "caf\xC3\xA9");
    CHECK(normalize_cell("caf\xC3\xA9") == "caf\xC3\xA9");
    // Invalid UTF-8 passes through after trimming.
    CHECK(normalize_cell(" ab\xFF ") == "ab\xFF");
}

TEST_CASE("report directories load sheet by sheet") {
    TempDir tmp;
    fs::path dir = tmp.path / "imgtool-1.0";
    write(dir / "Files.csv",
          "path,size,note\r\n"
          "\"a,b.txt\",10,\"line1\nline2\"\r\n"
          "\"say \"\"hi\"\"\",20, plain \r\n");
    write(dir / "Deleted Items.csv", "name\ncaf\x65\xCC\x81\n");

    LoadOutcome out = load_report(dir);
    REQUIRE(out.ok());
    REQUIRE_FALSE(out.missing());
    CHECK(out.report_id == "imgtool-1.0");
    REQUIRE(out.report->sheets.size() == 2);

    // Sheets are ordered by name.
    CHECK(out.report->sheets[0].first == "Deleted Items");
    CHECK(out.report->sheets[1].first == "Files");

    const Sheet& files = out.report->sheets[1].second;
    CHECK(files.header == std::vector<std::string>{"path", "size", "note"});
    REQUIRE(files.rows.size() == 2);
    CHECK(files.rows[0] == std::vector<std::string>{"a,b.txt", "10", "line1\nline2"});
    CHECK(files.rows[1] == std::vector<std::string>{"say \"hi\"", "20", "plain"});

    // Cells come back normalized.
    CHECK(out.report->sheets[0].second.rows[0][0] == "caf\xC3\xA9");
}

TEST_CASE("absent and empty directories are missing reports") {
    TempDir tmp;
    CHECK(load_report(tmp.path / "imgtool-9.9").missing());
    fs::create_directories(tmp.path / "imgtool-2.0");
    CHECK(load_report(tmp.path / "imgtool-2.0").missing());
    CHECK(load_report(tmp.path / "imgtool-2.0").report_id == "imgtool-2.0");
}

TEST_CASE("malformed sheets fail the load with sheet and row named") {
    TempDir tmp;
    auto error_of = [&](const std::string& name, const std::string& text) {
        fs::path dir = tmp.path / ("t-" + name);
        write(dir / "Files.csv", text);
        LoadOutcome out = load_report(dir);
        CHECK_FALSE(out.ok());
        return out.error;
    };

    std::string ragged = error_of("ragged", "a,b\nx,y\n1,2,3\n");
    CHECK(ragged.find("sheet 'Files'") != std::string::npos);
    CHECK(ragged.find("row 2") != std::string::npos);
    CHECK(ragged.find("3 cells") != std::string::npos);

    CHECK(error_of("empty", "").find("no header") != std::string::npos);
    CHECK(error_of("unterminated", "a,b\n\"open,2\n").find("unterminated") != std::string::npos);
    CHECK(error_of("stray", "a,b\nx\"y,2\n").find("stray quote") != std::string::npos);
    CHECK(error_of("afterquote", "a,b\n\"x\"y,2\n").find("after closing quote") != std::string::npos);
    CHECK(error_of("dupcol", "a,a\n1,2\n").find("duplicate column") != std::string::npos);
}

TEST_CASE("blank lines and missing trailing newline are tolerated") {
    TempDir tmp;
    fs::path dir = tmp.path / "tool-1.0";
    write(dir / "S.csv", "a,b\n\n1,2\r\n\r\n3,4");
    LoadOutcome out = load_report(dir);
    REQUIRE(out.ok());
    REQUIRE_FALSE(out.missing());
    CHECK(out.report->sheets[0].second.rows.size() == 2);
}

TEST_CASE("a report compared with itself has no findings") {
    Gen g(7001);
    for (int trial = 0; trial < 50; ++trial) {
        TabularReport r = random_report(g, "tool-1.0");
        CHECK(compare(r, r).findings.empty());
    }
    // Duplicate identical rows pair off completely.
    TabularReport dup{"tool-1.0", {{"S", make_sheet({"a", "b", "c", "d"}, {{"1", "2", "3", "4"}, {"1", "2", "3", "4"}})}}};
    CHECK(compare(dup, dup).findings.empty());
}

TEST_CASE("two differing cells are a modification, three are a replacement") {
    Sheet base = make_sheet({"c1", "c2", "c3", "c4", "c5", "c6"}, {{"A", "B", "C", "D", "E", "F"}});
    TabularReport b{"tool-1.0", {{"S", base}}};

    SUBCASE("exactly two") {
        Sheet cand = base;
        cand.rows[0][1] = "B2";
        cand.rows[0][4] = "E2";
        TabularReport c{"tool-1.1", {{"S", cand}}};
        DivergenceRecord rec = compare(b, c);
        REQUIRE(rec.findings.size() == 2);
        for (const auto& f : rec.findings) REQUIRE(std::holds_alternative<CellChanged>(f));
        const auto& first = std::get<CellChanged>(rec.findings[0]);
        CHECK(first.row_key == "0");
        CHECK(first.column == "c2");
        CHECK(first.baseline_value == "B");
        CHECK(first.candidate_value == "B2");
        CHECK(std::get<CellChanged>(rec.findings[1]).column == "c5");
    }

    SUBCASE("exactly three") {
        Sheet cand = base;
        cand.rows[0][1] = "B2";
        cand.rows[0][3] = "D2";
        cand.rows[0][4] = "E2";
        TabularReport c{"tool-1.1", {{"S", cand}}};
        DivergenceRecord rec = compare(b, c);
        REQUIRE(rec.findings.size() == 2);
        CHECK(std::holds_alternative<RowRemoved>(rec.findings[0]));
        CHECK(std::holds_alternative<RowAdded>(rec.findings[1]));
        CHECK(std::get<RowRemoved>(rec.findings[0]).row == base.rows[0]);
        CHECK(std::get<RowAdded>(rec.findings[1]).row == cand.rows[0]);
    }
}

TEST_CASE("row pairing minimizes the total difference, not the first match") {
    // r1 pairs with c1 at cost 1 under a greedy sweep, forcing r2 into a
    // rejected cost-5 pairing. The optimal assignment takes both cost-2
    // pairs and reports four modified cells and no row churn.
    std::vector<std::string> r1 = {"A", "B", "C", "D", "E", "F"};
    std::vector<std::string> r2 = {"a2", "b2", "c2", "D", "E", "F"};
    std::vector<std::string> c1 = {"a2", "B", "C", "D", "E", "F"};
    std::vector<std::string> c2 = {"A", "B", "C", "d2", "e2", "F"};
    TabularReport b{"tool-1.0", {{"S", make_sheet({"k1", "k2", "k3", "k4", "k5", "k6"}, {r1, r2})}}};
    TabularReport c{"tool-1.1", {{"S", make_sheet({"k1", "k2", "k3", "k4", "k5", "k6"}, {c1, c2})}}};

    DivergenceRecord rec = compare(b, c);
    REQUIRE(rec.findings.size() == 4);
    for (const auto& f : rec.findings) CHECK(std::holds_alternative<CellChanged>(f));
}

TEST_CASE("missing candidates and missing sheets") {
    TabularReport b{"tool-1.0", {{"S", make_sheet({"a", "b", "c", "d"}, {{"1", "2", "3", "4"}})}}};

    DivergenceRecord missing = compare_missing(b.report_id, "tool-2.0");
    REQUIRE(missing.findings.size() == 1);
    CHECK(std::holds_alternative<ReportMissing>(missing.findings[0]));
    CHECK(missing.candidate_id == "tool-2.0");

    TabularReport empty_cand{"tool-2.0", {}};
    DivergenceRecord rec = compare(b, empty_cand);
    REQUIRE(rec.findings.size() == 1);
    const auto& sc = std::get<StructuralChange>(rec.findings[0]);
    CHECK(sc.kind == StructuralChange::Kind::sheet_removed);
    CHECK(sc.sheet == "S");

    TabularReport extra{"tool-2.0",
                        {{"S", b.sheets[0].second}, {"T", make_sheet({"x", "y", "z", "w"}, {})}}};
    DivergenceRecord rec2 = compare(b, extra);
    REQUIRE(rec2.findings.size() == 1);
    CHECK(std::get<StructuralChange>(rec2.findings[0]).kind == StructuralChange::Kind::sheet_added);
}

TEST_CASE("random mutations are recovered exactly") {
    Gen g(40961);
    for (int trial = 0; trial < 300; ++trial) {
        TabularReport base = random_report(g, "tool-1.0");
        auto [cand, expected] = mutate(g, base, "tool-1.1");
        DivergenceRecord rec = compare(base, cand);
        REQUIRE_MESSAGE(canonical(rec.findings) == canonical(expected), "trial " << trial);
    }
}

TEST_CASE("added and removed rows swap under reversed comparison") {
    Gen g(512);
    for (int trial = 0; trial < 60; ++trial) {
        TabularReport base = random_report(g, "tool-1.0");
        auto [cand, expected] = mutate(g, base, "tool-1.1");
        (void)expected;
        DivergenceRecord fwd = compare(base, cand);
        DivergenceRecord rev = compare(cand, base);

        auto rows_of = [](const DivergenceRecord& r, bool added) {
            std::vector<std::string> keys;
            for (const auto& f : r.findings) {
                if (added && std::holds_alternative<RowAdded>(f))
                    keys.push_back(finding_key(RowRemoved{std::get<RowAdded>(f).sheet,
                                                          std::get<RowAdded>(f).row}));
                if (!added && std::holds_alternative<RowRemoved>(f))
                    keys.push_back(finding_key(RowRemoved{std::get<RowRemoved>(f).sheet,
                                                          std::get<RowRemoved>(f).row}));
            }
            std::sort(keys.begin(), keys.end());
            return keys;
        };
        CHECK(rows_of(fwd, true) == rows_of(rev, false));
        CHECK(rows_of(fwd, false) == rows_of(rev, true));
    }
}

TEST_CASE("pairing falls back to greedy past the optimal size limit") {
    Gen g(99);
    Sheet base;
    base.header = {"path", "size", "hash", "mtime"};
    for (int i = 0; i < 201; ++i) {
        base.rows.push_back({g.fresh(), g.fresh(), g.fresh(), g.fresh()});
    }
    Sheet cand = base;
    cand.rows[77][1] = "edited-size";
    cand.rows[77][3] = "edited-mtime";
    std::vector<std::string> removed = cand.rows[150];
    cand.rows.erase(cand.rows.begin() + 150);
    std::vector<std::string> added = {"fresh-a", "fresh-b", "fresh-c", "fresh-d"};
    cand.rows.push_back(added);

    TabularReport b{"tool-1.0", {{"S", base}}};
    TabularReport c{"tool-1.1", {{"S", cand}}};
    DivergenceRecord rec = compare(b, c);

    std::vector<Finding> expected = {
        CellChanged{"S", "77", "size", base.rows[77][1], "edited-size"},
        CellChanged{"S", "77", "mtime", base.rows[77][3], "edited-mtime"},
        RowRemoved{"S", removed},
        RowAdded{"S", added},
    };
    CHECK(canonical(rec.findings) == canonical(expected));
}

TEST_CASE("aggregation counts findings per candidate version") {
    TabularReport b{"tool-1.0", {{"S", make_sheet({"a", "b", "c", "d"}, {{"1", "2", "3", "4"}})}}};
    TabularReport c1{"tool-1.1", {{"S", make_sheet({"a", "b", "c", "d"}, {{"1", "2", "3", "9"}})}}};

    std::vector<DivergenceRecord> records = {compare(b, c1), compare_missing("tool-1.0", "tool-2.0")};
    auto result = aggregate(records);
    REQUIRE(std::holds_alternative<DivergenceMatrix>(result));
    const auto& m = std::get<DivergenceMatrix>(result);
    CHECK(m.baseline_id == "tool-1.0");
    REQUIRE(m.rows.size() == 2);
    CHECK(m.rows[0].candidate_id == "tool-1.1");
    CHECK(m.rows[0].cell_changed == 1);
    CHECK(m.rows[0].report_missing == 0);
    CHECK(m.rows[1].candidate_id == "tool-2.0");
    CHECK(m.rows[1].report_missing == 1);

    SUBCASE("clashing baselines are refused") {
        records.push_back(compare_missing("other-base", "tool-3.0"));
        auto bad = aggregate(records);
        REQUIRE(std::holds_alternative<std::string>(bad));
        CHECK(std::get<std::string>(bad).find("baseline") != std::string::npos);
    }

    SUBCASE("repeated candidate ids merge") {
        records.push_back(compare_missing("tool-1.0", "tool-1.1"));
        auto merged = aggregate(records);
        const auto& mm = std::get<DivergenceMatrix>(merged);
        REQUIRE(mm.rows.size() == 2);
        CHECK(mm.rows[0].candidate_id == "tool-1.1");
        CHECK(mm.rows[0].report_missing == 1);
        CHECK(mm.rows[0].cell_changed == 1);
    }
}

TEST_CASE("aggregation distributes over record concatenation") {
    Gen g(31337);
    auto random_record = [&](const std::string& cand_id) {
        TabularReport base = random_report(g, "tool-1.0");
        base.report_id = "tool-1.0";
        auto [cand, expected] = mutate(g, base, cand_id);
        (void)expected;
        return compare(base, cand);
    };

    std::vector<DivergenceRecord> all;
    for (int i = 0; i < 12; ++i) all.push_back(random_record("tool-1." + std::to_string(1 + i % 5)));

    std::vector<DivergenceRecord> first(all.begin(), all.begin() + 6);
    std::vector<DivergenceRecord> second(all.begin() + 6, all.end());

    auto whole = std::get<DivergenceMatrix>(aggregate(all));
    auto a = std::get<DivergenceMatrix>(aggregate(first));
    auto b = std::get<DivergenceMatrix>(aggregate(second));

    // Merge the halves by candidate id, first-appearance order.
    DivergenceMatrix merged;
    merged.baseline_id = a.baseline_id;
    std::map<std::string, size_t> at;
    for (const auto& rows : {a.rows, b.rows}) {
        for (const auto& r : rows) {
            auto [it, fresh] = at.try_emplace(r.candidate_id, merged.rows.size());
            if (fresh) merged.rows.push_back(DivergenceMatrix::Row{r.candidate_id, 0, 0, 0, 0, 0});
            auto& dst = merged.rows[it->second];
            dst.report_missing += r.report_missing;
            dst.structural += r.structural;
            dst.row_added += r.row_added;
            dst.row_removed += r.row_removed;
            dst.cell_changed += r.cell_changed;
        }
    }
    CHECK(whole.to_json() == merged.to_json());
}

TEST_CASE("matrix rendering is deterministic and byte-stable") {
    DivergenceMatrix m;
    m.baseline_id = "imgtool-1.0";
    m.rows = {
        {"imgtool-1.1", 0, 1, 2, 0, 3},
        {"imgtool-2.0", 1, 0, 0, 0, 0},
        {"imgtool-2.0-rc1,x", 0, 0, 10, 4, 120},
    };

    const std::string text = render_matrix(m, MatrixFormat::text_table);
    CHECK(text ==
          "version            report_missing  structural  row_added  row_removed  cell_changed\n"
          "imgtool-1.1                     0           1          2            0             3\n"
          "imgtool-2.0                     1           0          0            0             0\n"
          "imgtool-2.0-rc1,x               0           0         10            4           120\n");
    CHECK(render_matrix(m, MatrixFormat::text_table) == text);

    CHECK(render_matrix(m, MatrixFormat::csv) ==
          "version,report_missing,structural,row_added,row_removed,cell_changed\n"
          "imgtool-1.1,0,1,2,0,3\n"
          "imgtool-2.0,1,0,0,0,0\n"
          "\"imgtool-2.0-rc1,x\",0,0,10,4,120\n");
}

TEST_CASE("divergence records serialize with tagged findings") {
    TabularReport b{"tool-1.0",
                    {{"S", make_sheet({"a", "b", "c", "d"}, {{"1", "2", "3", "4"}})},
                     {"T", make_sheet({"x", "y", "z", "w"}, {})}}};
    TabularReport c{"tool-1.1", {{"S", make_sheet({"a", "b", "c"}, {{"1", "2", "9"}})}}};

    Value j = compare(b, c).to_json();
    CHECK(j["baseline_id"] == "tool-1.0");
    CHECK(j["candidate_id"] == "tool-1.1");
    REQUIRE(j["findings"].is_array());
    REQUIRE(j["findings"].size() == 3);
    CHECK(j["findings"][0]["kind"] == "structural_change");
    CHECK(j["findings"][0]["change"] == "column_removed");
    CHECK(j["findings"][0]["column"] == "d");
    CHECK(j["findings"][1]["kind"] == "cell_changed");
    CHECK(j["findings"][1]["row_key"] == "0");
    CHECK(j["findings"][1]["baseline"] == "3");
    CHECK(j["findings"][1]["candidate"] == "9");
    CHECK(j["findings"][2]["kind"] == "structural_change");
    CHECK(j["findings"][2]["change"] == "sheet_removed");
    CHECK(j["findings"][2]["sheet"] == "T");

    Value jm = compare_missing("tool-1.0", "tool-3.0").to_json();
    CHECK(jm["findings"][0]["kind"] == "report_missing");
}
