#include "tdf/diff.hpp"

#include <unicode/unorm2.h>
#include <unicode/ustring.h>

#include <algorithm>
#include <array>
#include <climits>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

const Sheet* TabularReport::find_sheet(const std::string& name) const {
    for (const auto& [n, sheet] : sheets)
        if (n == name) return &sheet;
    return nullptr;
}

namespace {

bool ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && ascii_space(s[b])) ++b;
    while (e > b && ascii_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// NFC via ICU. Invalid UTF-8 passes through unchanged rather than failing
// the whole sheet; comparison still sees identical bytes as identical.
std::string nfc(const std::string& in) {
    if (in.empty()) return in;
    UErrorCode status = U_ZERO_ERROR;
    const UNormalizer2* norm = unorm2_getNFCInstance(&status);
    if (U_FAILURE(status)) return in;

    int32_t ulen = 0;
    status = U_ZERO_ERROR;
    u_strFromUTF8(nullptr, 0, &ulen, in.data(), static_cast<int32_t>(in.size()), &status);
    if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) return in;
    std::vector<UChar> u16(static_cast<size_t>(ulen) + 1);
    status = U_ZERO_ERROR;
    u_strFromUTF8(u16.data(), ulen + 1, nullptr, in.data(), static_cast<int32_t>(in.size()), &status);
    if (U_FAILURE(status)) return in;

    status = U_ZERO_ERROR;
    if (unorm2_isNormalized(norm, u16.data(), ulen, &status) && U_SUCCESS(status)) return in;

    status = U_ZERO_ERROR;
    int32_t nlen = unorm2_normalize(norm, u16.data(), ulen, nullptr, 0, &status);
    if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) return in;
    std::vector<UChar> out16(static_cast<size_t>(nlen) + 1);
    status = U_ZERO_ERROR;
    unorm2_normalize(norm, u16.data(), ulen, out16.data(), nlen + 1, &status);
    if (U_FAILURE(status)) return in;

    int32_t olen = 0;
    status = U_ZERO_ERROR;
    u_strToUTF8(nullptr, 0, &olen, out16.data(), nlen, &status);
    if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) return in;
    std::string out(static_cast<size_t>(olen), '\0');
    status = U_ZERO_ERROR;
    u_strToUTF8(out.data(), olen + 1, nullptr, out16.data(), nlen, &status);
    if (U_FAILURE(status)) return in;
    return out;
}

// RFC 4180: quoted fields may hold commas, quotes (doubled) and newlines.
// Blank lines are skipped. Returns records or an error message.
std::variant<std::vector<std::vector<std::string>>, std::string> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_quoted = false;
    bool any_field = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
        any_field = false;
    };
    auto here = [&] { return "record " + std::to_string(records.size() + 1); };

    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                in_quotes = false;
                ++i;
                continue;
            }
            field += ch;
            ++i;
            continue;
        }
        if (ch == '"') {
            if (!field.empty() || field_quoted) return "stray quote in " + here();
            in_quotes = true;
            field_quoted = true;
            any_field = true;
            ++i;
            continue;
        }
        if (ch == ',') {
            end_field();
            any_field = true;
            ++i;
            continue;
        }
        if (ch == '\r' || ch == '\n') {
            if (ch == '\r' && i + 1 < n && text[i + 1] == '\n') ++i;
            ++i;
            if (any_field) end_record();
            continue;
        }
        if (field_quoted) return "unexpected character after closing quote in " + here();
        field += ch;
        any_field = true;
        ++i;
    }
    if (in_quotes) return "unterminated quoted field in " + here();
    if (any_field) end_record();
    return records;
}

// Minimum-cost perfect matching on a square matrix (potentials method).
// Returns the column assigned to each row.
std::vector<int> assign_min_cost(const std::vector<std::vector<int>>& cost) {
    const int n = static_cast<int>(cost.size());
    const int64_t inf = std::numeric_limits<int64_t>::max();
    std::vector<int64_t> u(n + 1, 0), v(n + 1, 0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<int64_t> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            int64_t delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                int64_t cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> match(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) match[p[j] - 1] = j - 1;
    return match;
}

int row_cost(const std::vector<std::string>& a, const std::vector<std::string>& b, int cap) {
    int d = 0;
    for (size_t k = 0; k < a.size(); ++k) {
        if (a[k] != b[k] && ++d >= cap) break;
    }
    return d;
}

constexpr size_t kOptimalPairingLimit = 200;
constexpr int kModificationCellLimit = 2;

void diff_sheet(const std::string& name, const Sheet& base, const Sheet& cand,
                std::vector<Finding>& out) {
    std::unordered_map<std::string, size_t> cand_cols;
    for (size_t j = 0; j < cand.header.size(); ++j) cand_cols.emplace(cand.header[j], j);
    std::unordered_set<std::string> base_cols(base.header.begin(), base.header.end());

    std::vector<std::pair<size_t, size_t>> shared;  // (base column, cand column)
    for (size_t k = 0; k < base.header.size(); ++k) {
        auto it = cand_cols.find(base.header[k]);
        if (it == cand_cols.end())
            out.push_back(StructuralChange{StructuralChange::Kind::column_removed, name, base.header[k]});
        else
            shared.emplace_back(k, it->second);
    }
    for (size_t j = 0; j < cand.header.size(); ++j)
        if (!base_cols.count(cand.header[j]))
            out.push_back(StructuralChange{StructuralChange::Kind::column_added, name, cand.header[j]});

    const size_t m = base.rows.size(), n = cand.rows.size(), w = shared.size();
    std::vector<std::vector<std::string>> bp(m), cp(n);
    for (size_t i = 0; i < m; ++i) {
        bp[i].resize(w);
        for (size_t k = 0; k < w; ++k) bp[i][k] = base.rows[i][shared[k].first];
    }
    for (size_t j = 0; j < n; ++j) {
        cp[j].resize(w);
        for (size_t k = 0; k < w; ++k) cp[j][k] = cand.rows[j][shared[k].second];
    }

    std::vector<int> pair_of_base(m, -1);
    std::vector<char> cand_used(n, 0);
    if (m > 0 && n > 0) {
        if (m <= kOptimalPairingLimit && n <= kOptimalPairingLimit) {
            const size_t nn = std::max(m, n);
            std::vector<std::vector<int>> cost(nn, std::vector<int>(nn, 0));
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) cost[i][j] = row_cost(bp[i], cp[j], INT_MAX);
            std::vector<int> match = assign_min_cost(cost);
            for (size_t i = 0; i < m; ++i) {
                int j = match[i];
                if (j >= 0 && static_cast<size_t>(j) < n && cost[i][j] <= kModificationCellLimit) {
                    pair_of_base[i] = j;
                    cand_used[j] = 1;
                }
            }
        } else {
            // Beyond the optimal limit only pairings that could be accepted
            // matter; collect those and take them cheapest-first.
            struct Pair {
                int cost;
                size_t i, j;
            };
            std::vector<Pair> pairs;
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    int c = row_cost(bp[i], cp[j], kModificationCellLimit + 1);
                    if (c <= kModificationCellLimit) pairs.push_back({c, i, j});
                }
            std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
                return std::tie(a.cost, a.i, a.j) < std::tie(b.cost, b.i, b.j);
            });
            for (const Pair& p : pairs) {
                if (pair_of_base[p.i] >= 0 || cand_used[p.j]) continue;
                pair_of_base[p.i] = static_cast<int>(p.j);
                cand_used[p.j] = 1;
            }
        }
    }

    for (size_t i = 0; i < m; ++i) {
        int j = pair_of_base[i];
        if (j < 0) continue;
        for (size_t k = 0; k < w; ++k)
            if (bp[i][k] != cp[static_cast<size_t>(j)][k])
                out.push_back(CellChanged{name, std::to_string(i), base.header[shared[k].first],
                                          bp[i][k], cp[static_cast<size_t>(j)][k]});
    }
    for (size_t i = 0; i < m; ++i)
        if (pair_of_base[i] < 0) out.push_back(RowRemoved{name, base.rows[i]});
    for (size_t j = 0; j < n; ++j)
        if (!cand_used[j]) out.push_back(RowAdded{name, cand.rows[j]});
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

std::string normalize_cell(const std::string& raw) { return nfc(trim(raw)); }

LoadOutcome load_report(const fs::path& dir) {
    LoadOutcome outcome;
    fs::path p = dir;
    if (p.filename().empty()) p = p.parent_path();
    outcome.report_id = p.filename().string();

    std::error_code ec;
    if (!fs::is_directory(p, ec)) return outcome;  // missing

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(p, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
    if (files.empty()) return outcome;  // missing

    TabularReport report;
    report.report_id = outcome.report_id;
    for (const fs::path& file : files) {
        const std::string sheet_name = file.stem().string();
        auto fail = [&](const std::string& msg) {
            outcome.error = "sheet '" + sheet_name + "': " + msg;
            return outcome;
        };

        auto text = read_file(file);
        if (!text) return fail("unreadable");
        auto parsed = parse_csv(*text);
        if (auto* err = std::get_if<std::string>(&parsed)) return fail(*err);
        auto& records = std::get<std::vector<std::vector<std::string>>>(parsed);
        if (records.empty()) return fail("no header record");

        Sheet sheet;
        std::unordered_set<std::string> seen;
        for (const std::string& cell : records[0]) {
            std::string col = normalize_cell(cell);
            if (!seen.insert(col).second) return fail("duplicate column '" + col + "'");
            sheet.header.push_back(std::move(col));
        }
        for (size_t r = 1; r < records.size(); ++r) {
            if (records[r].size() != sheet.header.size())
                return fail("row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                            " cells, header has " + std::to_string(sheet.header.size()));
            std::vector<std::string> row(records[r].size());
            for (size_t k = 0; k < records[r].size(); ++k) row[k] = normalize_cell(records[r][k]);
            sheet.rows.push_back(std::move(row));
        }
        report.sheets.emplace_back(sheet_name, std::move(sheet));
    }
    outcome.report = std::move(report);
    return outcome;
}

const char* to_string(StructuralChange::Kind kind) {
    switch (kind) {
        case StructuralChange::Kind::sheet_added: return "sheet_added";
        case StructuralChange::Kind::sheet_removed: return "sheet_removed";
        case StructuralChange::Kind::column_added: return "column_added";
        case StructuralChange::Kind::column_removed: return "column_removed";
    }
    return "?";
}

Value DivergenceRecord::to_json() const {
    Value arr = Value::array();
    for (const Finding& f : findings) {
        arr.push_back(std::visit(
            [](const auto& v) -> Value {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, ReportMissing>) {
                    return Value{{"kind", "report_missing"}};
                } else if constexpr (std::is_same_v<T, StructuralChange>) {
                    Value j{{"kind", "structural_change"}, {"change", to_string(v.kind)}, {"sheet", v.sheet}};
                    if (!v.column.empty()) j["column"] = v.column;
                    return j;
                } else if constexpr (std::is_same_v<T, RowAdded>) {
                    return Value{{"kind", "row_added"}, {"sheet", v.sheet}, {"row", v.row}};
                } else if constexpr (std::is_same_v<T, RowRemoved>) {
                    return Value{{"kind", "row_removed"}, {"sheet", v.sheet}, {"row", v.row}};
                } else {
                    return Value{{"kind", "cell_changed"},      {"sheet", v.sheet},
                                 {"row_key", v.row_key},        {"column", v.column},
                                 {"baseline", v.baseline_value}, {"candidate", v.candidate_value}};
                }
            },
            f));
    }
    return Value{{"baseline_id", baseline_id}, {"candidate_id", candidate_id}, {"findings", arr}};
}

DivergenceRecord compare(const TabularReport& baseline, const TabularReport& candidate) {
    DivergenceRecord rec{baseline.report_id, candidate.report_id, {}};
    for (const auto& [name, sheet] : baseline.sheets) {
        const Sheet* cs = candidate.find_sheet(name);
        if (!cs)
            rec.findings.push_back(StructuralChange{StructuralChange::Kind::sheet_removed, name, ""});
        else
            diff_sheet(name, sheet, *cs, rec.findings);
    }
    for (const auto& [name, sheet] : candidate.sheets) {
        (void)sheet;
        if (!baseline.find_sheet(name))
            rec.findings.push_back(StructuralChange{StructuralChange::Kind::sheet_added, name, ""});
    }
    return rec;
}

DivergenceRecord compare_missing(const std::string& baseline_id, const std::string& candidate_id) {
    return DivergenceRecord{baseline_id, candidate_id, {ReportMissing{}}};
}

Value DivergenceMatrix::to_json() const {
    Value arr = Value::array();
    for (const Row& r : rows) {
        arr.push_back(Value{{"version", r.candidate_id},
                            {"report_missing", r.report_missing},
                            {"structural", r.structural},
                            {"row_added", r.row_added},
                            {"row_removed", r.row_removed},
                            {"cell_changed", r.cell_changed}});
    }
    return Value{{"baseline_id", baseline_id}, {"rows", arr}};
}

std::variant<DivergenceMatrix, std::string> aggregate(const std::vector<DivergenceRecord>& records) {
    DivergenceMatrix matrix;
    bool have_baseline = false;
    std::unordered_map<std::string, size_t> row_of;
    for (const DivergenceRecord& rec : records) {
        if (!have_baseline) {
            matrix.baseline_id = rec.baseline_id;
            have_baseline = true;
        } else if (matrix.baseline_id != rec.baseline_id) {
            return "records disagree on the baseline: '" + matrix.baseline_id + "' vs '" +
                   rec.baseline_id + "'";
        }
        auto [it, fresh] = row_of.try_emplace(rec.candidate_id, matrix.rows.size());
        if (fresh) matrix.rows.push_back(DivergenceMatrix::Row{rec.candidate_id, 0, 0, 0, 0, 0});
        DivergenceMatrix::Row& row = matrix.rows[it->second];
        for (const Finding& f : rec.findings) {
            std::visit(
                [&row](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, ReportMissing>) ++row.report_missing;
                    else if constexpr (std::is_same_v<T, StructuralChange>) ++row.structural;
                    else if constexpr (std::is_same_v<T, RowAdded>) ++row.row_added;
                    else if constexpr (std::is_same_v<T, RowRemoved>) ++row.row_removed;
                    else ++row.cell_changed;
                },
                f);
        }
    }
    return matrix;
}

std::string render_matrix(const DivergenceMatrix& matrix, MatrixFormat format) {
    static const std::array<const char*, 6> kHeaders = {
        "version", "report_missing", "structural", "row_added", "row_removed", "cell_changed"};

    std::vector<std::array<std::string, 6>> body;
    for (const DivergenceMatrix::Row& r : matrix.rows) {
        body.push_back({r.candidate_id, std::to_string(r.report_missing), std::to_string(r.structural),
                        std::to_string(r.row_added), std::to_string(r.row_removed),
                        std::to_string(r.cell_changed)});
    }

    std::string out;
    if (format == MatrixFormat::csv) {
        for (size_t k = 0; k < kHeaders.size(); ++k) {
            if (k) out += ',';
            out += kHeaders[k];
        }
        out += '\n';
        for (const auto& row : body) {
            for (size_t k = 0; k < row.size(); ++k) {
                if (k) out += ',';
                out += csv_field(row[k]);
            }
            out += '\n';
        }
        return out;
    }

    std::array<size_t, 6> width{};
    for (size_t k = 0; k < 6; ++k) width[k] = std::string(kHeaders[k]).size();
    for (const auto& row : body)
        for (size_t k = 0; k < 6; ++k) width[k] = std::max(width[k], row[k].size());

    auto emit = [&](const std::array<std::string, 6>& row) {
        for (size_t k = 0; k < 6; ++k) {
            if (k) out += "  ";
            if (k == 0) {
                out += row[k];
                if (k + 1 < 6) out += std::string(width[k] - row[k].size(), ' ');
            } else {
                out += std::string(width[k] - row[k].size(), ' ');
                out += row[k];
            }
        }
        out += '\n';
    };
    std::array<std::string, 6> head;
    for (size_t k = 0; k < 6; ++k) head[k] = kHeaders[k];
    emit(head);
    for (const auto& row : body) emit(row);
    return out;
}

}  // namespace tdf
