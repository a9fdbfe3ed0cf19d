#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tdf/template.hpp"

namespace tdf {

// One sheet of a tabular tool report. Every row has exactly header.size()
// cells; cells are normalized strings (see normalize_cell).
struct Sheet {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// A versioned tool report: an ordered list of named sheets. report_id names
// the producing tool at one version, e.g. "scalpel-2.1".
struct TabularReport {
    std::string report_id;
    std::vector<std::pair<std::string, Sheet>> sheets;

    const Sheet* find_sheet(const std::string& name) const;
};

// Cell normalization applied at load time: ASCII whitespace trimmed from both
// ends, then Unicode NFC. Comparison is exact on the normalized form.
std::string normalize_cell(const std::string& raw);

// Result of loading a report directory. A directory that does not exist or
// contains no sheet files is a missing report, not an error.
struct LoadOutcome {
    std::string report_id;
    std::optional<TabularReport> report;
    std::string error;

    bool ok() const { return error.empty(); }
    bool missing() const { return ok() && !report.has_value(); }
};

// Loads "<tool>-<version>/" containing one "<Sheet Name>.csv" per sheet
// (UTF-8, first record is the header, RFC 4180 quoting). Sheets are ordered
// by name. A ragged or malformed sheet is an error naming the sheet and row.
LoadOutcome load_report(const std::filesystem::path& dir);

// Finding kinds, in severity order (i)..(v).
struct ReportMissing {};

struct StructuralChange {
    enum class Kind { sheet_added, sheet_removed, column_added, column_removed };
    Kind kind;
    std::string sheet;
    std::string column;  // empty for sheet-level changes
};

struct RowAdded {
    std::string sheet;
    std::vector<std::string> row;
};

struct RowRemoved {
    std::string sheet;
    std::vector<std::string> row;
};

struct CellChanged {
    std::string sheet;
    std::string row_key;  // baseline row index within its sheet
    std::string column;
    std::string baseline_value;
    std::string candidate_value;
};

using Finding = std::variant<ReportMissing, StructuralChange, RowAdded, RowRemoved, CellChanged>;

const char* to_string(StructuralChange::Kind kind);

struct DivergenceRecord {
    std::string baseline_id;
    std::string candidate_id;
    std::vector<Finding> findings;

    bool empty() const { return findings.empty(); }
    Value to_json() const;
};

// Structural diff of two reports of the same tool at different versions.
// Sheets pair by name, columns by header name; cells are compared on the
// column intersection. Rows pair by the assignment minimizing the total
// number of differing cells (optimal up to 200x200 rows, greedy beyond); a
// pairing counts as a modification only when at most 2 cells differ,
// otherwise the rows are reported removed and added.
DivergenceRecord compare(const TabularReport& baseline, const TabularReport& candidate);

// The record for a candidate whose report directory is absent or empty: a
// single ReportMissing finding.
DivergenceRecord compare_missing(const std::string& baseline_id, const std::string& candidate_id);

// Per-version finding counts against one baseline.
struct DivergenceMatrix {
    struct Row {
        std::string candidate_id;
        size_t report_missing = 0;
        size_t structural = 0;
        size_t row_added = 0;
        size_t row_removed = 0;
        size_t cell_changed = 0;
    };

    std::string baseline_id;
    std::vector<Row> rows;  // first-appearance order

    Value to_json() const;
};

// Folds records into a matrix. Every record must share one baseline_id;
// repeated candidate ids merge into one row. Returns an error message when
// baselines disagree.
std::variant<DivergenceMatrix, std::string> aggregate(const std::vector<DivergenceRecord>& records);

enum class MatrixFormat { text_table, csv };

// Deterministic rendering: versions in matrix order, categories in
// (i)..(v) order. CSV columns are
// version, report_missing, structural, row_added, row_removed, cell_changed.
std::string render_matrix(const DivergenceMatrix& matrix, MatrixFormat format);

}  // namespace tdf
