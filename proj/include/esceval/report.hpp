#pragma once

#include "esceval/rolecards.hpp"
#include "esceval/rubric.hpp"
#include "esceval/stats.hpp"
#include "esceval/util.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace esceval::report {

enum class Format { csv, md };
Format parse_format(std::string_view text);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// csv: RFC 4180 quoting. md: pipe table padded to column width.
std::string render(const Table &table, Format format);

std::string fixed(double value, int decimals = 2);

struct ModelInfo {
    std::optional<Lang> lang;
    std::string group; // e.g. "general" / "domain"
};

// Columns: Lang, Group, Model, N, the rubric dimensions in table order,
// Average. Rows sorted by (lang, group, model alias).
Table score_table(const rubric::ScoreTable &scores, const std::map<std::string, ModelInfo> &info = {},
                  int decimals = 2);

struct ColumnSpec {
    std::string dimension; // key used in the records
    std::string display;   // column heading
};

// Correlation dimensions in table order: Fluency, Suggestion (= information),
// Skillful, Empathy, Overall, Average.
const std::vector<ColumnSpec> &default_correlation_columns();

// One row per metric: the automatic metrics in report order, then the scorer row,
// then anything else by name. Coefficients are shown x100 when `scaled`;
// undefined coefficients are blank.
Table correlation_table(std::span<const stats::CorrelationRecord> records, stats::Level level,
                        const std::vector<ColumnSpec> &columns, bool scaled = true, bool with_kendall = false);

inline constexpr std::string_view kScorerMetricName = "Scorer";

// Language | Extract | LLM_F | Human_F | High | Middle, plus a Total row.
Table accounting_table(const rolecards::StageAccounting &accounting);

// Renders and writes atomically. Same input -> same bytes.
void export_report(const Table &table, Format format, const std::string &path);

} // namespace esceval::report
