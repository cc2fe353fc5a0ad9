#include "esceval/report.hpp"

#include "esceval/error.hpp"
#include "esceval/store.hpp"
#include "esceval/textmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

namespace esceval::report {

namespace {

constexpr const char *kModule = "store";

std::string csv_field(const std::string &s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_cell(const std::string &s) {
    std::string out;
    for (char c : s) {
        if (c == '|')
            out += '\\';
        out += c == '\n' ? ' ' : c;
    }
    return out;
}

int lang_rank(const std::optional<Lang> &lang) { return lang ? static_cast<int>(*lang) : 99; }

} // namespace

Format parse_format(std::string_view text) {
    if (text == "csv")
        return Format::csv;
    if (text == "md" || text == "markdown")
        return Format::md;
    throw ValidationError(kModule, "report format must be csv or md, got '" + std::string(text) + "'", "format");
}

std::string fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    std::string s = buf;
    // "-0.00" -> "0.00"
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos)
        s.erase(0, 1);
    return s;
}

std::string render(const Table &table, Format format) {
    std::string out;
    if (format == Format::csv) {
        auto line = [&](const std::vector<std::string> &cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i)
                    out += ',';
                out += csv_field(cells[i]);
            }
            out += '\n';
        };
        line(table.header);
        for (const auto &r : table.rows)
            line(r);
        return out;
    }

    std::vector<std::size_t> width(table.header.size(), 3);
    auto measure = [&](const std::vector<std::string> &cells) {
        for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) {
            std::size_t w = 0;
            const auto cell = md_cell(cells[i]);
            for (std::size_t p = 0; p < cell.size(); p += utf8_length(cell, p))
                ++w;
            width[i] = std::max(width[i], w);
        }
    };
    measure(table.header);
    for (const auto &r : table.rows)
        measure(r);
    auto line = [&](const std::vector<std::string> &cells) {
        out += '|';
        for (std::size_t i = 0; i < width.size(); ++i) {
            const auto cell = i < cells.size() ? md_cell(cells[i]) : std::string();
            std::size_t w = 0;
            for (std::size_t p = 0; p < cell.size(); p += utf8_length(cell, p))
                ++w;
            out += ' ' + cell + std::string(width[i] - w, ' ') + " |";
        }
        out += '\n';
    };
    line(table.header);
    out += '|';
    for (auto w : width)
        out += ' ' + std::string(w, '-') + " |";
    out += '\n';
    for (const auto &r : table.rows)
        line(r);
    return out;
}

Table score_table(const rubric::ScoreTable &scores, const std::map<std::string, ModelInfo> &info, int decimals) {
    Table t;
    t.header = {"Lang", "Group", "Model", "N"};
    t.header.insert(t.header.end(), scores.columns.begin(), scores.columns.end());
    t.header.push_back("Average");

    std::vector<const rubric::ScoreRow *> rows;
    for (const auto &r : scores.rows)
        rows.push_back(&r);
    auto key = [&](const rubric::ScoreRow *r) {
        auto it = info.find(r->model);
        const ModelInfo none;
        const auto &mi = it == info.end() ? none : it->second;
        return std::make_tuple(lang_rank(mi.lang), mi.group, r->model);
    };
    std::stable_sort(rows.begin(), rows.end(), [&](auto *a, auto *b) { return key(a) < key(b); });

    for (const auto *r : rows) {
        auto it = info.find(r->model);
        std::vector<std::string> cells;
        cells.push_back(it != info.end() && it->second.lang ? to_string(*it->second.lang) : "");
        cells.push_back(it != info.end() ? it->second.group : "");
        cells.push_back(r->model);
        cells.push_back(std::to_string(r->transcripts));
        for (double v : r->values)
            cells.push_back(fixed(v, decimals));
        cells.push_back(fixed(r->average, decimals));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

const std::vector<ColumnSpec> &default_correlation_columns() {
    static const std::vector<ColumnSpec> cols = {{"fluency", "Fluency"},   {"information", "Suggestion"},
                                                 {"skillful", "Skillful"}, {"empathy", "Empathy"},
                                                 {"overall", "Overall"},   {"average", "Average"}};
    return cols;
}

Table correlation_table(std::span<const stats::CorrelationRecord> records, stats::Level level,
                        const std::vector<ColumnSpec> &columns, bool scaled, bool with_kendall) {
    std::map<std::pair<std::string, std::string>, const stats::CorrelationRecord *> cell;
    std::set<std::string> metric_names;
    for (const auto &r : records) {
        if (r.level != level)
            continue;
        cell[{r.metric, r.dimension}] = &r;
        metric_names.insert(r.metric);
    }

    std::vector<std::string> order;
    for (auto name : metrics::kMetricNames)
        if (metric_names.erase(std::string(name)))
            order.emplace_back(name);
    if (metric_names.erase(std::string(kScorerMetricName)))
        order.emplace_back(kScorerMetricName);
    order.insert(order.end(), metric_names.begin(), metric_names.end());

    Table t;
    t.header = {"Metrics"};
    for (const auto &c : columns) {
        t.header.push_back(c.display + " Spear.");
        t.header.push_back(c.display + " Pear.");
        if (with_kendall)
            t.header.push_back(c.display + " Kend.");
    }
    auto show = [&](const std::optional<double> &v) { return v ? fixed(scaled ? *v * 100.0 : *v, scaled ? 2 : 4) : ""; };
    for (const auto &m : order) {
        std::vector<std::string> row{m};
        for (const auto &c : columns) {
            auto it = cell.find({m, c.dimension});
            const stats::CorrelationRecord *r = it == cell.end() ? nullptr : it->second;
            row.push_back(r ? show(r->spearman) : "");
            row.push_back(r ? show(r->pearson) : "");
            if (with_kendall)
                row.push_back(r ? show(r->kendall) : "");
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Table accounting_table(const rolecards::StageAccounting &accounting) {
    Table t;
    t.header = {"Language", "Extract", "LLM_F", "Human_F", "High", "Middle"};
    auto row = [](std::string name, const rolecards::StageCounts &c) {
        return std::vector<std::string>{std::move(name),
                                        std::to_string(c.extracted),
                                        std::to_string(c.llm_filtered),
                                        std::to_string(c.human_filtered),
                                        std::to_string(c.high),
                                        std::to_string(c.middle)};
    };
    for (const auto &[lang, counts] : accounting.by_lang)
        t.rows.push_back(row(lang == Lang::en ? "English" : "Chinese", counts));
    t.rows.push_back(row("Total", accounting.total()));
    return t;
}

void export_report(const Table &table, Format format, const std::string &path) {
    store::write_file_atomic(path, render(table, format));
}

} // namespace esceval::report
