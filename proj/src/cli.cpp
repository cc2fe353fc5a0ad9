#include "esceval/cli.hpp"

#include "esceval/annosvc.hpp"
#include "esceval/error.hpp"
#include "esceval/records.hpp"
#include "esceval/report.hpp"
#include "esceval/store.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace esceval::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json to_json(const RunManifest &m) {
    return {{"command", m.command},      {"args", m.args},         {"config_digest", m.config_digest},
            {"inputs", m.inputs},        {"outputs", m.outputs},   {"started", m.started},
            {"finished", m.finished},    {"tool_version", m.tool_version}, {"exit_code", m.exit_code},
            {"error", m.error}};
}

namespace {

// Fixed start for --deterministic-clock runs.
constexpr const char *kEpoch = "2024-01-01T00:00:00.000Z";

struct Context {
    fs::path workspace = ".";
    std::string config_path;
    json config = json::object();
    bool dry_run = false;
    bool deterministic = false;
    Clock clock = system_clock();
    RunManifest manifest;
    std::ostream *out = &std::cout;
    std::ostream *err = &std::cerr;

    std::string resolve(const std::string &p) const {
        fs::path path(p);
        return (path.is_absolute() ? path : workspace / path).lexically_normal().string();
    }

    std::string rel(const std::string &abs) const {
        auto r = fs::path(abs).lexically_relative(workspace);
        return r.empty() || r.native().rfind("..", 0) == 0 ? abs : r.string();
    }

    // Resolves an input path and records its digest (each record file for a
    // directory).
    std::string input(const std::string &p, bool required = true) {
        auto path = resolve(p);
        if (!fs::exists(path)) {
            if (required)
                throw DataError("cli", "input not found: " + path);
            return path;
        }
        if (fs::is_directory(path)) {
            for (const auto &f : store::list_record_files(path))
                manifest.inputs[rel(f)] = sha256_file(f);
        } else {
            manifest.inputs[rel(path)] = sha256_file(path);
        }
        return path;
    }

    void wrote(const std::string &path) {
        if (fs::is_directory(path)) {
            for (const auto &f : store::list_record_files(path))
                manifest.outputs[rel(f)] = sha256_file(f);
        } else if (fs::exists(path)) {
            manifest.outputs[rel(path)] = sha256_file(path);
        }
    }

    template <typename T>
    void save(const std::vector<T> &records, const std::string &p) {
        const auto path = resolve(p);
        if (dry_run) {
            *out << "dry-run: would write " << records.size() << " record(s) to " << rel(path) << "\n";
            return;
        }
        store::save(records, path);
        wrote(path);
    }

    void write_text(const std::string &p, const std::string &content) {
        const auto path = resolve(p);
        if (dry_run) {
            *out << "dry-run: would write " << rel(path) << "\n";
            return;
        }
        store::write_file_atomic(path, content);
        wrote(path);
    }
};

template <typename T>
std::vector<T> load_records(Context &ctx, const std::string &p) {
    return store::load_all<T>(ctx.input(p));
}

json read_json_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cli", "cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception &ex) {
        throw ValidationError("cli", path + ": " + ex.what());
    }
}

std::string read_text_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cli", "cannot read " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------------------
// Endpoints from config

// "scripted" section: alias -> {"replies": {last user message: reply},
// "fallback": text}. "{n}" in a reply is replaced by the turn number.
std::shared_ptr<gateway::Endpoint> scripted_endpoint(const std::string &alias, const json &spec) {
    std::map<std::string, std::string> replies;
    if (spec.contains("replies"))
        replies = spec.at("replies").get<std::map<std::string, std::string>>();
    std::optional<std::string> fallback;
    if (spec.contains("fallback"))
        fallback = spec.at("fallback").get<std::string>();
    auto provider = std::make_shared<gateway::FunctionProvider>([replies, fallback](const gateway::ChatRequest &r) {
        std::string last;
        std::size_t turns = 0;
        for (const auto &m : r.messages) {
            if (m.role == gateway::Role::user)
                last = m.content;
            turns += m.role != gateway::Role::system;
        }
        auto it = replies.find(last);
        std::string text;
        if (it != replies.end())
            text = it->second;
        else if (fallback)
            text = *fallback;
        else
            return gateway::Attempt::fatal_failure("no scripted reply");
        for (auto pos = text.find("{n}"); pos != std::string::npos; pos = text.find("{n}"))
            text.replace(pos, 3, std::to_string(turns / 2 + 1));
        return gateway::Attempt::success(text);
    });
    return gateway::make_scripted_endpoint(alias, provider);
}

std::shared_ptr<gateway::Endpoint> endpoint_from_config(const Context &ctx, const std::string &alias) {
    if (ctx.config.contains("scripted") && ctx.config["scripted"].contains(alias))
        return scripted_endpoint(alias, ctx.config["scripted"][alias]);
    if (ctx.config.contains("endpoints")) {
        auto configs = gateway::parse_endpoint_configs(ctx.config["endpoints"]);
        auto it = configs.find(alias);
        if (it != configs.end())
            return gateway::make_http_endpoint(it->second);
    }
    throw ValidationError("cli", "endpoint alias '" + alias + "' is not defined in the config", "endpoint");
}

std::unique_ptr<rolecards::ResponseSource> response_source(Context &ctx, const std::string &replay,
                                                           const std::string &endpoint,
                                                           std::unique_ptr<gateway::RequestLog> &log) {
    if (replay.empty() == endpoint.empty())
        throw ValidationError("cli", "give exactly one of --replay or --endpoint", "replay");
    if (!replay.empty())
        return std::make_unique<rolecards::ReplaySource>(rolecards::ReplaySource::from_file(ctx.input(replay)));
    if (ctx.dry_run)
        log = std::make_unique<gateway::RequestLog>();
    else
        log = std::make_unique<gateway::RequestLog>(ctx.resolve("logs/requests-" + endpoint + ".jsonl"));
    return std::make_unique<rolecards::LiveSource>(endpoint_from_config(ctx, endpoint), log.get(), ctx.clock);
}

// ---------------------------------------------------------------------------
// Commands

struct ExtractOpts {
    std::string datasets, source, dataset, lang = "en", format = "qa";
    std::string replay, endpoint;
    std::string out = "cards/extracted.jsonl";
    std::string log = "cards/extraction_log.jsonl";
    std::size_t parallelism = 4;
};

void cmd_extract(Context &ctx, const ExtractOpts &o) {
    std::vector<rolecards::SourceRecord> records;
    if (!o.datasets.empty()) {
        const auto manifest_path = ctx.input(o.datasets);
        const auto doc = read_json_file(manifest_path);
        const auto base = fs::path(manifest_path).parent_path();
        for (const auto &[name, d] : doc.items()) {
            const auto file = (base / d.at("file").get<std::string>()).string();
            ctx.input(file);
            auto part = rolecards::load_source_records(file, name, parse_lang(d.at("lang").get<std::string>()),
                                                       rolecards::parse_format(d.at("format").get<std::string>()));
            records.insert(records.end(), part.begin(), part.end());
        }
    } else {
        if (o.source.empty() || o.dataset.empty())
            throw ValidationError("cli", "extract needs --datasets or --source with --dataset", "source");
        records = rolecards::load_source_records(ctx.input(o.source), o.dataset, parse_lang(o.lang),
                                                 rolecards::parse_format(o.format));
    }
    std::unique_ptr<gateway::RequestLog> log;
    auto source = response_source(ctx, o.replay, o.endpoint, log);
    if (ctx.dry_run && !o.endpoint.empty()) {
        *ctx.out << "dry-run: " << records.size() << " source record(s) validated\n";
        return;
    }
    auto result = rolecards::extract_cards(records, *source, {o.parallelism, 0.0});
    std::size_t errors = 0;
    for (const auto &d : result.decisions)
        errors += d.verdict == "error";
    ctx.save(result.cards, o.out);
    ctx.save(result.decisions, o.log);
    *ctx.out << "extracted " << result.cards.size() << " card(s) from " << records.size() << " record(s); "
             << result.rejects.size() - errors << " rejected, " << errors << " error(s)\n";
}

struct FilterOpts {
    std::string cards = "cards/extracted.jsonl";
    std::string replay, endpoint;
    std::string out = "cards/filtered.jsonl";
    std::string log = "cards/filter_log.jsonl";
    std::string needs_human = "cards/needs_human.jsonl";
    std::size_t parallelism = 4;
};

void cmd_filter(Context &ctx, const FilterOpts &o) {
    auto cards = load_records<rolecards::RoleCard>(ctx, o.cards);
    std::unique_ptr<gateway::RequestLog> log;
    auto judge = response_source(ctx, o.replay, o.endpoint, log);
    if (ctx.dry_run && !o.endpoint.empty()) {
        *ctx.out << "dry-run: " << cards.size() << " card(s) validated\n";
        return;
    }
    auto result = rolecards::llm_filter(cards, *judge, {o.parallelism, 0.0});
    std::vector<rolecards::RoleCard> unclear;
    for (const auto &d : result.needs_human)
        unclear.push_back(d.card);
    ctx.save(result.kept, o.out);
    ctx.save(result.decisions, o.log);
    ctx.save(unclear, o.needs_human);
    *ctx.out << "kept " << result.kept.size() << ", dropped " << result.dropped.size() << ", needs human "
             << result.needs_human.size() << "\n";
}

struct CorrectOpts {
    std::string cards = "cards/filtered.jsonl";
    std::string decisions;
    std::string taxonomy;
    std::optional<std::size_t> expected_leaves;
    std::string out = "cards/final.jsonl";
};

void cmd_correct(Context &ctx, const CorrectOpts &o) {
    auto taxonomy = rolecards::load_taxonomy(ctx.input(o.taxonomy), o.expected_leaves);
    auto cards = load_records<rolecards::RoleCard>(ctx, o.cards);
    auto decisions = load_records<rolecards::CorrectionDecision>(ctx, o.decisions);
    auto outcome = rolecards::apply_corrections(cards, decisions, taxonomy);
    ctx.save(outcome.finalized, o.out);
    *ctx.out << "finalized " << outcome.finalized.size() << ", discarded " << outcome.discarded.size()
             << ", undecided " << outcome.undecided.size() << "\n";
}

struct SelectOpts {
    std::string cards = "cards/final.jsonl";
    std::string quality, lang;
    std::string out = "cards/eval.jsonl";
};

void cmd_select(Context &ctx, const SelectOpts &o) {
    rolecards::SelectionPolicy policy;
    if (!o.quality.empty())
        policy.quality = rolecards::parse_quality(o.quality);
    if (!o.lang.empty())
        policy.lang = parse_lang(o.lang);
    auto cards = load_records<rolecards::RoleCard>(ctx, o.cards);
    auto selected = rolecards::select_eval_set(cards, policy);
    ctx.save(selected, o.out);
    *ctx.out << "selected " << selected.size() << " of " << cards.size() << " card(s)\n";
}

struct SimulateOpts {
    std::string cards = "cards/eval.jsonl";
    std::size_t parallelism = 4;
    std::optional<std::size_t> max_new;
};

void cmd_simulate(Context &ctx, const SimulateOpts &o) {
    if (ctx.config_path.empty())
        throw ValidationError("cli", "simulate needs --config", "config");
    const auto &cfg = ctx.config;
    if (!cfg.contains("seeker") || !cfg.contains("targets"))
        throw ValidationError("cli", "config needs 'seeker' and 'targets'", "config");
    const auto &s = cfg["seeker"];

    sim::SeekerConfig seeker;
    seeker.endpoint = endpoint_from_config(ctx, s.at("endpoint").get<std::string>());
    seeker.variant.kind = sim::parse_variant(s.value("variant", "zero_shot"));
    if (s.contains("example_file"))
        seeker.variant.example_dialogue = read_text_file(ctx.input(s["example_file"].get<std::string>()));
    const auto style = s.value("style", "gpt");
    if (style != "gpt" && style != "npc")
        throw ValidationError("cli", "seeker style must be gpt or npc", "style");
    seeker.style = style == "npc" ? sim::PromptStyle::npc : sim::PromptStyle::gpt;
    if (s.contains("opener"))
        seeker.fixed_opener = s["opener"].get<std::string>();

    std::vector<sim::TargetConfig> targets;
    for (const auto &t : cfg["targets"]) {
        sim::TargetConfig tc;
        tc.endpoint = endpoint_from_config(ctx, t.at("endpoint").get<std::string>());
        if (t.contains("system_prompt"))
            tc.system_prompt = t["system_prompt"].get<std::string>();
        targets.push_back(std::move(tc));
    }
    if (targets.empty())
        throw ValidationError("cli", "config lists no targets", "targets");

    sim::BatchOptions options;
    options.parallelism = o.parallelism;
    options.max_new_dialogues = o.max_new;
    const auto d = cfg.value("dialogue", json::object());
    options.dialogue.turns = d.value("turns", std::size_t{5});
    options.dialogue.temperature = d.value("temperature", 0.0);
    options.dialogue.max_turn_tokens = d.value("max_turn_tokens", 512);
    options.dialogue.timeout = std::chrono::milliseconds(static_cast<long>(d.value("timeout_s", 60.0) * 1000));

    sim::RefusalPatterns refusals;
    if (cfg.contains("refusal_patterns"))
        refusals = sim::RefusalPatterns::load(ctx.input(cfg["refusal_patterns"].get<std::string>()));

    auto cards = load_records<rolecards::RoleCard>(ctx, o.cards);
    for (const auto &c : cards)
        sim::build_seeker_prompt(c, seeker.variant, seeker.style);

    sim::TranscriptStore store(ctx.workspace.string());
    if (ctx.dry_run) {
        std::size_t pending = 0;
        for (const auto &t : targets)
            for (const auto &c : cards)
                pending += !store.contains(c.id, t.endpoint->alias());
        *ctx.out << "dry-run: " << pending << " dialogue(s) pending, "
                 << cards.size() * targets.size() - pending << " already stored\n";
        return;
    }
    gateway::RequestLog log(ctx.resolve("logs/requests.jsonl"));
    sim::DialogueContext dctx{&log, cfg.contains("refusal_patterns") ? &refusals : nullptr, ctx.clock};
    auto report = sim::run_batch(cards, seeker, targets, store, options, dctx);
    for (const auto &t : targets)
        ctx.wrote(store.path_for(t.endpoint->alias()));
    ctx.wrote(ctx.resolve("logs/requests.jsonl"));
    *ctx.out << "ran " << report.executed << " dialogue(s) (" << report.aborted << " aborted), skipped "
             << report.skipped << " already stored\n";
}

struct MetricsOpts {
    std::string transcripts = "transcripts";
    std::string references;
    std::string out = "metrics/metrics.jsonl";
    bool include_aborted = false;
};

void cmd_metrics(Context &ctx, const MetricsOpts &o) {
    auto transcripts = load_records<sim::Transcript>(ctx, o.transcripts);
    std::map<std::string, metrics::ReferenceSet> refs;
    for (auto &r : load_records<metrics::ReferenceSet>(ctx, o.references)) {
        auto id = r.card_id;
        refs.emplace(id, std::move(r));
    }
    auto result = metrics::score_transcripts(transcripts, refs, {o.include_aborted});
    for (const auto &w : result.warnings)
        *ctx.err << "warning: " << w << "\n";
    ctx.save(result.records, o.out);
    *ctx.out << "scored " << result.records.size() << " transcript(s)\n";
    for (const auto &[model, c] : result.corpus)
        *ctx.out << "  " << model << ": corpus distinct-1 " << report::fixed(c.distinct1, 4) << ", distinct-2 "
                 << report::fixed(c.distinct2, 4) << "\n";
}

std::map<std::string, std::string> transcript_models(const std::vector<sim::Transcript> &transcripts) {
    std::map<std::string, std::string> out;
    for (const auto &t : transcripts)
        out[t.id] = t.target_alias;
    return out;
}

std::map<std::string, report::ModelInfo> load_model_info(Context &ctx, const std::string &path) {
    std::map<std::string, report::ModelInfo> info;
    if (path.empty())
        return info;
    for (const auto &[alias, v] : read_json_file(ctx.input(path)).items()) {
        report::ModelInfo mi;
        if (v.contains("lang"))
            mi.lang = parse_lang(v["lang"].get<std::string>());
        mi.group = v.value("group", "");
        info[alias] = mi;
    }
    return info;
}

struct AggregateOpts {
    std::string annotations = "annotations/annotations.jsonl";
    std::string transcripts = "transcripts";
    std::string rubric = "eval7";
    std::string models;
    std::string format = "md";
    std::string out;
};

void cmd_aggregate(Context &ctx, const AggregateOpts &o) {
    const auto kind = rubric::parse_rubric(o.rubric);
    const auto fmt = report::parse_format(o.format);
    auto annotations = load_records<rubric::AnnotationRecord>(ctx, o.annotations);
    for (const auto &a : annotations)
        rubric::validate_annotation(a);
    auto transcripts = load_records<sim::Transcript>(ctx, o.transcripts);
    auto result = rubric::aggregate_scores(annotations, transcript_models(transcripts), kind);
    for (const auto &w : result.warnings)
        *ctx.err << "warning: " << w << "\n";
    auto table = report::score_table(result.table, load_model_info(ctx, o.models));
    const auto text = report::render(table, fmt);
    *ctx.out << text;
    const auto out = o.out.empty() ? "reports/scores-" + o.rubric + "." + o.format : o.out;
    ctx.write_text(out, text);
}

struct AccuracyOpts {
    std::string pred;
    std::string gold = "annotations/annotations.jsonl";
    int soft = 1;
    std::string rubric = "eval7";
    std::string format = "md";
    std::string out = "reports/accuracy.md";
};

void cmd_accuracy(Context &ctx, const AccuracyOpts &o) {
    const auto kind = rubric::parse_rubric(o.rubric);
    const auto fmt = report::parse_format(o.format);
    auto preds = load_records<rubric::ScorerPrediction>(ctx, o.pred);
    auto gold = load_records<rubric::AnnotationRecord>(ctx, o.gold);
    auto rows = rubric::accuracy_by_dimension(preds, gold, o.soft, kind);
    report::Table t;
    t.header = {"Dimension", "N", "ACC", "ACC_soft"};
    for (const auto &r : rows)
        t.rows.push_back({r.dimension, std::to_string(r.n), report::fixed(r.acc * 100, 2),
                          report::fixed(r.acc_soft * 100, 2)});
    const auto text = report::render(t, fmt);
    *ctx.out << text;
    ctx.write_text(o.out, text);
}

struct CorrelateOpts {
    std::string level = "sample";
    std::string human = "annotations/annotations.jsonl";
    std::string metrics = "metrics";
    std::string scorer;
    std::string transcripts;
    bool kendall = false;
    std::string format = "md";
    std::string out;
};

void cmd_correlate(Context &ctx, const CorrelateOpts &o) {
    const auto level = stats::parse_level(o.level);
    const auto fmt = report::parse_format(o.format);
    auto annotations = load_records<rubric::AnnotationRecord>(ctx, o.human);
    auto metric_records = load_records<metrics::MetricRecord>(ctx, o.metrics);
    const auto finals = rubric::final_scores(annotations, rubric::RubricKind::eval7);
    const auto dims = rubric::dimension_names(rubric::RubricKind::eval7);

    std::map<std::string, std::string> group_of;
    for (const auto &m : metric_records)
        group_of[m.transcript_id] = m.model;
    if (!o.transcripts.empty())
        for (const auto &[id, model] : transcript_models(load_records<sim::Transcript>(ctx, o.transcripts)))
            group_of[id] = model;

    auto dimension_value = [&](const std::map<std::string, int> &scores, const std::string &dim) -> std::optional<double> {
        if (dim == "average") {
            double sum = 0;
            for (const auto &d : dims) {
                auto it = scores.find(d);
                if (it == scores.end())
                    return std::nullopt;
                sum += it->second;
            }
            return sum / static_cast<double>(dims.size());
        }
        auto it = scores.find(dim);
        if (it == scores.end())
            return std::nullopt;
        return static_cast<double>(it->second);
    };

    std::vector<std::pair<std::string, std::map<std::string, std::map<std::string, double>>>> sources; // metric -> dim -> tid -> value
    const auto &columns = report::default_correlation_columns();
    for (auto name : metrics::kMetricNames) {
        std::map<std::string, std::map<std::string, double>> by_dim;
        for (const auto &c : columns)
            for (const auto &m : metric_records)
                by_dim[c.dimension][m.transcript_id] = metrics::metric_value(m.values, name);
        sources.emplace_back(std::string(name), std::move(by_dim));
    }
    if (!o.scorer.empty()) {
        std::map<std::string, std::map<std::string, double>> by_dim;
        for (const auto &p : load_records<rubric::ScorerPrediction>(ctx, o.scorer))
            for (const auto &c : columns)
                if (auto v = dimension_value(p.scores, c.dimension))
                    by_dim[c.dimension][p.transcript_id] = *v;
        sources.emplace_back(std::string(report::kScorerMetricName), std::move(by_dim));
    }

    std::vector<stats::CorrelationRecord> records;
    for (const auto &[metric, by_dim] : sources) {
        for (const auto &c : columns) {
            std::map<std::string, double> human;
            for (const auto &[tid, scores] : finals)
                if (auto v = dimension_value(scores, c.dimension))
                    human[tid] = *v;
            stats::CorrelationRecord rec{metric, c.dimension, level, std::nullopt, std::nullopt, std::nullopt, 0};
            auto it = by_dim.find(c.dimension);
            const std::map<std::string, double> empty;
            const auto &values = it == by_dim.end() ? empty : it->second;
            try {
                auto coeffs = level == stats::Level::sample ? stats::sample_level(values, human)
                                                            : stats::dataset_level(values, human, group_of);
                rec.spearman = coeffs.spearman;
                rec.pearson = coeffs.pearson;
                rec.kendall = coeffs.kendall;
                rec.n = coeffs.n;
                if (!coeffs.spearman || !coeffs.pearson)
                    *ctx.err << "warning: " << metric << " / " << c.dimension
                             << ": undefined coefficient (constant series), recorded as null\n";
            } catch (const ValidationError &ex) {
                *ctx.err << "warning: " << metric << " / " << c.dimension << ": " << ex.what() << "\n";
            }
            records.push_back(std::move(rec));
        }
    }
    auto table = report::correlation_table(records, level, columns, true, o.kendall);
    const auto text = report::render(table, fmt);
    *ctx.out << text;
    const auto base = o.out.empty() ? "reports/correlation-" + o.level : o.out;
    ctx.save(records, base + ".jsonl");
    ctx.write_text(base + "." + o.format, text);
}

struct WinrateOpts {
    std::string judgments = "annotations/pairwise.jsonl";
    std::string transcripts = "transcripts";
    std::string format = "md";
    std::string out = "reports/winrate.md";
};

void cmd_winrate(Context &ctx, const WinrateOpts &o) {
    const auto fmt = report::parse_format(o.format);
    auto judgments = load_records<rubric::PairwiseJudgment>(ctx, o.judgments);
    auto transcripts = load_records<sim::Transcript>(ctx, o.transcripts);
    auto rates = rubric::win_rate(judgments, transcript_models(transcripts));
    report::Table t;
    t.header = {"Contestant", "Wins", "Appearances", "Win rate"};
    for (const auto &[name, s] : rates)
        t.rows.push_back({name, std::to_string(s.wins), std::to_string(s.appearances), report::fixed(s.rate * 100, 2)});
    const auto text = report::render(t, fmt);
    *ctx.out << text;
    ctx.write_text(o.out, text);
}

struct ReportOpts {
    std::string kind = "accounting";
    std::string extracted = "cards/extracted.jsonl";
    std::string filtered = "cards/filtered.jsonl";
    std::string final_cards = "cards/final.jsonl";
    std::string records;
    std::string level = "sample";
    bool kendall = false;
    std::string format = "md";
    std::string out;
};

void cmd_report(Context &ctx, const ReportOpts &o) {
    const auto fmt = report::parse_format(o.format);
    report::Table table;
    if (o.kind == "accounting") {
        auto extracted = load_records<rolecards::RoleCard>(ctx, o.extracted);
        auto filtered = load_records<rolecards::RoleCard>(ctx, o.filtered);
        auto finalized = load_records<rolecards::RoleCard>(ctx, o.final_cards);
        auto acc = rolecards::tally_stages(extracted, filtered, finalized);
        acc.validate();
        table = report::accounting_table(acc);
    } else if (o.kind == "correlation") {
        if (o.records.empty())
            throw ValidationError("cli", "report --kind correlation needs --records", "records");
        auto records = load_records<stats::CorrelationRecord>(ctx, o.records);
        table = report::correlation_table(records, stats::parse_level(o.level), report::default_correlation_columns(),
                                          true, o.kendall);
    } else {
        throw ValidationError("cli", "report kind must be accounting or correlation", "kind");
    }
    const auto text = report::render(table, fmt);
    *ctx.out << text;
    ctx.write_text(o.out.empty() ? "reports/" + o.kind + "." + o.format : o.out, text);
}

struct ServeOpts {
    std::string transcripts = "transcripts";
    std::vector<std::string> annotators;
    std::string pairs;
    std::vector<std::string> rubrics{"eval7"};
    std::string host = "127.0.0.1";
    int port = 8080;
    std::uint64_t seed = 0;
    double lease_minutes = 30;
    std::string cors_origin = "*";
};

annosvc::Server *g_server = nullptr;

void cmd_serve(Context &ctx, const ServeOpts &o) {
    annosvc::CoordinatorConfig cc;
    cc.annotators.insert(o.annotators.begin(), o.annotators.end());
    if (ctx.config.contains("annotators"))
        for (const auto &a : ctx.config["annotators"])
            cc.annotators.insert(a.get<std::string>());
    if (cc.annotators.empty())
        throw ValidationError("cli", "serve needs an annotator allowlist (--annotators or config 'annotators')",
                              "annotators");
    cc.lease_duration = std::chrono::milliseconds(static_cast<long>(o.lease_minutes * 60'000));
    cc.seed = o.seed;
    cc.clock = ctx.clock;
    cc.workspace = ctx.workspace.string();

    std::vector<rubric::RubricKind> kinds;
    for (const auto &r : o.rubrics)
        kinds.push_back(rubric::parse_rubric(r));
    std::vector<annosvc::PairTask> pairs;
    if (!o.pairs.empty())
        for (const auto &p : read_json_file(ctx.input(o.pairs)))
            pairs.push_back({p.at("pair_id").get<std::string>(), p.at("a").get<std::string>(),
                             p.at("b").get<std::string>()});
    auto transcripts = load_records<sim::Transcript>(ctx, o.transcripts);
    if (ctx.dry_run) {
        annosvc::CoordinatorConfig check = cc;
        check.workspace.clear();
        annosvc::Coordinator coordinator(check, transcripts, kinds, pairs);
        *ctx.out << "dry-run: " << transcripts.size() << " transcript(s), " << pairs.size() << " pair(s), "
                 << cc.annotators.size() << " annotator(s)\n";
        return;
    }
    annosvc::Coordinator coordinator(cc, std::move(transcripts), kinds, std::move(pairs));
    annosvc::Server server(coordinator, {o.host, o.port, o.cors_origin});
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server)
            g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server)
            g_server->stop();
    });
    *ctx.out << "serving on http://" << o.host << ":" << o.port << "\n" << std::flush;
    server.run();
    g_server = nullptr;
    ctx.wrote(ctx.resolve("annotations"));
}

// ---------------------------------------------------------------------------

std::string manifest_name(const RunManifest &m) {
    std::string stamp = m.started;
    for (auto &c : stamp)
        if (c == ':' || c == '.')
            c = '-';
    return m.command + "-" + stamp + ".json";
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Emotional-support chatbot evaluation harness", "esceval"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Context ctx;
    ctx.out = &out;
    ctx.err = &err;
    std::string workspace = ".";
    app.add_option("--workspace", workspace, "Root for all relative paths");
    app.add_option("--config", ctx.config_path, "JSON config file");
    app.add_flag("--dry-run", ctx.dry_run, "Validate everything, write nothing");
    app.add_flag("--deterministic-clock", ctx.deterministic, "Timestamps start at a fixed epoch");

    ExtractOpts ex;
    auto *extract = app.add_subcommand("extract", "Extract role cards from source records");
    extract->add_option("--datasets", ex.datasets, "datasets.json: name -> {lang, format, file}");
    extract->add_option("--source", ex.source, "One source JSONL file");
    extract->add_option("--dataset", ex.dataset, "Dataset name for --source");
    extract->add_option("--lang", ex.lang)->check(CLI::IsMember({"en", "zh"}));
    extract->add_option("--format", ex.format)->check(CLI::IsMember({"qa", "md"}));
    extract->add_option("--replay", ex.replay, "Recorded extractor replies");
    extract->add_option("--endpoint", ex.endpoint, "Live extractor endpoint alias");
    extract->add_option("--out", ex.out);
    extract->add_option("--log", ex.log);
    extract->add_option("--parallelism", ex.parallelism)->check(CLI::PositiveNumber);

    FilterOpts fo;
    auto *filter = app.add_subcommand("filter", "LLM event filter over extracted cards");
    filter->add_option("--cards", fo.cards);
    filter->add_option("--replay", fo.replay);
    filter->add_option("--endpoint", fo.endpoint);
    filter->add_option("--out", fo.out);
    filter->add_option("--log", fo.log);
    filter->add_option("--needs-human", fo.needs_human);
    filter->add_option("--parallelism", fo.parallelism)->check(CLI::PositiveNumber);

    CorrectOpts co;
    auto *correct = app.add_subcommand("correct", "Apply human correction decisions");
    correct->add_option("--cards", co.cards);
    correct->add_option("--decisions", co.decisions)->required();
    correct->add_option("--taxonomy", co.taxonomy)->required();
    correct->add_option("--expected-leaves", co.expected_leaves);
    correct->add_option("--out", co.out);

    SelectOpts so;
    auto *select = app.add_subcommand("select", "Select the evaluation card set");
    select->add_option("--cards", so.cards);
    select->add_option("--quality", so.quality)->check(CLI::IsMember({"high", "middle"}));
    select->add_option("--lang", so.lang)->check(CLI::IsMember({"en", "zh"}));
    select->add_option("--out", so.out);

    SimulateOpts sm;
    auto *simulate = app.add_subcommand("simulate", "Run seeker/target dialogues (resumable)");
    simulate->add_option("--cards", sm.cards);
    simulate->add_option("--parallelism", sm.parallelism)->check(CLI::PositiveNumber);
    simulate->add_option("--max-new", sm.max_new, "Stop after this many new dialogues");

    MetricsOpts mo;
    auto *metrics_cmd = app.add_subcommand("metrics", "Reference-based text metrics");
    metrics_cmd->add_option("--transcripts", mo.transcripts);
    metrics_cmd->add_option("--references", mo.references)->required();
    metrics_cmd->add_option("--out", mo.out);
    metrics_cmd->add_flag("--include-aborted", mo.include_aborted);

    AggregateOpts ag;
    auto *aggregate = app.add_subcommand("aggregate", "Per-model rubric score table");
    aggregate->add_option("--annotations", ag.annotations);
    aggregate->add_option("--transcripts", ag.transcripts);
    aggregate->add_option("--rubric", ag.rubric)->check(CLI::IsMember({"eval7", "roleplay6"}));
    aggregate->add_option("--models", ag.models, "JSON: alias -> {lang, group}");
    aggregate->add_option("--format", ag.format)->check(CLI::IsMember({"csv", "md"}));
    aggregate->add_option("--out", ag.out);

    AccuracyOpts ac;
    auto *accuracy = app.add_subcommand("accuracy", "Scorer ACC / ACC_soft per dimension");
    accuracy->add_option("--pred", ac.pred)->required();
    accuracy->add_option("--gold", ac.gold);
    accuracy->add_option("--soft", ac.soft, "Tolerance for ACC_soft")->check(CLI::NonNegativeNumber);
    accuracy->add_option("--rubric", ac.rubric)->check(CLI::IsMember({"eval7", "roleplay6"}));
    accuracy->add_option("--format", ac.format)->check(CLI::IsMember({"csv", "md"}));
    accuracy->add_option("--out", ac.out);

    CorrelateOpts cr;
    auto *correlate = app.add_subcommand("correlate", "Metric vs human correlation");
    correlate->add_option("--level", cr.level)->check(CLI::IsMember({"sample", "dataset"}));
    correlate->add_option("--human", cr.human);
    correlate->add_option("--metrics", cr.metrics);
    correlate->add_option("--scorer", cr.scorer, "Scorer predictions, reported as the Scorer row");
    correlate->add_option("--transcripts", cr.transcripts);
    correlate->add_flag("--kendall", cr.kendall);
    correlate->add_option("--format", cr.format)->check(CLI::IsMember({"csv", "md"}));
    correlate->add_option("--out", cr.out, "Output path without extension");

    WinrateOpts wr;
    auto *winrate = app.add_subcommand("winrate", "Pairwise win rates");
    winrate->add_option("--judgments", wr.judgments);
    winrate->add_option("--transcripts", wr.transcripts);
    winrate->add_option("--format", wr.format)->check(CLI::IsMember({"csv", "md"}));
    winrate->add_option("--out", wr.out);

    ServeOpts sv;
    auto *serve = app.add_subcommand("serve", "Annotation service");
    serve->add_option("--transcripts", sv.transcripts);
    serve->add_option("--annotators", sv.annotators)->delimiter(',');
    serve->add_option("--pairs", sv.pairs, "JSON array of {pair_id, a, b}");
    serve->add_option("--rubric", sv.rubrics)->delimiter(',');
    serve->add_option("--host", sv.host);
    serve->add_option("--port", sv.port);
    serve->add_option("--seed", sv.seed);
    serve->add_option("--lease-minutes", sv.lease_minutes)->check(CLI::PositiveNumber);
    serve->add_option("--cors-origin", sv.cors_origin);

    ReportOpts rp;
    auto *report_cmd = app.add_subcommand("report", "Render accounting or correlation tables");
    report_cmd->add_option("--kind", rp.kind)->check(CLI::IsMember({"accounting", "correlation"}));
    report_cmd->add_option("--extracted", rp.extracted);
    report_cmd->add_option("--filtered", rp.filtered);
    report_cmd->add_option("--final", rp.final_cards);
    report_cmd->add_option("--records", rp.records);
    report_cmd->add_option("--level", rp.level)->check(CLI::IsMember({"sample", "dataset"}));
    report_cmd->add_flag("--kendall", rp.kendall);
    report_cmd->add_option("--format", rp.format)->check(CLI::IsMember({"csv", "md"}));
    report_cmd->add_option("--out", rp.out);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    auto *cmd = app.get_subcommands().front();
    ctx.workspace = fs::absolute(workspace).lexically_normal();
    if (ctx.deterministic)
        ctx.clock = stepping_clock(parse_utc(kEpoch));
    ctx.manifest.command = cmd->get_name();
    ctx.manifest.args = args;
    ctx.manifest.started = format_utc(ctx.clock());

    int code = 0;
    try {
        if (!ctx.config_path.empty()) {
            const auto path = ctx.resolve(ctx.config_path);
            if (!fs::exists(path))
                throw ValidationError("cli", "config not found: " + path, "config");
            ctx.config = read_json_file(path);
            if (!ctx.config.is_object())
                throw ValidationError("cli", "config must be a JSON object", "config");
            ctx.manifest.config_digest = sha256_file(path);
        }
        const auto &name = ctx.manifest.command;
        if (name == "extract")
            cmd_extract(ctx, ex);
        else if (name == "filter")
            cmd_filter(ctx, fo);
        else if (name == "correct")
            cmd_correct(ctx, co);
        else if (name == "select")
            cmd_select(ctx, so);
        else if (name == "simulate")
            cmd_simulate(ctx, sm);
        else if (name == "metrics")
            cmd_metrics(ctx, mo);
        else if (name == "aggregate")
            cmd_aggregate(ctx, ag);
        else if (name == "accuracy")
            cmd_accuracy(ctx, ac);
        else if (name == "correlate")
            cmd_correlate(ctx, cr);
        else if (name == "winrate")
            cmd_winrate(ctx, wr);
        else if (name == "serve")
            cmd_serve(ctx, sv);
        else if (name == "report")
            cmd_report(ctx, rp);
    } catch (const Error &e) {
        err << "error [" << e.module() << "]: " << e.what() << "\n";
        ctx.manifest.error = e.what();
        code = static_cast<int>(e.kind());
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        ctx.manifest.error = e.what();
        code = static_cast<int>(ErrorKind::data);
    }

    ctx.manifest.exit_code = code;
    ctx.manifest.finished = format_utc(ctx.clock());
    if (!ctx.dry_run) {
        try {
            const auto path = (ctx.workspace / "manifests" / manifest_name(ctx.manifest)).string();
            store::write_file_atomic(path, to_json(ctx.manifest).dump(2) + "\n");
        } catch (const std::exception &e) {
            err << "error [cli]: cannot write manifest: " << e.what() << "\n";
            if (code == 0)
                code = static_cast<int>(ErrorKind::data);
        }
    }
    return code;
}

} // namespace esceval::cli
