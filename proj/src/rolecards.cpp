#include "esceval/rolecards.hpp"

#include "esceval/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace esceval::rolecards {

using nlohmann::json;

namespace {

constexpr const char *kModule = "rolecards";

std::string path_string(const TaxonomyPath &p) { return p.l1 + " > " + p.l2 + " > " + p.l3; }

int parse_count(const std::string &text, const std::string &where) {
    try {
        std::size_t used = 0;
        int v = std::stoi(text, &used);
        if (used != text.size() || v < 0)
            throw std::invalid_argument(text);
        return v;
    } catch (const std::exception &) {
        throw ValidationError(kModule, where + ": count '" + text + "' is not a nonnegative integer", where);
    }
}

void require_keys(const json &j, std::initializer_list<const char *> keys, const std::string &what) {
    if (!j.is_object())
        throw ValidationError(kModule, what + " must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto &[k, v] : j.items())
        if (!allowed.count(k))
            throw ValidationError(kModule, what + ": unknown field '" + k + "'", k);
    for (const auto *k : keys)
        if (!j.contains(k))
            throw ValidationError(kModule, what + ": missing field '" + std::string(k) + "'", k);
}

json path_json(const std::optional<TaxonomyPath> &p) {
    if (!p)
        return nullptr;
    return {{"l1", p->l1}, {"l2", p->l2}, {"l3", p->l3}};
}

std::optional<TaxonomyPath> path_from_json(const json &j) {
    if (j.is_null())
        return std::nullopt;
    require_keys(j, {"l1", "l2", "l3"}, "category");
    return TaxonomyPath{j.at("l1").get<std::string>(), j.at("l2").get<std::string>(), j.at("l3").get<std::string>()};
}

std::string not_mentioned(Lang lang) { return lang == Lang::zh ? "未提及" : "Not mentioned"; }

} // namespace

// ---------------------------------------------------------------------------
// Taxonomy

Taxonomy::Taxonomy(std::vector<TaxonomyLeaf> leaves) : leaves_(std::move(leaves)) {
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
        const auto &p = leaves_[i].path;
        if (p.l1.empty() || p.l2.empty() || p.l3.empty())
            throw ValidationError(kModule, "taxonomy leaf with empty level: " + path_string(p), path_string(p));
        if (!by_leaf_.emplace(p.l3, i).second)
            throw ValidationError(kModule, "duplicate taxonomy leaf '" + p.l3 + "'", p.l3);
    }
}

std::vector<std::string> Taxonomy::groups() const {
    std::vector<std::string> out;
    for (const auto &leaf : leaves_)
        if (std::find(out.begin(), out.end(), leaf.path.l1) == out.end())
            out.push_back(leaf.path.l1);
    return out;
}

std::vector<std::string> Taxonomy::subgroups(const std::string &group) const {
    std::vector<std::string> out;
    for (const auto &leaf : leaves_)
        if (leaf.path.l1 == group && std::find(out.begin(), out.end(), leaf.path.l2) == out.end())
            out.push_back(leaf.path.l2);
    return out;
}

const TaxonomyLeaf *Taxonomy::find_leaf(const std::string &leaf_name) const {
    auto it = by_leaf_.find(leaf_name);
    return it == by_leaf_.end() ? nullptr : &leaves_[it->second];
}

bool Taxonomy::contains(const TaxonomyPath &path) const {
    const auto *leaf = find_leaf(path.l3);
    return leaf && leaf->path == path;
}

Taxonomy parse_taxonomy(std::istream &in, const std::string &source_name, std::optional<std::size_t> expected_leaves) {
    std::vector<TaxonomyLeaf> leaves;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (trim(line).empty() || line.front() == '#')
            continue;
        auto cols = split(line, '\t');
        for (auto &c : cols)
            c = trim(c);
        if (lineno == 1 && cols.front() == "l1")
            continue;
        const std::string where = source_name + ":" + std::to_string(lineno);
        // drop trailing empty columns so a short path is reported as such
        std::size_t path_cols = std::min<std::size_t>(cols.size(), 3);
        while (path_cols > 0 && cols[path_cols - 1].empty())
            --path_cols;
        if (path_cols != 3) {
            std::string shown;
            for (std::size_t i = 0; i < path_cols; ++i)
                shown += (i ? " > " : "") + cols[i];
            throw ValidationError(kModule,
                                  where + ": taxonomy path '" + shown + "' has depth " + std::to_string(path_cols) +
                                      ", expected 3",
                                  shown);
        }
        if (cols.size() > 5)
            throw ValidationError(kModule, where + ": too many columns", cols[2]);
        TaxonomyLeaf leaf;
        leaf.path = {cols[0], cols[1], cols[2]};
        const std::string high = cols.size() > 3 ? cols[3] : "";
        const std::string middle = cols.size() > 4 ? cols[4] : "";
        if (high.empty() != middle.empty())
            throw ValidationError(kModule, where + ": give both counts or neither", cols[2]);
        if (!high.empty())
            leaf.counts = LeafCounts{parse_count(high, where), parse_count(middle, where)};
        leaves.push_back(std::move(leaf));
    }
    Taxonomy taxonomy(std::move(leaves));
    if (expected_leaves && taxonomy.leaves().size() != *expected_leaves) {
        std::string last = taxonomy.leaves().empty() ? std::string("<none>") : taxonomy.leaves().back().path.l3;
        throw ValidationError(kModule,
                              source_name + ": expected " + std::to_string(*expected_leaves) + " leaves, found " +
                                  std::to_string(taxonomy.leaves().size()) + " (last leaf '" + last + "')",
                              last);
    }
    return taxonomy;
}

Taxonomy load_taxonomy(const std::string &path, std::optional<std::size_t> expected_leaves) {
    std::ifstream in(path);
    if (!in)
        throw DataError(kModule, "cannot read taxonomy file " + path);
    return parse_taxonomy(in, path, expected_leaves);
}

// ---------------------------------------------------------------------------
// Enums

std::string to_string(Quality q) {
    switch (q) {
    case Quality::high:
        return "high";
    case Quality::middle:
        return "middle";
    case Quality::invalid:
        return "invalid";
    }
    return "invalid";
}

Quality parse_quality(std::string_view text) {
    if (text == "high")
        return Quality::high;
    if (text == "middle")
        return Quality::middle;
    if (text == "invalid")
        return Quality::invalid;
    throw ValidationError(kModule, "unknown quality '" + std::string(text) + "'", "quality");
}

std::string to_string(PipelineStage s) {
    switch (s) {
    case PipelineStage::extracted:
        return "extracted";
    case PipelineStage::llm_filtered:
        return "llm_filtered";
    case PipelineStage::human_filtered:
        return "human_filtered";
    case PipelineStage::finalized:
        return "finalized";
    }
    return "extracted";
}

PipelineStage parse_stage(std::string_view text) {
    if (text == "extracted")
        return PipelineStage::extracted;
    if (text == "llm_filtered")
        return PipelineStage::llm_filtered;
    if (text == "human_filtered")
        return PipelineStage::human_filtered;
    if (text == "finalized")
        return PipelineStage::finalized;
    throw ValidationError(kModule, "unknown pipeline stage '" + std::string(text) + "'", "pipeline_stage");
}

std::string to_string(SourceFormat f) { return f == SourceFormat::qa ? "qa" : "md"; }

SourceFormat parse_format(std::string_view text) {
    if (text == "qa")
        return SourceFormat::qa;
    if (text == "md")
        return SourceFormat::md;
    throw ValidationError(kModule, "unknown source format '" + std::string(text) + "'", "format");
}

std::string to_string(Resolver r) { return r == Resolver::agreement ? "agreement" : "third_party"; }

Resolver parse_resolver(std::string_view text) {
    if (text == "agreement")
        return Resolver::agreement;
    if (text == "third_party")
        return Resolver::third_party;
    throw ValidationError(kModule, "unknown resolver '" + std::string(text) + "'", "resolver");
}

// ---------------------------------------------------------------------------
// Cards

void validate_card(const RoleCard &card, const Taxonomy *taxonomy) {
    if (card.id.empty())
        throw ValidationError(kModule, "card without id", "id");
    if (card.pipeline_stage != PipelineStage::extracted && trim(card.problem).empty())
        throw ValidationError(kModule, "card " + card.id + " has an empty problem", "problem");
    if (card.quality == Quality::high || card.quality == Quality::middle) {
        if (!card.category)
            throw ValidationError(kModule, "card " + card.id + " is " + to_string(*card.quality) + " but has no category",
                                  "category");
        if (taxonomy && !taxonomy->contains(*card.category))
            throw ValidationError(kModule,
                                  "card " + card.id + " category '" + path_string(*card.category) +
                                      "' is not in the taxonomy",
                                  "category");
    }
    if (card.pipeline_stage == PipelineStage::finalized) {
        if (!card.quality)
            throw ValidationError(kModule, "finalized card " + card.id + " has no quality", "quality");
        if (*card.quality == Quality::invalid)
            throw ValidationError(kModule, "invalid card " + card.id + " cannot be finalized", "quality");
    }
}

json to_json(const RoleCard &card) {
    return {{"id", card.id},
            {"lang", to_string(card.lang)},
            {"age", card.age},
            {"gender", card.gender},
            {"occupation", card.occupation},
            {"problem", card.problem},
            {"quality", card.quality ? json(to_string(*card.quality)) : json(nullptr)},
            {"category", path_json(card.category)},
            {"source", {{"dataset", card.source.dataset}, {"record_id", card.source.record_id}}},
            {"pipeline_stage", to_string(card.pipeline_stage)}};
}

RoleCard card_from_json(const json &j) {
    require_keys(j, {"id", "lang", "age", "gender", "occupation", "problem", "quality", "category", "source",
                     "pipeline_stage"},
                 "role card");
    try {
        RoleCard c;
        c.id = j.at("id").get<std::string>();
        c.lang = parse_lang(j.at("lang").get<std::string>());
        c.age = j.at("age").get<std::string>();
        c.gender = j.at("gender").get<std::string>();
        c.occupation = j.at("occupation").get<std::string>();
        c.problem = j.at("problem").get<std::string>();
        if (!j.at("quality").is_null())
            c.quality = parse_quality(j.at("quality").get<std::string>());
        c.category = path_from_json(j.at("category"));
        const auto &src = j.at("source");
        require_keys(src, {"dataset", "record_id"}, "source");
        c.source = {src.at("dataset").get<std::string>(), src.at("record_id").get<std::string>()};
        c.pipeline_stage = parse_stage(j.at("pipeline_stage").get<std::string>());
        return c;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("role card: ") + ex.what());
    }
}

std::string render_card(const RoleCard &card) {
    std::ostringstream out;
    if (card.lang == Lang::zh) {
        out << "年龄：" << card.age << "\n性别：" << card.gender << "\n职业：" << card.occupation << "\n问题："
            << card.problem;
    } else {
        out << "Age: " << card.age << "\nGender: " << card.gender << "\nOccupation: " << card.occupation
            << "\nProblem: " << card.problem;
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Source records

void validate_source_record(const SourceRecord &record) {
    const auto &b = record.body;
    const std::string where = record.dataset + "[" + std::to_string(record.index) + "]";
    if (!b.is_object())
        throw ValidationError(kModule, where + ": record must be an object");
    if (record.format == SourceFormat::qa) {
        if (!b.contains("question") || !b.at("question").is_string() || b.at("question").get<std::string>().empty())
            throw ValidationError(kModule, where + ": QA record needs a nonempty 'question'", "question");
        if (b.contains("answer") && !b.at("answer").is_string())
            throw ValidationError(kModule, where + ": 'answer' must be text", "answer");
    } else {
        if (!b.contains("dialogue") || !b.at("dialogue").is_array() || b.at("dialogue").empty())
            throw ValidationError(kModule, where + ": MD record needs a nonempty 'dialogue' array", "dialogue");
        for (const auto &turn : b.at("dialogue")) {
            if (!turn.is_object() || !turn.contains("speaker") || !turn.contains("text") ||
                !turn.at("speaker").is_string() || !turn.at("text").is_string())
                throw ValidationError(kModule, where + ": dialogue turns need 'speaker' and 'text'", "dialogue");
        }
    }
}

std::vector<SourceRecord> load_source_records(const std::string &path, const std::string &dataset, Lang lang,
                                              SourceFormat format) {
    std::ifstream in(path);
    if (!in)
        throw DataError(kModule, "cannot read source file " + path);
    std::vector<SourceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        SourceRecord r;
        r.dataset = dataset;
        r.lang = lang;
        r.format = format;
        r.index = out.size();
        try {
            r.body = json::parse(line);
        } catch (const json::exception &ex) {
            throw DataError(kModule, path + ":" + std::to_string(lineno) + ": " + ex.what(), lineno);
        }
        validate_source_record(r);
        out.push_back(std::move(r));
    }
    return out;
}

std::string card_id_for(const std::string &dataset, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu", index);
    return dataset + "-" + buf;
}

std::string extraction_prompt(const SourceRecord &record) {
    std::ostringstream out;
    const bool zh = record.lang == Lang::zh;
    if (record.format == SourceFormat::qa) {
        if (zh) {
            out << "下面是一位求助者在心理咨询平台上的提问及回复。请根据内容概括求助者的角色卡。\n\n"
                << "提问：" << record.body.at("question").get<std::string>() << "\n";
            if (record.body.contains("answer"))
                out << "回复：" << record.body.at("answer").get<std::string>() << "\n";
        } else {
            out << "Below is a help-seeking post and the reply it received. Summarize the person who wrote the "
                   "post as a role card.\n\n"
                << "Post: " << record.body.at("question").get<std::string>() << "\n";
            if (record.body.contains("answer"))
                out << "Reply: " << record.body.at("answer").get<std::string>() << "\n";
        }
    } else {
        if (zh)
            out << "下面是一段求助者与支持者之间的多轮对话。请根据对话概括求助者的角色卡。\n\n";
        else
            out << "Below is a multi-turn conversation between a help seeker and a supporter. Summarize the help "
                   "seeker as a role card.\n\n";
        for (const auto &turn : record.body.at("dialogue"))
            out << turn.at("speaker").get<std::string>() << ": " << turn.at("text").get<std::string>() << "\n";
    }
    if (zh)
        out << "\n请严格按以下四行格式输出，未提及的信息写“未提及”。问题一栏需写明具体事件、起因和结果：\n"
               "年龄：\n性别：\n职业：\n问题：";
    else
        out << "\nAnswer with exactly these four labeled lines, writing \"Not mentioned\" for anything not stated. "
               "The problem line should name the concrete event, its cause and its consequences:\n"
               "Age:\nGender:\nOccupation:\nProblem:";
    return out.str();
}

std::string filter_prompt(const RoleCard &card) {
    if (card.lang == Lang::zh)
        return "判断下面的角色卡是否描述了引发情绪的具体事件。如果只有情绪或想法而没有任何事件，"
               "第一行回答“删除”，否则第一行回答“保留”。\n\n" +
               render_card(card);
    return "Decide whether the role card below describes at least one concrete event behind the person's "
           "emotions. If it only contains emotions or thoughts with no associated event, answer DROP on the first "
           "line; otherwise answer KEEP.\n\n" +
           render_card(card);
}

namespace {

struct Label {
    std::string text;
    int field; // 0 age, 1 gender, 2 occupation, 3 problem
    bool ascii;
};

const std::vector<Label> &labels() {
    static const std::vector<Label> all = {
        {"age", 0, true},        {"gender", 1, true}, {"sex", 1, true},  {"occupation", 2, true},
        {"job", 2, true},        {"problem", 3, true}, {"年龄", 0, false}, {"性别", 1, false},
        {"职业", 2, false},      {"问题", 3, false},
    };
    return all;
}

// Length of ":" / "：" (with leading spaces) at pos, or 0.
std::size_t colon_at(std::string_view text, std::size_t pos) {
    std::size_t p = pos;
    while (p < text.size() && (text[p] == ' ' || text[p] == '\t'))
        ++p;
    if (p < text.size() && text[p] == ':')
        return p + 1 - pos;
    if (text.substr(p, 3) == "\xEF\xBC\x9A")
        return p + 3 - pos;
    return 0;
}

bool label_boundary(std::string_view text, std::size_t pos) {
    if (pos == 0)
        return true;
    char prev = text[pos - 1];
    return prev == ' ' || prev == '\t' || prev == '\n' || prev == '\r' || prev == '-' || prev == '*' ||
           prev == '|' || static_cast<unsigned char>(prev) >= 0x80;
}

} // namespace

std::optional<ParsedFields> parse_extractor_output(std::string_view text) {
    struct Hit {
        std::size_t start;
        std::size_t value_start;
        int field;
    };
    std::vector<Hit> hits;
    const std::string lower = to_lower_ascii(text);
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        for (const auto &label : labels()) {
            if (lower.compare(pos, label.text.size(), label.text) != 0)
                continue;
            if (label.ascii && !label_boundary(text, pos))
                continue;
            auto colon = colon_at(text, pos + label.text.size());
            if (colon == 0)
                continue;
            hits.push_back({pos, pos + label.text.size() + colon, label.field});
            break;
        }
    }
    std::optional<std::string> values[4];
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const auto end = i + 1 < hits.size() ? hits[i + 1].start : text.size();
        if (values[hits[i].field])
            continue;
        auto value = trim(text.substr(hits[i].value_start, end - hits[i].value_start));
        while (!value.empty() && value.back() == '*')
            value.pop_back();
        values[hits[i].field] = trim(value);
    }
    if (!values[3] || values[3]->empty())
        return std::nullopt;
    return ParsedFields{values[0].value_or(""), values[1].value_or(""), values[2].value_or(""), *values[3]};
}

json to_json(const LogRecord &r) { return {{"card_id", r.card_id}, {"verdict", r.verdict}, {"raw", r.raw}}; }

LogRecord log_record_from_json(const json &j) {
    require_keys(j, {"card_id", "verdict", "raw"}, "log record");
    return {j.at("card_id").get<std::string>(), j.at("verdict").get<std::string>(), j.at("raw").get<std::string>()};
}

// ---------------------------------------------------------------------------
// Response sources

LiveSource::LiveSource(std::shared_ptr<gateway::Endpoint> endpoint, gateway::RequestLog *log, Clock clock)
    : endpoint_(std::move(endpoint)), log_(log), clock_(std::move(clock)) {}

gateway::ChatResponse LiveSource::respond(const std::string &, const gateway::ChatRequest &request) {
    return gateway::complete(*endpoint_, request, log_, clock_);
}

ReplaySource::ReplaySource(std::span<const LogRecord> records) {
    for (const auto &r : records)
        raw_[r.card_id] = r.raw;
}

ReplaySource ReplaySource::from_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError(kModule, "cannot read decisions file " + path);
    std::vector<LogRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        try {
            auto j = json::parse(line);
            if (j.contains("schema"))
                continue; // header record
            records.push_back(log_record_from_json(j));
        } catch (const json::exception &ex) {
            throw DataError(kModule, path + ":" + std::to_string(lineno) + ": " + ex.what(), lineno);
        } catch (const ValidationError &ex) {
            throw DataError(kModule, path + ":" + std::to_string(lineno) + ": " + ex.what(), lineno);
        }
    }
    return ReplaySource(records);
}

gateway::ChatResponse ReplaySource::respond(const std::string &key, const gateway::ChatRequest &) {
    gateway::ChatResponse r;
    r.attempts = 1;
    auto it = raw_.find(key);
    if (it == raw_.end()) {
        r.finish_reason = gateway::FinishReason::error;
        r.error = "no recorded response for " + key;
        return r;
    }
    r.content = it->second;
    return r;
}

// ---------------------------------------------------------------------------
// Extraction

ExtractionResult extract_cards(std::span<const SourceRecord> records, ResponseSource &extractor, RunOptions options) {
    struct Slot {
        std::optional<RoleCard> card;
        LogRecord decision;
    };
    std::vector<Slot> slots(records.size());
    for (const auto &r : records)
        validate_source_record(r);

    parallel_for(records.size(), options.parallelism, [&](std::size_t i) {
        const auto &record = records[i];
        const auto id = card_id_for(record.dataset, record.index);
        gateway::ChatRequest request;
        request.temperature = options.temperature;
        request.messages.push_back({gateway::Role::user, extraction_prompt(record)});
        auto response = extractor.respond(id, request);
        auto &slot = slots[i];
        if (response.finish_reason == gateway::FinishReason::error) {
            slot.decision = {id, "error", response.error};
            return;
        }
        auto fields = parse_extractor_output(response.content);
        if (!fields) {
            slot.decision = {id, "reject", response.content};
            return;
        }
        RoleCard card;
        card.id = id;
        card.lang = record.lang;
        card.age = fields->age.empty() ? not_mentioned(record.lang) : fields->age;
        card.gender = fields->gender.empty() ? not_mentioned(record.lang) : fields->gender;
        card.occupation = fields->occupation.empty() ? not_mentioned(record.lang) : fields->occupation;
        card.problem = fields->problem;
        card.source = {record.dataset, std::to_string(record.index)};
        card.pipeline_stage = PipelineStage::extracted;
        slot.card = std::move(card);
        slot.decision = {id, "ok", response.content};
    });

    ExtractionResult result;
    for (auto &slot : slots) {
        if (slot.card)
            result.cards.push_back(std::move(*slot.card));
        else
            result.rejects.push_back(slot.decision);
        result.decisions.push_back(std::move(slot.decision));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Filter

Verdict parse_verdict(std::string_view text) {
    std::string first;
    for (const auto &line : split(text, '\n')) {
        auto t = trim(line);
        if (!t.empty()) {
            first = t;
            break;
        }
    }
    auto v = to_lower_ascii(first);
    for (const std::string prefix : {"verdict:", "verdict：", "结论：", "结论:"}) {
        if (v.rfind(prefix, 0) == 0) {
            v = trim(v.substr(prefix.size()));
            break;
        }
    }
    // cut an optional reason after ':' / '：' / ' - '
    for (const std::string sep : {":", "：", " - ", "，", ","}) {
        auto pos = v.find(sep);
        if (pos != std::string::npos)
            v = trim(v.substr(0, pos));
    }
    while (!v.empty() && (v.back() == '.' || v.back() == '!'))
        v.pop_back();
    if (v.size() >= 3 && v.compare(v.size() - 3, 3, "。") == 0)
        v.erase(v.size() - 3);

    static const std::set<std::string> keep = {"keep", "event", "has event", "yes", "valid", "accept", "保留", "有事件"};
    static const std::set<std::string> drop = {"drop", "no event", "no", "invalid", "reject", "删除", "无事件"};
    if (keep.count(v))
        return Verdict::keep;
    if (drop.count(v))
        return Verdict::drop;
    return Verdict::unparseable;
}

FilterResult llm_filter(std::span<const RoleCard> cards, ResponseSource &judge, RunOptions options) {
    for (const auto &c : cards)
        if (c.pipeline_stage != PipelineStage::extracted)
            throw ValidationError(kModule, "llm_filter expects extracted cards; " + c.id + " is " +
                                               to_string(c.pipeline_stage),
                                  "pipeline_stage");

    struct Slot {
        Verdict verdict = Verdict::unparseable;
        std::string text;
        bool failed = false;
    };
    std::vector<Slot> slots(cards.size());
    parallel_for(cards.size(), options.parallelism, [&](std::size_t i) {
        gateway::ChatRequest request;
        request.temperature = options.temperature;
        request.messages.push_back({gateway::Role::user, filter_prompt(cards[i])});
        auto response = judge.respond(cards[i].id, request);
        auto &slot = slots[i];
        if (response.finish_reason == gateway::FinishReason::error) {
            slot.failed = true;
            slot.text = response.error;
            return;
        }
        slot.text = response.content;
        slot.verdict = parse_verdict(response.content);
    });

    FilterResult result;
    for (std::size_t i = 0; i < cards.size(); ++i) {
        const auto &slot = slots[i];
        if (slot.failed) {
            result.needs_human.push_back({cards[i], slot.text});
            result.decisions.push_back({cards[i].id, "error", slot.text});
            continue;
        }
        switch (slot.verdict) {
        case Verdict::keep: {
            auto kept = cards[i];
            kept.pipeline_stage = PipelineStage::llm_filtered;
            result.kept.push_back(std::move(kept));
            result.decisions.push_back({cards[i].id, "keep", slot.text});
            break;
        }
        case Verdict::drop:
            result.dropped.push_back({cards[i], slot.text});
            result.decisions.push_back({cards[i].id, "drop", slot.text});
            break;
        case Verdict::unparseable:
            result.needs_human.push_back({cards[i], slot.text});
            result.decisions.push_back({cards[i].id, "needs_human", slot.text});
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Corrections

json to_json(const CorrectionDecision &d) {
    json labels = json::array();
    for (const auto &l : d.first_labels)
        labels.push_back(
            {{"annotator_id", l.annotator_id}, {"quality", to_string(l.quality)}, {"category", path_json(l.category)}});
    return {{"card_id", d.card_id},
            {"first_labels", std::move(labels)},
            {"resolution", {{"quality", to_string(d.resolution.quality)}, {"category", path_json(d.resolution.category)}}},
            {"resolver", to_string(d.resolver)}};
}

CorrectionDecision decision_from_json(const json &j) {
    require_keys(j, {"card_id", "first_labels", "resolution", "resolver"}, "correction decision");
    try {
        CorrectionDecision d;
        d.card_id = j.at("card_id").get<std::string>();
        for (const auto &l : j.at("first_labels")) {
            require_keys(l, {"annotator_id", "quality", "category"}, "first label");
            d.first_labels.push_back({l.at("annotator_id").get<std::string>(),
                                      parse_quality(l.at("quality").get<std::string>()),
                                      path_from_json(l.at("category"))});
        }
        const auto &r = j.at("resolution");
        require_keys(r, {"quality", "category"}, "resolution");
        d.resolution = {parse_quality(r.at("quality").get<std::string>()), path_from_json(r.at("category"))};
        d.resolver = parse_resolver(j.at("resolver").get<std::string>());
        return d;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("correction decision: ") + ex.what());
    }
}

namespace {

bool any_invalid(std::span<const FirstLabel> labels) {
    return std::any_of(labels.begin(), labels.end(), [](const auto &l) { return l.quality == Quality::invalid; });
}

} // namespace

bool needs_third_party(std::span<const FirstLabel> labels) {
    if (labels.empty() || any_invalid(labels))
        return false;
    for (const auto &l : labels)
        if (l.quality != labels.front().quality || l.category != labels.front().category)
            return true;
    return false;
}

CorrectionDecision resolve_labels(std::string card_id, std::vector<FirstLabel> labels,
                                  std::optional<Resolution> third_party) {
    if (labels.empty())
        throw ValidationError(kModule, "card " + card_id + " has no first-round labels", "first_labels");
    CorrectionDecision d;
    d.card_id = std::move(card_id);
    if (any_invalid(labels)) {
        d.resolution = {Quality::invalid, std::nullopt};
        d.resolver = Resolver::agreement;
    } else if (!needs_third_party(labels)) {
        d.resolution = {labels.front().quality, labels.front().category};
        d.resolver = Resolver::agreement;
    } else {
        if (!third_party)
            throw ValidationError(kModule, "card " + d.card_id + " has conflicting labels and needs a third party",
                                  "resolution");
        d.resolution = *third_party;
        d.resolver = Resolver::third_party;
    }
    d.first_labels = std::move(labels);
    validate_decision(d);
    return d;
}

void validate_decision(const CorrectionDecision &d) {
    if (d.first_labels.empty())
        throw ValidationError(kModule, "decision for " + d.card_id + " has no first-round labels", "first_labels");
    if (any_invalid(d.first_labels)) {
        if (d.resolution.quality != Quality::invalid)
            throw ValidationError(kModule, "decision for " + d.card_id + ": a first-round label is invalid, so the "
                                           "card must be discarded",
                                  "resolution");
        return;
    }
    if (d.resolution.quality == Quality::invalid)
        return; // a corrector may still discard
    if (!d.resolution.category)
        throw ValidationError(kModule, "decision for " + d.card_id + " keeps the card without a category",
                              "resolution.category");
    if (needs_third_party(d.first_labels)) {
        if (d.resolver != Resolver::third_party)
            throw ValidationError(kModule, "decision for " + d.card_id + ": conflicting labels need resolver=third_party",
                                  "resolver");
    } else if (d.resolver == Resolver::agreement) {
        const auto &l = d.first_labels.front();
        if (d.resolution.quality != l.quality || d.resolution.category != l.category)
            throw ValidationError(kModule, "decision for " + d.card_id + ": agreement resolution differs from labels",
                                  "resolution");
    }
}

CorrectionOutcome apply_corrections(std::span<const RoleCard> cards, std::span<const CorrectionDecision> decisions,
                                    const Taxonomy &taxonomy) {
    std::map<std::string, const RoleCard *> by_id;
    for (const auto &c : cards) {
        if (c.pipeline_stage != PipelineStage::llm_filtered)
            throw ValidationError(kModule, "card " + c.id + " is " + to_string(c.pipeline_stage) +
                                               ", corrections need llm_filtered cards",
                                  "pipeline_stage");
        by_id.emplace(c.id, &c);
    }
    std::map<std::string, const CorrectionDecision *> by_card;
    for (const auto &d : decisions) {
        if (!by_id.count(d.card_id))
            throw DataError(kModule, "decision references unknown card " + d.card_id);
        if (!by_card.emplace(d.card_id, &d).second)
            throw DataError(kModule, "duplicate decision for card " + d.card_id);
        validate_decision(d);
    }

    CorrectionOutcome out;
    for (const auto &c : cards) {
        auto it = by_card.find(c.id);
        if (it == by_card.end()) {
            out.undecided.push_back(c.id);
            continue;
        }
        const auto &res = it->second->resolution;
        if (res.quality == Quality::invalid) {
            out.discarded.push_back(c.id);
            continue;
        }
        if (!taxonomy.contains(*res.category))
            throw ValidationError(kModule,
                                  "card " + c.id + " resolves to category '" + path_string(*res.category) +
                                      "' which is not in the taxonomy",
                                  res.category->l3);
        auto card = c;
        card.quality = res.quality;
        card.category = res.category;
        card.pipeline_stage = PipelineStage::finalized;
        out.finalized.push_back(std::move(card));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Accounting

bool StageCounts::monotone() const {
    return extracted >= llm_filtered && llm_filtered >= human_filtered && human_filtered == high + middle;
}

StageCounts StageAccounting::total() const {
    StageCounts t;
    for (const auto &[lang, c] : by_lang) {
        t.extracted += c.extracted;
        t.llm_filtered += c.llm_filtered;
        t.human_filtered += c.human_filtered;
        t.high += c.high;
        t.middle += c.middle;
    }
    return t;
}

void StageAccounting::validate() const {
    for (const auto &[lang, c] : by_lang)
        if (!c.monotone())
            throw ValidationError(kModule, "stage accounting for " + to_string(lang) + " is not monotone",
                                  to_string(lang));
}

StageAccounting tally_stages(std::span<const RoleCard> extracted, std::span<const RoleCard> llm_filtered,
                             std::span<const RoleCard> finalized) {
    StageAccounting acc;
    for (const auto &c : extracted)
        ++acc.by_lang[c.lang].extracted;
    for (const auto &c : llm_filtered)
        ++acc.by_lang[c.lang].llm_filtered;
    for (const auto &c : finalized) {
        auto &counts = acc.by_lang[c.lang];
        ++counts.human_filtered;
        if (c.quality == Quality::high)
            ++counts.high;
        else if (c.quality == Quality::middle)
            ++counts.middle;
    }
    return acc;
}

std::vector<RoleCard> select_eval_set(std::span<const RoleCard> cards, const SelectionPolicy &policy) {
    std::vector<RoleCard> out;
    for (const auto &c : cards) {
        if (c.pipeline_stage != PipelineStage::finalized)
            continue;
        if (policy.quality && c.quality != policy.quality)
            continue;
        if (policy.lang && c.lang != *policy.lang)
            continue;
        out.push_back(c);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.id < b.id; });
    return out;
}

} // namespace esceval::rolecards
