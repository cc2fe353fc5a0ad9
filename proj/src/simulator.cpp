#include "esceval/simulator.hpp"

#include "esceval/error.hpp"
#include "esceval/store.hpp"

#include <algorithm>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace esceval::sim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char *kModule = "simulator";

// GPT-style seeker templates. {card} and {dialogue} are substituted.
constexpr std::string_view kOpeningEn =
    "I want you to play as a troubled person communicating with an AI assistant. Here is your character card:\n{card}\n";
constexpr std::string_view kPlainRulesEn =
    "Please try to simulate real human-spoken conversation as much as possible, don't act like a machine, don't "
    "mention that you are an AI assistant, and show your troubles again and again in multiple conversations.";
constexpr std::string_view kStepsEn =
    "During the role-playing, you need to have multiple conversations with the AI assistant. The following are the "
    "steps for your multiple conversations: You need to gradually refine your problem multiple times and express "
    "your troubles in a spoken language, for example, a brief explanation in the first round own problems. Each "
    "round of dialogue can then have two references. One is to select an interesting question to ask in-depth based "
    "on the AI assistant's answer, and the other is to briefly elaborate on other issues that the character may be "
    "concerned about. You need to have about 5 conversations in total and be careful to finish telling your troubles "
    "in these 5 conversations.";
constexpr std::string_view kCotRulesEn =
    "Please use spoken language as much as possible, and do not express too much gratitude or approval to the AI "
    "assistant. If you need to express it, try to express it in the last round of dialogue. Do not let the AI "
    "assistant discover that you are a machine, and do not mention that you are an AI assistant.";
constexpr std::string_view kExampleEn = "Here is an example of a conversation you can refer to:\n{dialogue}\n";

constexpr std::string_view kOpeningZh = "我希望你扮演一个正在与AI助手交流的有烦恼的人。这是你的角色卡：\n{card}\n";
constexpr std::string_view kPlainRulesZh =
    "请尽可能模拟真实的人类口语对话，不要表现得像机器，不要提及你是AI助手，并在多轮对话中反复表达你的烦恼。";
constexpr std::string_view kStepsZh =
    "在角色扮演过程中，你需要与AI助手进行多轮对话。多轮对话的步骤如下：你需要多次逐步细化你的问题，并用口语表达你的烦恼，"
    "例如第一轮简要说明自己的问题。之后每一轮对话可以有两种参考：一是根据AI助手的回答选择一个感兴趣的问题深入追问，"
    "二是简要阐述角色可能关心的其他问题。你总共需要进行大约5轮对话，并注意在这5轮对话中讲完你的烦恼。";
constexpr std::string_view kCotRulesZh =
    "请尽量使用口语，不要对AI助手表达过多的感谢或认同。如果需要表达，尽量放在最后一轮对话中。"
    "不要让AI助手发现你是机器，也不要提及你是AI助手。";
constexpr std::string_view kExampleZh = "下面是一段可供参考的对话示例：\n{dialogue}\n";

// NPC-style parameter block.
constexpr std::string_view kNpcPlainEn =
    "1. Please strive to simulate authentic human conversational dialogue, avoiding sounding like a machine, and "
    "refrain from mentioning that you are an AI assistant. 2. Pay attention to expressing your frustrations gradually "
    "throughout multiple exchanges in a colloquial manner. 3. Make sure to use English throughout the entire "
    "conversation";
constexpr std::string_view kNpcCotEn =
    "1. Please endeavor to imagine the problems encountered by the character, and feel free to provide additional "
    "details where necessary.\n2. You are engaging in a conversation with an AI assistant; do not let the AI "
    "assistant realize that you are an artificial intelligence.\n3. You should gradually refine the character's "
    "problems over multiple exchanges, expressing the character's frustrations in a colloquial manner. For example, "
    "in the first round, briefly describe the character's issue, and in subsequent rounds, you can choose between two "
    "types of references. One is to delve deeper into an interesting question based on the AI assistant's response, "
    "and the other is to briefly elaborate on other concerns the character may have.\n4. The character should engage "
    "in approximately five rounds of dialogue in total, ensuring that the character's frustrations are conveyed "
    "throughout these five exchanges. Please utilize colloquial expressions as much as possible, presenting yourself "
    "as a troubled individual.\n5. Avoid frequently thanking the AI assistant during the conversation. If you wish to "
    "express gratitude, do so only in the final round.\n6. Make sure to use English throughout the entire "
    "conversation.";
constexpr std::string_view kNpcPlainZh =
    "1. 请尽量模拟真实的人类对话，避免听起来像机器，不要提及你是AI助手。2. 注意在多轮交流中用口语逐步表达你的烦恼。"
    "3. 请全程使用中文。";
constexpr std::string_view kNpcCotZh =
    "1. 请尽力设想角色遇到的问题，必要时可以补充细节。\n2. 你正在与AI助手对话，不要让AI助手意识到你是人工智能。\n"
    "3. 你应在多轮交流中逐步细化角色的问题，用口语表达角色的烦恼。例如第一轮简要描述角色的问题，之后每轮可以在两种参考中选择："
    "一是根据AI助手的回答深入追问一个感兴趣的问题，二是简要阐述角色可能关心的其他问题。\n"
    "4. 角色总共进行大约五轮对话，确保在这五轮交流中表达完角色的烦恼。请尽量使用口语，表现为一个有烦恼的人。\n"
    "5. 对话中避免频繁感谢AI助手，如需表达感谢，只在最后一轮进行。\n6. 请全程使用中文。";

std::string substitute(std::string_view tmpl, std::string_view key, std::string_view value) {
    std::string out(tmpl);
    auto pos = out.find(key);
    if (pos != std::string::npos)
        out.replace(pos, key.size(), value);
    return out;
}

bool is_icl(VariantKind k) { return k == VariantKind::icl || k == VariantKind::cot_icl; }
bool is_cot(VariantKind k) { return k == VariantKind::cot || k == VariantKind::cot_icl; }

} // namespace

std::string to_string(VariantKind kind) {
    switch (kind) {
    case VariantKind::zero_shot:
        return "zero_shot";
    case VariantKind::cot:
        return "cot";
    case VariantKind::icl:
        return "icl";
    case VariantKind::cot_icl:
        return "cot_icl";
    }
    return "zero_shot";
}

VariantKind parse_variant(std::string_view text) {
    if (text == "zero_shot")
        return VariantKind::zero_shot;
    if (text == "cot")
        return VariantKind::cot;
    if (text == "icl")
        return VariantKind::icl;
    if (text == "cot_icl")
        return VariantKind::cot_icl;
    throw ValidationError(kModule, "unknown prompt variant '" + std::string(text) + "'", "prompt_variant");
}

std::string build_seeker_prompt(const rolecards::RoleCard &card, const SeekerPromptVariant &variant,
                                PromptStyle style) {
    if (is_icl(variant.kind) && (!variant.example_dialogue || trim(*variant.example_dialogue).empty()))
        throw ValidationError(kModule, to_string(variant.kind) + " prompt needs an example dialogue",
                              "example_dialogue");
    if (trim(card.problem).empty())
        throw ValidationError(kModule, "card " + card.id + " has no problem text", "problem");

    const bool zh = card.lang == Lang::zh;
    const std::string body = rolecards::render_card(card);

    if (style == PromptStyle::npc) {
        std::ostringstream out;
        out << "basic_info: " << body << "\n";
        out << "reply_restrict: " << (is_cot(variant.kind) ? (zh ? kNpcCotZh : kNpcCotEn) : (zh ? kNpcPlainZh : kNpcPlainEn))
            << "\n";
        out << "opener: " << (zh ? std::string_view("我有一些烦恼想分享。") : kDefaultOpener) << "\n";
        out << "dialogue_sample: " << (is_icl(variant.kind) ? *variant.example_dialogue : std::string("None."));
        return out.str();
    }

    std::string out = substitute(zh ? kOpeningZh : kOpeningEn, "{card}", body);
    if (is_cot(variant.kind))
        out += std::string(zh ? kStepsZh : kStepsEn) + "\n";
    if (is_icl(variant.kind))
        out += substitute(zh ? kExampleZh : kExampleEn, "{dialogue}", *variant.example_dialogue);
    out += is_cot(variant.kind) ? (zh ? kCotRulesZh : kCotRulesEn) : (zh ? kPlainRulesZh : kPlainRulesEn);
    return out;
}

// ---------------------------------------------------------------------------
// Refusals

RefusalPatterns RefusalPatterns::load(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw DataError(kModule, "cannot read refusal pattern file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

RefusalPatterns RefusalPatterns::parse(std::string_view text) {
    RefusalPatterns p;
    std::size_t lineno = 0;
    for (const auto &raw : split(text, '\n')) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ValidationError(kModule, "refusal pattern line " + std::to_string(lineno) +
                                               " needs '<lang>\\t<phrase>'",
                                  "line " + std::to_string(lineno));
        auto lang = trim(line.substr(0, tab));
        auto phrase = trim(line.substr(tab + 1));
        if (phrase.empty())
            continue;
        p.add(lang == "*" ? std::nullopt : std::optional<Lang>(parse_lang(lang)), phrase);
    }
    return p;
}

void RefusalPatterns::add(std::optional<Lang> lang, std::string phrase) {
    patterns_.emplace_back(lang, to_lower_ascii(phrase));
}

bool RefusalPatterns::matches(std::string_view text, Lang lang) const {
    if (text.empty())
        return false;
    const auto lowered = to_lower_ascii(text);
    for (const auto &[plang, phrase] : patterns_) {
        if (plang && *plang != lang)
            continue;
        if (lowered.find(phrase) != std::string::npos)
            return true;
    }
    return false;
}

bool detect_refusal(std::string_view text, Lang lang, const RefusalPatterns &patterns) {
    return patterns.matches(text, lang);
}

// ---------------------------------------------------------------------------
// Transcript serialization

std::string to_string(Speaker s) { return s == Speaker::seeker ? "seeker" : "supporter"; }

Speaker parse_speaker(std::string_view text) {
    if (text == "seeker")
        return Speaker::seeker;
    if (text == "supporter")
        return Speaker::supporter;
    throw ValidationError(kModule, "unknown speaker '" + std::string(text) + "'", "speaker");
}

std::string to_string(TranscriptStatus s) { return s == TranscriptStatus::complete ? "complete" : "aborted"; }

TranscriptStatus parse_status(std::string_view text) {
    if (text == "complete")
        return TranscriptStatus::complete;
    if (text == "aborted")
        return TranscriptStatus::aborted;
    throw ValidationError(kModule, "unknown transcript status '" + std::string(text) + "'", "status");
}

std::string transcript_id(const std::string &card_id, const std::string &target_alias) {
    return card_id + "@" + target_alias;
}

json to_json(const Transcript &t) {
    json turns = json::array();
    for (const auto &turn : t.turns)
        turns.push_back({{"speaker", to_string(turn.speaker)}, {"text", turn.text}, {"timestamp", turn.timestamp}});
    return {{"id", t.id},
            {"card_id", t.card_id},
            {"seeker_alias", t.seeker_alias},
            {"target_alias", t.target_alias},
            {"prompt_variant", to_string(t.prompt_variant)},
            {"temperature", t.temperature},
            {"turns", std::move(turns)},
            {"refusal_flags", t.refusal_flags},
            {"status", to_string(t.status)},
            {"error", t.error}};
}

Transcript transcript_from_json(const json &j) {
    static const std::set<std::string> allowed = {"id",    "card_id",       "seeker_alias", "target_alias",
                                                  "prompt_variant", "temperature", "turns", "refusal_flags",
                                                  "status", "error"};
    if (!j.is_object())
        throw ValidationError(kModule, "transcript must be an object");
    for (const auto &[k, v] : j.items())
        if (!allowed.count(k))
            throw ValidationError(kModule, "transcript: unknown field '" + k + "'", k);
    try {
        Transcript t;
        t.id = j.at("id").get<std::string>();
        t.card_id = j.at("card_id").get<std::string>();
        t.seeker_alias = j.at("seeker_alias").get<std::string>();
        t.target_alias = j.at("target_alias").get<std::string>();
        t.prompt_variant = parse_variant(j.at("prompt_variant").get<std::string>());
        t.temperature = j.at("temperature").get<double>();
        for (const auto &turn : j.at("turns"))
            t.turns.push_back({parse_speaker(turn.at("speaker").get<std::string>()), turn.at("text").get<std::string>(),
                               turn.at("timestamp").get<std::string>()});
        t.refusal_flags = j.at("refusal_flags").get<std::vector<std::size_t>>();
        t.status = parse_status(j.at("status").get<std::string>());
        t.error = j.value("error", "");
        return t;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("transcript: ") + ex.what());
    }
}

void validate_transcript(const Transcript &t, std::size_t exchanges) {
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
        const auto expected = i % 2 == 0 ? Speaker::seeker : Speaker::supporter;
        if (t.turns[i].speaker != expected)
            throw ValidationError(kModule, "transcript " + t.id + ": turn " + std::to_string(i) + " breaks alternation",
                                  "turns");
    }
    for (auto flag : t.refusal_flags)
        if (flag >= t.turns.size())
            throw ValidationError(kModule, "transcript " + t.id + ": refusal flag " + std::to_string(flag) +
                                               " points past the last turn",
                                  "refusal_flags");
    if (t.status == TranscriptStatus::complete && t.turns.size() != 2 * exchanges)
        throw ValidationError(kModule, "transcript " + t.id + ": complete transcript has " +
                                           std::to_string(t.turns.size()) + " turns, expected " +
                                           std::to_string(2 * exchanges),
                              "turns");
}

// ---------------------------------------------------------------------------
// Dialogue

namespace {

gateway::ChatRequest base_request(const gateway::Endpoint &endpoint, const DialogueOptions &options) {
    gateway::ChatRequest r;
    r.model_id = endpoint.config().model_id;
    r.temperature = options.temperature;
    r.max_turn_tokens = options.max_turn_tokens;
    r.timeout = options.timeout;
    return r;
}

} // namespace

Transcript run_dialogue(const rolecards::RoleCard &card, const SeekerConfig &seeker, const TargetConfig &target,
                        const DialogueOptions &options, const DialogueContext &context) {
    if (!seeker.endpoint || !target.endpoint)
        throw ValidationError(kModule, "seeker and target endpoints are required", "endpoint");
    if (options.turns == 0)
        throw ValidationError(kModule, "turns must be positive", "turns");

    const std::string system_prompt = build_seeker_prompt(card, seeker.variant, seeker.style);
    const Clock clock = context.clock ? context.clock : system_clock();

    Transcript t;
    t.card_id = card.id;
    t.seeker_alias = seeker.endpoint->alias();
    t.target_alias = target.endpoint->alias();
    t.id = transcript_id(card.id, t.target_alias);
    t.prompt_variant = seeker.variant.kind;
    t.temperature = options.temperature;

    auto record = [&](Speaker who, std::string text, bool provider_refusal) {
        const auto index = t.turns.size();
        const bool refused =
            provider_refusal || (context.refusals && detect_refusal(text, card.lang, *context.refusals));
        t.turns.push_back({who, std::move(text), format_utc(clock())});
        if (refused)
            t.refusal_flags.push_back(index);
    };
    auto failed = [](const gateway::ChatResponse &r) {
        return r.finish_reason == gateway::FinishReason::error || trim(r.content).empty();
    };
    auto failure_text = [](const gateway::ChatResponse &r) {
        return r.finish_reason == gateway::FinishReason::error ? r.error : std::string("empty response");
    };

    for (std::size_t exchange = 0; exchange < options.turns; ++exchange) {
        std::string seeker_text;
        bool seeker_refusal = false;
        if (exchange == 0 && seeker.fixed_opener) {
            seeker_text = *seeker.fixed_opener;
        } else {
            auto request = base_request(*seeker.endpoint, options);
            request.messages.push_back({gateway::Role::system, system_prompt});
            for (const auto &turn : t.turns)
                request.messages.push_back(
                    {turn.speaker == Speaker::seeker ? gateway::Role::assistant : gateway::Role::user, turn.text});
            auto reply = gateway::complete(*seeker.endpoint, request, context.log, clock);
            if (failed(reply)) {
                t.status = TranscriptStatus::aborted;
                t.error = "seeker endpoint error at exchange " + std::to_string(exchange + 1) + ": " +
                          failure_text(reply);
                return t;
            }
            seeker_text = std::move(reply.content);
            seeker_refusal = reply.finish_reason == gateway::FinishReason::refusal;
        }

        auto request = base_request(*target.endpoint, options);
        if (target.system_prompt)
            request.messages.push_back({gateway::Role::system, *target.system_prompt});
        for (const auto &turn : t.turns)
            request.messages.push_back(
                {turn.speaker == Speaker::seeker ? gateway::Role::user : gateway::Role::assistant, turn.text});
        request.messages.push_back({gateway::Role::user, seeker_text});
        auto reply = gateway::complete(*target.endpoint, request, context.log, clock);
        if (failed(reply)) {
            t.status = TranscriptStatus::aborted;
            t.error = "target endpoint error at exchange " + std::to_string(exchange + 1) + ": " +
                      failure_text(reply) + "; unanswered seeker message: " + seeker_text;
            return t;
        }
        record(Speaker::seeker, std::move(seeker_text), seeker_refusal);
        record(Speaker::supporter, std::move(reply.content), reply.finish_reason == gateway::FinishReason::refusal);
    }
    t.status = TranscriptStatus::complete;
    return t;
}

// ---------------------------------------------------------------------------
// Store

TranscriptStore::TranscriptStore(std::string root) : root_(std::move(root)) {
    const auto dir = fs::path(root_) / "transcripts";
    if (!fs::exists(dir))
        return;
    for (const auto &entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory())
            continue;
        for (const auto &t : load(entry.path().filename().string()))
            index_.emplace(t.target_alias, t.card_id);
    }
}

std::string TranscriptStore::path_for(const std::string &target_alias) const {
    if (target_alias.empty() || target_alias.find('/') != std::string::npos || target_alias == "." ||
        target_alias == "..")
        throw ValidationError(kModule, "target alias '" + target_alias + "' cannot be used as a directory name",
                              "target_alias");
    return (fs::path(root_) / "transcripts" / target_alias / "transcripts.jsonl").string();
}

bool TranscriptStore::contains(const std::string &card_id, const std::string &target_alias) const {
    std::lock_guard lock(mutex_);
    return index_.count({target_alias, card_id}) > 0;
}

void TranscriptStore::append(const Transcript &t) {
    std::lock_guard lock(mutex_);
    if (!index_.emplace(t.target_alias, t.card_id).second)
        throw DataError(kModule, "transcript for (" + t.card_id + ", " + t.target_alias + ") already stored");
    store::append_json(path_for(t.target_alias), {"transcript", 1}, to_json(t));
}

std::vector<Transcript> TranscriptStore::load(const std::string &target_alias) const {
    const auto path = path_for(target_alias);
    std::vector<Transcript> out;
    for (const auto &row : store::load_json(path, "transcript")) {
        try {
            out.push_back(transcript_from_json(row.value));
        } catch (const std::exception &ex) {
            store::fail_record(path, row.line, ex.what());
        }
    }
    return out;
}

std::vector<Transcript> TranscriptStore::load_all() const {
    std::vector<Transcript> out;
    const auto dir = fs::path(root_) / "transcripts";
    if (!fs::exists(dir))
        return out;
    std::vector<std::string> aliases;
    for (const auto &entry : fs::directory_iterator(dir))
        if (entry.is_directory())
            aliases.push_back(entry.path().filename().string());
    std::sort(aliases.begin(), aliases.end());
    for (const auto &a : aliases) {
        auto part = load(a);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batches

BatchReport run_batch(std::span<const rolecards::RoleCard> cards, const SeekerConfig &seeker,
                      std::span<const TargetConfig> targets, TranscriptStore &store, const BatchOptions &options,
                      const DialogueContext &context) {
    if (options.parallelism == 0)
        throw ValidationError(kModule, "parallelism must be positive", "parallelism");

    struct Pair {
        const rolecards::RoleCard *card;
        const TargetConfig *target;
    };
    std::vector<Pair> all;
    for (const auto &target : targets)
        for (const auto &card : cards)
            all.push_back({&card, &target});
    std::stable_sort(all.begin(), all.end(), [](const Pair &a, const Pair &b) {
        const auto &ta = a.target->endpoint->alias();
        const auto &tb = b.target->endpoint->alias();
        return ta != tb ? ta < tb : a.card->id < b.card->id;
    });

    BatchReport report;
    std::vector<std::size_t> pending; // indices into `all`
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (store.contains(all[i].card->id, all[i].target->endpoint->alias()))
            ++report.skipped;
        else
            pending.push_back(i);
    }
    if (options.max_new_dialogues && pending.size() > *options.max_new_dialogues)
        pending.resize(*options.max_new_dialogues);

    std::vector<std::optional<Transcript>> results(pending.size());
    std::mutex commit_mutex;
    std::size_t next_commit = 0;

    parallel_for(pending.size(), options.parallelism, [&](std::size_t k) {
        const auto &pair = all[pending[k]];
        Transcript t;
        try {
            t = run_dialogue(*pair.card, seeker, *pair.target, options.dialogue, context);
        } catch (const Error &ex) {
            t.card_id = pair.card->id;
            t.seeker_alias = seeker.endpoint ? seeker.endpoint->alias() : "";
            t.target_alias = pair.target->endpoint->alias();
            t.id = transcript_id(t.card_id, t.target_alias);
            t.prompt_variant = seeker.variant.kind;
            t.temperature = options.dialogue.temperature;
            t.status = TranscriptStatus::aborted;
            t.error = ex.what();
        }
        std::lock_guard lock(commit_mutex);
        results[k] = std::move(t);
        while (next_commit < results.size() && results[next_commit]) {
            store.append(*results[next_commit]);
            ++next_commit;
        }
    });

    std::map<std::pair<std::string, std::string>, Transcript> existing;
    if (report.skipped > 0) {
        for (const auto &target : targets)
            for (auto &t : store.load(target.endpoint->alias()))
                existing.emplace(std::make_pair(t.target_alias, t.card_id), std::move(t));
    }
    std::size_t k = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (k < pending.size() && pending[k] == i) {
            auto &t = *results[k++];
            ++report.executed;
            if (t.status == TranscriptStatus::aborted)
                ++report.aborted;
            report.transcripts.push_back(std::move(t));
            continue;
        }
        auto it = existing.find({all[i].target->endpoint->alias(), all[i].card->id});
        if (it != existing.end())
            report.transcripts.push_back(it->second);
    }
    return report;
}

} // namespace esceval::sim
