#pragma once

#include "esceval/llm_gateway.hpp"
#include "esceval/rolecards.hpp"
#include "esceval/util.hpp"

#include "json.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace esceval::sim {

enum class VariantKind { zero_shot, cot, icl, cot_icl };

std::string to_string(VariantKind kind);
VariantKind parse_variant(std::string_view text);

struct SeekerPromptVariant {
    VariantKind kind = VariantKind::zero_shot;
    std::optional<std::string> example_dialogue; // exactly one example, required for icl / cot_icl
};

// GPT-style templates are plain system prompts; the NPC style renders the
// parameter block (basic_info / reply_restrict / opener / dialogue_sample)
// used by role-play platforms configured through fields.
enum class PromptStyle { gpt, npc };

std::string build_seeker_prompt(const rolecards::RoleCard &card, const SeekerPromptVariant &variant,
                                PromptStyle style = PromptStyle::gpt);

inline constexpr std::string_view kDefaultOpener = "I have some trouble to share.";

// ---------------------------------------------------------------------------
// Refusal detection

// Pattern file: one "<lang>\t<phrase>" per line (lang is en, zh or *);
// '#' starts a comment. Matching is case-insensitive substring search.
class RefusalPatterns {
  public:
    RefusalPatterns() = default;
    static RefusalPatterns load(const std::string &path);
    static RefusalPatterns parse(std::string_view text);

    void add(std::optional<Lang> lang, std::string phrase);
    bool matches(std::string_view text, Lang lang) const;
    std::size_t size() const { return patterns_.size(); }

  private:
    std::vector<std::pair<std::optional<Lang>, std::string>> patterns_;
};

bool detect_refusal(std::string_view text, Lang lang, const RefusalPatterns &patterns);

// ---------------------------------------------------------------------------
// Transcripts

enum class Speaker { seeker, supporter };
enum class TranscriptStatus { complete, aborted };

std::string to_string(Speaker s);
Speaker parse_speaker(std::string_view text);
std::string to_string(TranscriptStatus s);
TranscriptStatus parse_status(std::string_view text);

struct Turn {
    Speaker speaker = Speaker::seeker;
    std::string text;
    std::string timestamp; // UTC ISO-8601

    bool operator==(const Turn &) const = default;
};

struct Transcript {
    std::string id;
    std::string card_id;
    std::string seeker_alias;
    std::string target_alias;
    VariantKind prompt_variant = VariantKind::zero_shot;
    double temperature = 0.0;
    std::vector<Turn> turns;
    std::vector<std::size_t> refusal_flags; // indices into turns
    TranscriptStatus status = TranscriptStatus::complete;
    std::string error; // abort annotation

    bool operator==(const Transcript &) const = default;
};

std::string transcript_id(const std::string &card_id, const std::string &target_alias);

nlohmann::json to_json(const Transcript &t);
Transcript transcript_from_json(const nlohmann::json &j);

// Throws ValidationError: broken alternation, seeker not first, a dangling
// refusal flag, or a complete transcript with the wrong number of turns.
void validate_transcript(const Transcript &t, std::size_t exchanges = 5);

// ---------------------------------------------------------------------------
// Dialogue

struct SeekerConfig {
    std::shared_ptr<gateway::Endpoint> endpoint;
    SeekerPromptVariant variant;
    PromptStyle style = PromptStyle::gpt;
    std::optional<std::string> fixed_opener; // when set, used verbatim as turn 0
};

struct TargetConfig {
    std::shared_ptr<gateway::Endpoint> endpoint;
    std::optional<std::string> system_prompt;
};

struct DialogueOptions {
    std::size_t turns = 5; // exchanges; a complete transcript holds 2 * turns messages
    double temperature = 0.0;
    int max_turn_tokens = 512;
    std::chrono::milliseconds timeout{60'000};
};

struct DialogueContext {
    gateway::RequestLog *log = nullptr;
    const RefusalPatterns *refusals = nullptr;
    Clock clock = system_clock();
};

// The seeker speaks first. Each call carries the full history: the seeker
// sees its system prompt with its own turns as assistant messages; the
// target sees seeker turns as user messages. An endpoint error (or empty
// reply) aborts the dialogue; completed exchanges are kept and the
// unanswered seeker message, if any, is recorded in `error`.
Transcript run_dialogue(const rolecards::RoleCard &card, const SeekerConfig &seeker, const TargetConfig &target,
                        const DialogueOptions &options = {}, const DialogueContext &context = {});

// ---------------------------------------------------------------------------
// Batches

// Single-writer, append-only transcript store laid out as
// <root>/transcripts/<target-alias>/transcripts.jsonl.
class TranscriptStore {
  public:
    explicit TranscriptStore(std::string root);

    std::string path_for(const std::string &target_alias) const;
    bool contains(const std::string &card_id, const std::string &target_alias) const;
    void append(const Transcript &t);
    std::vector<Transcript> load(const std::string &target_alias) const;
    std::vector<Transcript> load_all() const;

  private:
    std::string root_;
    std::set<std::pair<std::string, std::string>> index_; // (target, card)
    mutable std::mutex mutex_;
};

struct BatchOptions {
    std::size_t parallelism = 4;
    DialogueOptions dialogue;
    // Stop after this many new dialogues (the rest stay pending for a rerun).
    std::optional<std::size_t> max_new_dialogues;
};

struct BatchReport {
    std::vector<Transcript> transcripts; // ordered by (target alias, card id)
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t aborted = 0;
};

// One dialogue per (card, target). Pairs already in `store` are skipped.
// New transcripts are appended in (target, card id) order, so an interrupted
// run followed by a resume leaves the same files as an uninterrupted one.
BatchReport run_batch(std::span<const rolecards::RoleCard> cards, const SeekerConfig &seeker,
                      std::span<const TargetConfig> targets, TranscriptStore &store, const BatchOptions &options = {},
                      const DialogueContext &context = {});

} // namespace esceval::sim
