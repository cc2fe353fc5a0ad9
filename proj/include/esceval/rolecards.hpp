#pragma once

#include "esceval/llm_gateway.hpp"
#include "esceval/util.hpp"

#include "json.hpp"

#include <cstddef>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace esceval::rolecards {

// ---------------------------------------------------------------------------
// Taxonomy

struct LeafCounts {
    int high = 0;
    int middle = 0;

    bool operator==(const LeafCounts &) const = default;
};

struct TaxonomyPath {
    std::string l1;
    std::string l2;
    std::string l3;

    bool operator==(const TaxonomyPath &) const = default;
    auto operator<=>(const TaxonomyPath &) const = default;
};

struct TaxonomyLeaf {
    TaxonomyPath path;
    std::optional<LeafCounts> counts;
};

// Three-level problem taxonomy. Leaf names are unique across the tree.
class Taxonomy {
  public:
    explicit Taxonomy(std::vector<TaxonomyLeaf> leaves);

    const std::vector<TaxonomyLeaf> &leaves() const { return leaves_; }
    // Level-1 group names in file order.
    std::vector<std::string> groups() const;
    std::vector<std::string> subgroups(const std::string &group) const;

    const TaxonomyLeaf *find_leaf(const std::string &leaf_name) const;
    bool contains(const TaxonomyPath &path) const;

  private:
    std::vector<TaxonomyLeaf> leaves_;
    std::map<std::string, std::size_t> by_leaf_;
};

// Tab-separated, one leaf per line: l1, l2, l3, high_count, middle_count.
// A header line starting with "l1" and lines starting with '#' are skipped;
// the two count columns may both be empty. With `expected_leaves`, a
// different leaf total is a validation error.
Taxonomy parse_taxonomy(std::istream &in, const std::string &source_name = "<taxonomy>",
                        std::optional<std::size_t> expected_leaves = std::nullopt);
Taxonomy load_taxonomy(const std::string &path, std::optional<std::size_t> expected_leaves = std::nullopt);

// ---------------------------------------------------------------------------
// Cards

enum class Quality { high, middle, invalid };
enum class PipelineStage { extracted, llm_filtered, human_filtered, finalized };
enum class SourceFormat { qa, md };

std::string to_string(Quality q);
Quality parse_quality(std::string_view text);
std::string to_string(PipelineStage s);
PipelineStage parse_stage(std::string_view text);
std::string to_string(SourceFormat f);
SourceFormat parse_format(std::string_view text);

struct Provenance {
    std::string dataset;
    std::string record_id;

    bool operator==(const Provenance &) const = default;
};

struct RoleCard {
    std::string id;
    Lang lang = Lang::en;
    std::string age;
    std::string gender;
    std::string occupation;
    std::string problem;
    std::optional<Quality> quality; // unset until human correction
    std::optional<TaxonomyPath> category;
    Provenance source;
    PipelineStage pipeline_stage = PipelineStage::extracted;

    bool operator==(const RoleCard &) const = default;
};

// Throws ValidationError naming the violated field. The taxonomy check runs
// only when one is supplied.
void validate_card(const RoleCard &card, const Taxonomy *taxonomy = nullptr);

// Strict: unknown or missing fields are rejected.
nlohmann::json to_json(const RoleCard &card);
RoleCard card_from_json(const nlohmann::json &j);

// "Age: ...\nGender: ...\nOccupation: ...\nProblem: ..." in the card language.
std::string render_card(const RoleCard &card);

// ---------------------------------------------------------------------------
// Source records and extraction

struct SourceRecord {
    std::string dataset;
    Lang lang = Lang::en;
    SourceFormat format = SourceFormat::qa;
    std::size_t index = 0;  // position within its dataset file
    nlohmann::json body;    // QA: {question, answer}; MD: {dialogue: [{speaker, text}]}
};

// JSON lines; every line must match the format's schema.
std::vector<SourceRecord> load_source_records(const std::string &path, const std::string &dataset, Lang lang,
                                              SourceFormat format);
void validate_source_record(const SourceRecord &record);

// `<dataset>-<index>`, zero-padded to 5 digits.
std::string card_id_for(const std::string &dataset, std::size_t index);

std::string extraction_prompt(const SourceRecord &record);
std::string filter_prompt(const RoleCard &card);

struct ParsedFields {
    std::string age;
    std::string gender;
    std::string occupation;
    std::string problem;
};

// Reads labeled fields ("Age:", "年龄：", ...). Returns nullopt when no
// "Problem" field with text is present.
std::optional<ParsedFields> parse_extractor_output(std::string_view text);

// One line of a rejects or decisions log.
struct LogRecord {
    std::string card_id;
    std::string verdict;
    std::string raw;

    bool operator==(const LogRecord &) const = default;
};

nlohmann::json to_json(const LogRecord &r);
LogRecord log_record_from_json(const nlohmann::json &j);

// Where model answers come from: a live endpoint or a recorded decisions file.
class ResponseSource {
  public:
    virtual ~ResponseSource() = default;
    // `key` identifies the item (card id); live sources ignore it.
    virtual gateway::ChatResponse respond(const std::string &key, const gateway::ChatRequest &request) = 0;
};

class LiveSource final : public ResponseSource {
  public:
    LiveSource(std::shared_ptr<gateway::Endpoint> endpoint, gateway::RequestLog *log = nullptr,
               Clock clock = system_clock());
    gateway::ChatResponse respond(const std::string &key, const gateway::ChatRequest &request) override;

  private:
    std::shared_ptr<gateway::Endpoint> endpoint_;
    gateway::RequestLog *log_;
    Clock clock_;
};

// Replays the `raw` field of a decisions log keyed by card id. Unknown keys
// answer with finish_reason=error.
class ReplaySource final : public ResponseSource {
  public:
    explicit ReplaySource(std::span<const LogRecord> records);
    static ReplaySource from_file(const std::string &path);
    gateway::ChatResponse respond(const std::string &key, const gateway::ChatRequest &request) override;

  private:
    std::map<std::string, std::string> raw_;
};

struct ExtractionResult {
    std::vector<RoleCard> cards;      // input order
    std::vector<LogRecord> decisions; // one per record, input order ("ok" / "reject" / "error")
    std::vector<LogRecord> rejects;   // subset of decisions that produced no card
};

struct RunOptions {
    std::size_t parallelism = 4;
    double temperature = 0.0;
};

ExtractionResult extract_cards(std::span<const SourceRecord> records, ResponseSource &extractor,
                               RunOptions options = {});

// ---------------------------------------------------------------------------
// LLM filter

enum class Verdict { keep, drop, unparseable };

// Judge reply grammar: first non-empty line, optional "verdict:" prefix,
// then a keep or drop phrase, optionally followed by ": reason".
Verdict parse_verdict(std::string_view text);

struct DroppedCard {
    RoleCard card;
    std::string verdict;
};

struct FilterResult {
    std::vector<RoleCard> kept;          // stage=llm_filtered
    std::vector<DroppedCard> dropped;
    std::vector<DroppedCard> needs_human; // unparseable verdict or judge failure
    std::vector<LogRecord> decisions;
};

FilterResult llm_filter(std::span<const RoleCard> cards, ResponseSource &judge, RunOptions options = {});

// ---------------------------------------------------------------------------
// Human correction

enum class Resolver { agreement, third_party };

std::string to_string(Resolver r);
Resolver parse_resolver(std::string_view text);

struct FirstLabel {
    std::string annotator_id;
    Quality quality = Quality::middle;
    std::optional<TaxonomyPath> category;

    bool operator==(const FirstLabel &) const = default;
};

struct Resolution {
    Quality quality = Quality::middle;
    std::optional<TaxonomyPath> category;

    bool operator==(const Resolution &) const = default;
};

struct CorrectionDecision {
    std::string card_id;
    std::vector<FirstLabel> first_labels;
    Resolution resolution;
    Resolver resolver = Resolver::agreement;

    bool operator==(const CorrectionDecision &) const = default;
};

nlohmann::json to_json(const CorrectionDecision &d);
CorrectionDecision decision_from_json(const nlohmann::json &j);

// True when the first-round labels need a third party: they disagree on
// high vs middle, or on the category of a valid card.
bool needs_third_party(std::span<const FirstLabel> labels);

// Applies the correction rules to first-round labels. Any invalid label
// discards the card; agreeing labels are accepted as-is; otherwise
// `third_party` must supply the resolution (ValidationError if absent).
CorrectionDecision resolve_labels(std::string card_id, std::vector<FirstLabel> labels,
                                  std::optional<Resolution> third_party = std::nullopt);

// Checks a recorded decision against the rules. Throws ValidationError.
void validate_decision(const CorrectionDecision &decision);

struct CorrectionOutcome {
    std::vector<RoleCard> finalized;       // input order
    std::vector<std::string> discarded;    // resolved invalid
    std::vector<std::string> undecided;    // no decision supplied
};

CorrectionOutcome apply_corrections(std::span<const RoleCard> cards, std::span<const CorrectionDecision> decisions,
                                    const Taxonomy &taxonomy);

// ---------------------------------------------------------------------------
// Accounting and selection

struct StageCounts {
    std::size_t extracted = 0;
    std::size_t llm_filtered = 0;
    std::size_t human_filtered = 0;
    std::size_t high = 0;
    std::size_t middle = 0;

    bool monotone() const;
    bool operator==(const StageCounts &) const = default;
};

struct StageAccounting {
    std::map<Lang, StageCounts> by_lang;

    StageCounts total() const;
    // Throws ValidationError naming the first language that breaks
    // extracted >= llm_filtered >= human_filtered = high + middle.
    void validate() const;
};

StageAccounting tally_stages(std::span<const RoleCard> extracted, std::span<const RoleCard> llm_filtered,
                             std::span<const RoleCard> finalized);

struct SelectionPolicy {
    std::optional<Quality> quality;
    std::optional<Lang> lang;
};

// Finalized cards matching the policy, sorted by id.
std::vector<RoleCard> select_eval_set(std::span<const RoleCard> cards, const SelectionPolicy &policy);

} // namespace esceval::rolecards
