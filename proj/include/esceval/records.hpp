#pragma once

#include "esceval/llm_gateway.hpp"
#include "esceval/rolecards.hpp"
#include "esceval/rubric.hpp"
#include "esceval/simulator.hpp"
#include "esceval/stats.hpp"
#include "esceval/store.hpp"
#include "esceval/textmetrics.hpp"

namespace esceval {

nlohmann::json to_json(const metrics::MetricRecord &r);
metrics::MetricRecord metric_record_from_json(const nlohmann::json &j);
nlohmann::json to_json(const metrics::ReferenceSet &r);
metrics::ReferenceSet reference_from_json(const nlohmann::json &j);
nlohmann::json to_json(const stats::CorrelationRecord &r);
stats::CorrelationRecord correlation_from_json(const nlohmann::json &j);

} // namespace esceval

namespace esceval::store {

#define ESCEVAL_RECORD_TRAITS(Type, name, to, from)                                                              \
    template <>                                                                                                  \
    struct RecordTraits<Type> {                                                                                  \
        static constexpr std::string_view schema = name;                                                         \
        static constexpr int version = 1;                                                                        \
        static nlohmann::json to_json(const Type &r) { return to(r); }                                           \
        static Type from_json(const nlohmann::json &j) { return from(j); }                                       \
    };

ESCEVAL_RECORD_TRAITS(rolecards::RoleCard, "role_card", rolecards::to_json, rolecards::card_from_json)
ESCEVAL_RECORD_TRAITS(sim::Transcript, "transcript", sim::to_json, sim::transcript_from_json)
ESCEVAL_RECORD_TRAITS(rubric::AnnotationRecord, "annotation", rubric::to_json, rubric::annotation_from_json)
ESCEVAL_RECORD_TRAITS(rubric::PairwiseJudgment, "pairwise", rubric::to_json, rubric::pairwise_from_json)
ESCEVAL_RECORD_TRAITS(rubric::ScorerPrediction, "scorer_prediction", rubric::to_json, rubric::prediction_from_json)
ESCEVAL_RECORD_TRAITS(metrics::MetricRecord, "metric", esceval::to_json, esceval::metric_record_from_json)
ESCEVAL_RECORD_TRAITS(metrics::ReferenceSet, "reference", esceval::to_json, esceval::reference_from_json)
ESCEVAL_RECORD_TRAITS(stats::CorrelationRecord, "correlation", esceval::to_json, esceval::correlation_from_json)
ESCEVAL_RECORD_TRAITS(rolecards::LogRecord, "decision_log", rolecards::to_json, rolecards::log_record_from_json)
ESCEVAL_RECORD_TRAITS(rolecards::CorrectionDecision, "correction_decision", rolecards::to_json,
                      rolecards::decision_from_json)
ESCEVAL_RECORD_TRAITS(gateway::LogEntry, "request_log", gateway::to_json, gateway::log_entry_from_json)

#undef ESCEVAL_RECORD_TRAITS

} // namespace esceval::store
