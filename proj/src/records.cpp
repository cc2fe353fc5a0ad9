#include "esceval/records.hpp"

#include "esceval/error.hpp"

namespace esceval {

using nlohmann::json;

namespace {

constexpr const char *kModule = "store";

void only_keys(const json &j, std::initializer_list<std::string_view> keys, const char *what) {
    if (!j.is_object())
        throw ValidationError(kModule, std::string(what) + " must be an object");
    for (const auto &[k, v] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ValidationError(kModule, std::string(what) + ": unknown field '" + k + "'", k);
}

json optional_number(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json &j, const char *key) {
    const auto &v = j.at(key);
    if (v.is_null())
        return std::nullopt;
    return v.get<double>();
}

} // namespace

json to_json(const metrics::MetricRecord &r) {
    const auto &v = r.values;
    return {{"transcript_id", r.transcript_id},
            {"card_id", r.card_id},
            {"model", r.model},
            {"values",
             {{"bleu1", v.bleu1},
              {"bleu2", v.bleu2},
              {"bleu4", v.bleu4},
              {"distinct1", v.distinct1},
              {"distinct2", v.distinct2},
              {"rougeL", v.rougeL},
              {"meteor", v.meteor}}}};
}

metrics::MetricRecord metric_record_from_json(const json &j) {
    only_keys(j, {"transcript_id", "card_id", "model", "values"}, "metric record");
    try {
        metrics::MetricRecord r;
        r.transcript_id = j.at("transcript_id").get<std::string>();
        r.card_id = j.at("card_id").get<std::string>();
        r.model = j.at("model").get<std::string>();
        const auto &v = j.at("values");
        only_keys(v, {"bleu1", "bleu2", "bleu4", "distinct1", "distinct2", "rougeL", "meteor"}, "metric values");
        r.values.bleu1 = v.at("bleu1").get<double>();
        r.values.bleu2 = v.at("bleu2").get<double>();
        r.values.bleu4 = v.at("bleu4").get<double>();
        r.values.distinct1 = v.at("distinct1").get<double>();
        r.values.distinct2 = v.at("distinct2").get<double>();
        r.values.rougeL = v.at("rougeL").get<double>();
        r.values.meteor = v.at("meteor").get<double>();
        return r;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("metric record: ") + ex.what());
    }
}

json to_json(const metrics::ReferenceSet &r) {
    return {{"card_id", r.card_id}, {"lang", to_string(r.lang)}, {"turns", r.turns}};
}

metrics::ReferenceSet reference_from_json(const json &j) {
    only_keys(j, {"card_id", "lang", "turns"}, "reference set");
    try {
        metrics::ReferenceSet r;
        r.card_id = j.at("card_id").get<std::string>();
        r.lang = parse_lang(j.at("lang").get<std::string>());
        r.turns = j.at("turns").get<std::vector<std::string>>();
        return r;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("reference set: ") + ex.what());
    }
}

json to_json(const stats::CorrelationRecord &r) {
    return {{"metric", r.metric},
            {"dimension", r.dimension},
            {"level", stats::to_string(r.level)},
            {"spearman", optional_number(r.spearman)},
            {"pearson", optional_number(r.pearson)},
            {"kendall", optional_number(r.kendall)},
            {"n", r.n}};
}

stats::CorrelationRecord correlation_from_json(const json &j) {
    only_keys(j, {"metric", "dimension", "level", "spearman", "pearson", "kendall", "n"}, "correlation record");
    try {
        stats::CorrelationRecord r;
        r.metric = j.at("metric").get<std::string>();
        r.dimension = j.at("dimension").get<std::string>();
        r.level = stats::parse_level(j.at("level").get<std::string>());
        r.spearman = number_or_null(j, "spearman");
        r.pearson = number_or_null(j, "pearson");
        r.kendall = number_or_null(j, "kendall");
        r.n = j.at("n").get<std::size_t>();
        return r;
    } catch (const json::exception &ex) {
        throw ValidationError(kModule, std::string("correlation record: ") + ex.what());
    }
}

} // namespace esceval
