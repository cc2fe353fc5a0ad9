#include "esceval/annosvc.hpp"

#include "esceval/records.hpp"
#include "esceval/store.hpp"

#include <filesystem>

namespace esceval::annosvc {

using nlohmann::json;
using rubric::RubricKind;
using rubric::Stage;

namespace {

bool same_rating(const rubric::AnnotationRecord &a, const rubric::AnnotationRecord &b) {
    return a.transcript_id == b.transcript_id && a.annotator_id == b.annotator_id && a.rubric == b.rubric &&
           a.stage == b.stage && a.scores == b.scores;
}

std::string task_id(const std::string &transcript, RubricKind kind, Stage stage) {
    return transcript + "/" + rubric::to_string(kind) + "/" + rubric::to_string(stage);
}

} // namespace

json to_json(const TaskLease &lease) {
    json j = {{"lease_id", lease.lease_id},
              {"task_id", lease.task_id},
              {"transcript_id", lease.transcript_id},
              {"rubric", rubric::to_string(lease.rubric)},
              {"stage", rubric::to_string(lease.stage)},
              {"annotator_id", lease.annotator_id},
              {"lease_expiry", format_utc(lease.expiry)}};
    if (lease.first_stage_scores)
        j["first_stage_scores"] = *lease.first_stage_scores;
    return j;
}

json to_json(const Progress &p) {
    auto counts = [](const std::map<std::string, Counts> &m) {
        json out = json::object();
        for (const auto &[k, c] : m)
            out[k] = {{"first", c.first}, {"review", c.review}};
        return out;
    };
    return {{"tasks", p.tasks},
            {"first_stage_done", p.first_stage_done},
            {"review_done", p.review_done},
            {"leased", p.leased},
            {"pairs", p.pairs},
            {"pairwise_done", p.pairwise_done},
            {"by_annotator", counts(p.by_annotator)},
            {"by_model", counts(p.by_model)}};
}

Coordinator::Coordinator(CoordinatorConfig config, std::vector<sim::Transcript> transcripts,
                         std::vector<RubricKind> rubrics, std::vector<PairTask> pairs)
    : config_(std::move(config)), rng_(config_.seed) {
    if (!config_.clock)
        config_.clock = system_clock();
    if (config_.lease_duration.count() <= 0)
        throw ValidationError("annosvc", "lease duration must be positive", "lease_duration");
    for (const auto &kind : rubrics) {
        for (const auto &t : transcripts) {
            if (task_index_.count({t.id, kind}))
                continue;
            task_index_[{t.id, kind}] = tasks_.size();
            tasks_.push_back({t.id, kind, std::nullopt, std::nullopt, {}});
        }
    }
    for (auto &t : transcripts) {
        auto id = t.id;
        if (!transcripts_.emplace(id, std::move(t)).second)
            throw DataError("annosvc", "duplicate transcript id " + id);
    }
    std::set<std::string> pair_ids;
    for (auto &p : pairs) {
        if (!transcripts_.count(p.a) || !transcripts_.count(p.b))
            throw DataError("annosvc", "pair " + p.pair_id + " names an unknown transcript");
        if (p.a == p.b)
            throw DataError("annosvc", "pair " + p.pair_id + " compares a transcript with itself");
        if (!pair_ids.insert(p.pair_id).second)
            throw DataError("annosvc", "duplicate pair id " + p.pair_id);
        pairs_.push_back({std::move(p), std::nullopt, {}});
    }
    if (!config_.workspace.empty())
        restore();
}

std::string Coordinator::annotations_path() const {
    return (std::filesystem::path(config_.workspace) / "annotations" / "annotations.jsonl").string();
}

std::string Coordinator::pairwise_path() const {
    return (std::filesystem::path(config_.workspace) / "annotations" / "pairwise.jsonl").string();
}

void Coordinator::restore() {
    for (auto &r : store::load<rubric::AnnotationRecord>(annotations_path())) {
        auto it = task_index_.find({r.transcript_id, r.rubric});
        if (it == task_index_.end())
            continue;
        auto &task = tasks_[it->second];
        auto &slot = r.stage == Stage::first ? task.first : task.review;
        if (slot)
            throw DataError("annosvc", "stored annotations hold two " + rubric::to_string(r.stage) +
                                           " records for " + r.transcript_id);
        slot = std::move(r);
    }
    for (auto &j : store::load<rubric::PairwiseJudgment>(pairwise_path())) {
        for (auto &p : pairs_) {
            if (!p.judgment && p.task.a == j.left_transcript_id && p.task.b == j.right_transcript_id) {
                p.judgment = std::move(j);
                ++pairwise_done_;
                break;
            }
        }
    }
}

void Coordinator::require_annotator(const std::string &id) const {
    if (!allowed(id))
        throw ServiceError(403, "annotator '" + id + "' is not on the allowlist", "annotator");
}

void Coordinator::expire_locked(TimePoint now) {
    for (auto &[id, l] : leases_) {
        if (l.open && now >= l.lease.expiry) {
            l.open = false;
            if (tasks_[l.task].open_lease == id)
                tasks_[l.task].open_lease.clear();
        }
    }
    for (auto &[id, l] : pair_leases_) {
        if (l.open && now >= l.lease.expiry) {
            l.open = false;
            if (pairs_[l.pair].open_lease == id)
                pairs_[l.pair].open_lease.clear();
        }
    }
}

std::optional<TaskLease> Coordinator::next_task(const std::string &annotator_id, RubricKind kind) {
    std::lock_guard lock(mutex_);
    require_annotator(annotator_id);
    const auto now = config_.clock();
    expire_locked(now);

    for (const auto &[id, l] : leases_)
        if (l.open && l.lease.annotator_id == annotator_id && l.lease.rubric == kind)
            return l.lease;

    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        auto &task = tasks_[i];
        if (task.rubric != kind || !task.open_lease.empty())
            continue;
        std::optional<Stage> stage;
        if (!task.first)
            stage = Stage::first;
        else if (!task.review && task.first->annotator_id != annotator_id)
            stage = Stage::review;
        if (!stage)
            continue;

        TaskLease lease;
        lease.lease_id = "L" + std::to_string(next_lease_++);
        lease.task_id = task_id(task.transcript_id, kind, *stage);
        lease.transcript_id = task.transcript_id;
        lease.rubric = kind;
        lease.stage = *stage;
        lease.annotator_id = annotator_id;
        lease.expiry = now + config_.lease_duration;
        if (*stage == Stage::review)
            lease.first_stage_scores = task.first->scores;
        task.open_lease = lease.lease_id;
        leases_.emplace(lease.lease_id, LeaseState{lease, i, true, std::nullopt});
        return lease;
    }
    return std::nullopt;
}

Ack Coordinator::submit_rating(const std::string &lease_id, rubric::AnnotationRecord record) {
    std::lock_guard lock(mutex_);
    auto it = leases_.find(lease_id);
    if (it == leases_.end())
        throw ServiceError(404, "unknown lease " + lease_id, "lease_id");
    auto &state = it->second;
    const auto &lease = state.lease;

    if (record.annotator_id.empty())
        record.annotator_id = lease.annotator_id;
    if (record.transcript_id.empty())
        record.transcript_id = lease.transcript_id;

    if (state.stored) {
        if (same_rating(*state.stored, record))
            return {state.stored->id, true};
        throw ServiceError(409, "lease " + lease_id + " was already used for a different record", "lease_id");
    }
    const auto now = config_.clock();
    if (!state.open || now >= lease.expiry) {
        expire_locked(now);
        throw ServiceError(409, "lease " + lease_id + " has expired", "lease_id");
    }
    if (record.transcript_id != lease.transcript_id)
        throw ServiceError(422, "record transcript does not match the lease", "transcript_id");
    if (record.annotator_id != lease.annotator_id)
        throw ServiceError(422, "record annotator does not match the lease", "annotator_id");
    if (record.rubric != lease.rubric)
        throw ServiceError(422, "record rubric does not match the lease", "rubric");
    if (record.stage != lease.stage)
        throw ServiceError(422, "record stage does not match the lease", "stage");
    if (record.id.empty())
        record.id = "ann-" + lease_id;
    if (record.timestamp.empty())
        record.timestamp = format_utc(now);
    try {
        rubric::validate_annotation(record);
    } catch (const ServiceError &) {
        throw;
    } catch (const ValidationError &ex) {
        throw ServiceError(422, ex.what(), ex.field());
    }

    auto &task = tasks_[state.task];
    auto &slot = record.stage == Stage::first ? task.first : task.review;
    if (slot)
        throw ServiceError(409, "task " + lease.task_id + " already has a stored record", "lease_id");
    if (!config_.workspace.empty())
        store::append(record, annotations_path());
    slot = record;
    state.stored = record;
    state.open = false;
    task.open_lease.clear();
    return {record.id, false};
}

std::optional<PairLease> Coordinator::next_pair(const std::string &annotator_id) {
    std::lock_guard lock(mutex_);
    require_annotator(annotator_id);
    const auto now = config_.clock();
    expire_locked(now);

    for (const auto &[id, l] : pair_leases_)
        if (l.open && l.lease.annotator_id == annotator_id)
            return l.lease;

    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        auto &p = pairs_[i];
        if (p.judgment || !p.open_lease.empty())
            continue;
        PairLease lease;
        lease.lease_id = "P" + std::to_string(next_lease_++);
        lease.pair_id = p.task.pair_id;
        lease.annotator_id = annotator_id;
        lease.swapped = (rng_() & 1u) != 0;
        lease.display_left = lease.swapped ? p.task.b : p.task.a;
        lease.display_right = lease.swapped ? p.task.a : p.task.b;
        lease.expiry = now + config_.lease_duration;
        p.open_lease = lease.lease_id;
        pair_leases_.emplace(lease.lease_id, PairLeaseState{lease, i, true, std::nullopt});
        return lease;
    }
    return std::nullopt;
}

Ack Coordinator::submit_pairwise(const std::string &lease_id, const std::string &annotator_id, rubric::Side choice) {
    std::lock_guard lock(mutex_);
    auto it = pair_leases_.find(lease_id);
    if (it == pair_leases_.end())
        throw ServiceError(404, "judgment for unleased pair (lease " + lease_id + ")", "lease_id");
    auto &state = it->second;
    const auto &lease = state.lease;
    if (annotator_id != lease.annotator_id)
        throw ServiceError(422, "annotator does not hold lease " + lease_id, "annotator_id");

    auto &pair = pairs_[state.pair];
    const auto &chosen = choice == rubric::Side::left ? lease.display_left : lease.display_right;
    rubric::PairwiseJudgment j;
    j.id = "pw-" + lease_id;
    j.left_transcript_id = pair.task.a;
    j.right_transcript_id = pair.task.b;
    j.annotator_id = annotator_id;
    j.choice = chosen == pair.task.a ? rubric::Side::left : rubric::Side::right;

    if (state.stored) {
        if (state.stored->choice == j.choice)
            return {state.stored->id, true};
        throw ServiceError(409, "lease " + lease_id + " was already used for a different choice", "lease_id");
    }
    const auto now = config_.clock();
    if (!state.open || now >= lease.expiry) {
        expire_locked(now);
        throw ServiceError(409, "lease " + lease_id + " has expired", "lease_id");
    }
    if (pair.judgment)
        throw ServiceError(409, "pair " + pair.task.pair_id + " is already judged", "lease_id");
    rubric::validate_pairwise(j);
    if (!config_.workspace.empty())
        store::append(j, pairwise_path());
    pair.judgment = j;
    pair.open_lease.clear();
    state.stored = j;
    state.open = false;
    ++pairwise_done_;
    return {j.id, false};
}

Progress Coordinator::progress() const {
    std::lock_guard lock(mutex_);
    Progress p;
    p.tasks = tasks_.size();
    p.pairs = pairs_.size();
    p.pairwise_done = pairwise_done_;
    const auto now = config_.clock();
    for (const auto &[id, l] : leases_)
        p.leased += l.open && now < l.lease.expiry;
    for (const auto &[id, l] : pair_leases_)
        p.leased += l.open && now < l.lease.expiry;
    for (const auto &task : tasks_) {
        const auto &model = transcripts_.at(task.transcript_id).target_alias;
        if (task.first) {
            ++p.first_stage_done;
            ++p.by_annotator[task.first->annotator_id].first;
            ++p.by_model[model].first;
        }
        if (task.review) {
            ++p.review_done;
            ++p.by_annotator[task.review->annotator_id].review;
            ++p.by_model[model].review;
        }
    }
    return p;
}

const sim::Transcript *Coordinator::transcript(const std::string &id) const {
    auto it = transcripts_.find(id);
    return it == transcripts_.end() ? nullptr : &it->second;
}

std::vector<rubric::AnnotationRecord> Coordinator::annotations() const {
    std::lock_guard lock(mutex_);
    std::vector<rubric::AnnotationRecord> out;
    for (const auto &task : tasks_) {
        if (task.first)
            out.push_back(*task.first);
        if (task.review)
            out.push_back(*task.review);
    }
    return out;
}

std::vector<rubric::PairwiseJudgment> Coordinator::judgments() const {
    std::lock_guard lock(mutex_);
    std::vector<rubric::PairwiseJudgment> out;
    for (const auto &p : pairs_)
        if (p.judgment)
            out.push_back(*p.judgment);
    return out;
}

} // namespace esceval::annosvc
