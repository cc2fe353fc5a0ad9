#pragma once

#include "esceval/error.hpp"
#include "esceval/rubric.hpp"
#include "esceval/simulator.hpp"
#include "esceval/util.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace esceval::annosvc {

// Lease and request problems; `status` is the HTTP status to answer with.
class ServiceError : public ValidationError {
  public:
    ServiceError(int status, const std::string &what, std::string field = {})
        : ValidationError("annosvc", what, std::move(field)), status_(status) {}
    int status() const noexcept { return status_; }

  private:
    int status_;
};

struct CoordinatorConfig {
    std::set<std::string> annotators; // allowlist
    std::chrono::milliseconds lease_duration = std::chrono::minutes(30);
    std::uint64_t seed = 0; // side permutation for pairwise leases
    Clock clock = system_clock();
    // When set, records are appended to <workspace>/annotations/ and reloaded
    // on construction.
    std::string workspace;
};

struct TaskLease {
    std::string lease_id;
    std::string task_id;
    std::string transcript_id;
    rubric::RubricKind rubric = rubric::RubricKind::eval7;
    rubric::Stage stage = rubric::Stage::first;
    std::string annotator_id;
    TimePoint expiry;
    // Reviewers see the first-stage scores.
    std::optional<std::map<std::string, int>> first_stage_scores;
};

nlohmann::json to_json(const TaskLease &lease);

struct PairTask {
    std::string pair_id;
    std::string a; // canonical left
    std::string b; // canonical right
};

struct PairLease {
    std::string lease_id;
    std::string pair_id;
    std::string annotator_id;
    bool swapped = false; // true: b is displayed on the left
    std::string display_left;
    std::string display_right;
    TimePoint expiry;
};

struct Ack {
    std::string record_id;
    bool duplicate = false;
};

struct Counts {
    std::size_t first = 0;
    std::size_t review = 0;
};

struct Progress {
    std::size_t tasks = 0;
    std::size_t first_stage_done = 0;
    std::size_t review_done = 0;
    std::size_t leased = 0;
    std::size_t pairs = 0;
    std::size_t pairwise_done = 0;
    std::map<std::string, Counts> by_annotator;
    std::map<std::string, Counts> by_model;
};

nlohmann::json to_json(const Progress &p);

// Owns the task queue. Every public call takes one mutex, so lease
// decisions are serialized however many request threads call in.
class Coordinator {
  public:
    Coordinator(CoordinatorConfig config, std::vector<sim::Transcript> transcripts,
                std::vector<rubric::RubricKind> rubrics = {rubric::RubricKind::eval7},
                std::vector<PairTask> pairs = {});

    // Oldest open task for this rubric that the annotator may take; an
    // annotator holding an unexpired lease gets that lease back.
    std::optional<TaskLease> next_task(const std::string &annotator_id, rubric::RubricKind kind);
    Ack submit_rating(const std::string &lease_id, rubric::AnnotationRecord record);

    std::optional<PairLease> next_pair(const std::string &annotator_id);
    // `choice` is the displayed side; the stored judgment names the true
    // contestants.
    Ack submit_pairwise(const std::string &lease_id, const std::string &annotator_id, rubric::Side choice);

    Progress progress() const;
    const sim::Transcript *transcript(const std::string &id) const;
    std::vector<rubric::AnnotationRecord> annotations() const;
    std::vector<rubric::PairwiseJudgment> judgments() const;
    bool allowed(const std::string &annotator_id) const { return config_.annotators.count(annotator_id) > 0; }

  private:
    struct Task {
        std::string transcript_id;
        rubric::RubricKind rubric;
        std::optional<rubric::AnnotationRecord> first;
        std::optional<rubric::AnnotationRecord> review;
        std::string open_lease;
    };
    struct LeaseState {
        TaskLease lease;
        std::size_t task = 0;
        bool open = true;
        std::optional<rubric::AnnotationRecord> stored;
    };
    struct Pair {
        PairTask task;
        std::optional<rubric::PairwiseJudgment> judgment;
        std::string open_lease;
    };
    struct PairLeaseState {
        PairLease lease;
        std::size_t pair = 0;
        bool open = true;
        std::optional<rubric::PairwiseJudgment> stored;
    };

    void require_annotator(const std::string &id) const;
    void expire_locked(TimePoint now);
    void restore();
    std::string annotations_path() const;
    std::string pairwise_path() const;

    CoordinatorConfig config_;
    std::map<std::string, sim::Transcript> transcripts_;
    std::vector<Task> tasks_;
    std::map<std::pair<std::string, rubric::RubricKind>, std::size_t> task_index_;
    std::map<std::string, LeaseState> leases_;
    std::vector<Pair> pairs_;
    std::map<std::string, PairLeaseState> pair_leases_;
    std::mt19937_64 rng_;
    std::uint64_t next_lease_ = 1;
    std::size_t pairwise_done_ = 0;
    mutable std::mutex mutex_;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 0; // 0 picks a free port
    std::string cors_origin = "*";
};

// HTTP front end:
//   GET  /tasks/next?annotator=&rubric=   -> lease + transcript, 204 when empty
//   POST /ratings     {lease_id, record}
//   GET  /pairs/next?annotator=           -> lease + two anonymous dialogues
//   POST /pairwise    {lease_id, annotator_id, choice}
//   GET  /progress
//   GET  /transcripts/{id}
//   GET  /rubrics
class Server {
  public:
    Server(Coordinator &coordinator, ServerConfig config = {});
    ~Server();
    Server(const Server &) = delete;
    Server &operator=(const Server &) = delete;

    // Binds and serves on a background thread; returns the bound port.
    int start();
    // Serves on the calling thread until stop().
    void run();
    void stop();
    int port() const { return port_; }

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace esceval::annosvc
