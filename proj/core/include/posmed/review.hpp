#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posmed/corpus.hpp"
#include "posmed/error.hpp"

namespace posmed {

struct Vote {
  std::string sample_id;
  std::string reviewer_id;
  int verdict = 0;  // 0 unqualified, 1 qualified
  std::string timestamp;

  friend bool operator==(const Vote&, const Vote&) = default;
};

enum class Outcome : std::uint8_t { Retained, Rejected, Pending };
std::string_view outcome_name(Outcome o);

struct ReviewDecision {
  std::string sample_id;
  std::size_t qualified_votes = 0;
  std::size_t total_votes = 0;
  Outcome outcome = Outcome::Pending;

  friend bool operator==(const ReviewDecision&, const ReviewDecision&) = default;
};

enum class FeedbackCategory : std::uint8_t { Ambiguity, ClinicalClarity, Bias, Other };
std::string_view feedback_category_name(FeedbackCategory c);
std::optional<FeedbackCategory> feedback_category_from_name(std::string_view name);

struct FeedbackNote {
  std::string sample_id;
  std::string reviewer_id;
  std::string text;
  FeedbackCategory category = FeedbackCategory::Other;
};

// Raised for votes that break the panel contract (too many distinct
// reviewers, verdict outside {0,1}, mixed samples).
class VoteError : public DataError {
 public:
  using DataError::DataError;
};

// The vote log could not be written; nothing was persisted.
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keeps the latest vote per (sample_id, reviewer_id), preserving the order
// in which each pair first appeared.
std::vector<Vote> effective_votes(std::span<const Vote> log);

// Strict majority over a panel of `assigned_reviewers`. Pending until every
// assigned reviewer has voted; ties reject. `votes` must all reference
// `sample_id`; duplicates per reviewer resolve to the latest.
ReviewDecision decide(std::string_view sample_id, std::span<const Vote> votes,
                      std::size_t assigned_reviewers);

// One decision per corpus record, in corpus order. Votes for samples not in
// the corpus are ignored; their count is reported through `orphans`.
std::vector<ReviewDecision> decide_all(const Corpus& corpus, std::span<const Vote> log,
                                       std::size_t assigned_reviewers,
                                       std::size_t* orphans = nullptr);

struct ApplyResult {
  Corpus retained;
  Corpus rejected;
  Corpus pending;
};

// Records without a decision count as pending.
ApplyResult apply_votes(const Corpus& corpus, std::span<const ReviewDecision> decisions);

std::string vote_json(const Vote& vote);
Vote parse_vote(std::string_view line);
std::vector<Vote> read_vote_log(const std::filesystem::path& path);
std::string feedback_json(const FeedbackNote& note);
std::string decision_json(const ReviewDecision& decision);
std::string utc_timestamp();

// Append-only JSONL file. Each append is one write of a complete line,
// flushed to stable storage before returning; a failed or short write is
// rolled back by truncation so the log never holds a partial record.
class AppendLog {
 public:
  explicit AppendLog(std::filesystem::path path);
  ~AppendLog();
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;

  void append_line(std::string_view line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

struct ReviewProgress {
  std::size_t retained = 0;
  std::size_t rejected = 0;
  std::size_t pending = 0;
  std::map<std::string, std::size_t> per_reviewer;
};

// In-memory review state shared by the HTTP service and log replay.
class ReviewState {
 public:
  ReviewState(Corpus corpus, std::size_t assigned_reviewers);

  // Validates a vote against the panel; throws VoteError / DataError.
  void check_vote(const Vote& vote) const;
  // Applies an already validated vote and returns the sample's decision.
  ReviewDecision record(const Vote& vote);

  ReviewDecision decision(std::string_view sample_id) const;
  std::vector<ReviewDecision> decisions() const;
  ReviewProgress progress() const;
  const SampleRecord* find(std::string_view sample_id) const;
  // First sample (by sample_id) this reviewer has not voted on.
  const SampleRecord* next_for(std::string_view reviewer_id) const;
  std::string export_retained() const;

  const Corpus& corpus() const { return corpus_; }
  std::size_t assigned_reviewers() const { return assigned_; }

  static ReviewState replay(Corpus corpus, std::size_t assigned_reviewers, std::span<const Vote> log);

 private:
  Corpus corpus_;
  std::size_t assigned_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::size_t> order_by_id_;
  // sample_id -> reviewer_id -> verdict
  std::map<std::string, std::map<std::string, int>, std::less<>> votes_;
};

struct ReviewServiceOptions {
  std::filesystem::path vote_log;
  std::filesystem::path feedback_log;  // defaults to <vote_log>.feedback.jsonl
  std::size_t assigned_reviewers = 3;
};

// HTTP + JSON review API under /api/v1. Votes are durably appended to the
// vote log before the response is sent; reads take a shared lock and see
// every acknowledged write.
class ReviewService {
 public:
  ReviewService(Corpus corpus, ReviewServiceOptions options);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  // Blocks until stop(). Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port; returns it. Pair with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

  ReviewState snapshot() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace posmed
