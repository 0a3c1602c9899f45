#include "posmed/review.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <set>

#include "posmed/text.hpp"

namespace posmed {
namespace {

using json = nlohmann::ordered_json;

void check_verdict(const Vote& v) {
  if (v.verdict != 0 && v.verdict != 1) {
    throw VoteError("verdict must be 0 or 1, got " + std::to_string(v.verdict));
  }
}

}  // namespace

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Retained: return "retained";
    case Outcome::Rejected: return "rejected";
    case Outcome::Pending: return "pending";
  }
  return "pending";
}

std::string_view feedback_category_name(FeedbackCategory c) {
  switch (c) {
    case FeedbackCategory::Ambiguity: return "ambiguity";
    case FeedbackCategory::ClinicalClarity: return "clinical-clarity";
    case FeedbackCategory::Bias: return "bias";
    case FeedbackCategory::Other: return "other";
  }
  return "other";
}

std::optional<FeedbackCategory> feedback_category_from_name(std::string_view name) {
  for (auto c : {FeedbackCategory::Ambiguity, FeedbackCategory::ClinicalClarity, FeedbackCategory::Bias,
                 FeedbackCategory::Other}) {
    if (feedback_category_name(c) == name) return c;
  }
  return std::nullopt;
}

std::vector<Vote> effective_votes(std::span<const Vote> log) {
  std::vector<Vote> out;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  for (const Vote& v : log) {
    const auto key = std::make_pair(v.sample_id, v.reviewer_id);
    if (auto it = slot.find(key); it != slot.end()) {
      out[it->second] = v;
    } else {
      slot.emplace(key, out.size());
      out.push_back(v);
    }
  }
  return out;
}

ReviewDecision decide(std::string_view sample_id, std::span<const Vote> votes, std::size_t assigned_reviewers) {
  if (assigned_reviewers == 0) throw std::invalid_argument("assigned_reviewers must be >= 1");
  for (const Vote& v : votes) {
    if (v.sample_id != sample_id) {
      throw VoteError("vote for '" + v.sample_id + "' passed to decision for '" + std::string(sample_id) + "'");
    }
    check_verdict(v);
  }
  const std::vector<Vote> effective = effective_votes(votes);
  if (effective.size() > assigned_reviewers) {
    throw VoteError("sample '" + std::string(sample_id) + "' has votes from " + std::to_string(effective.size()) +
                    " reviewers but only " + std::to_string(assigned_reviewers) + " are assigned");
  }
  ReviewDecision d;
  d.sample_id = std::string(sample_id);
  d.total_votes = effective.size();
  d.qualified_votes = static_cast<std::size_t>(
      std::count_if(effective.begin(), effective.end(), [](const Vote& v) { return v.verdict == 1; }));
  if (d.total_votes < assigned_reviewers) {
    d.outcome = Outcome::Pending;
  } else {
    d.outcome = 2 * d.qualified_votes > assigned_reviewers ? Outcome::Retained : Outcome::Rejected;
  }
  return d;
}

std::vector<ReviewDecision> decide_all(const Corpus& corpus, std::span<const Vote> log,
                                       std::size_t assigned_reviewers, std::size_t* orphans) {
  std::map<std::string, std::vector<Vote>, std::less<>> by_sample;
  for (const Vote& v : log) by_sample[v.sample_id].push_back(v);
  std::vector<ReviewDecision> out;
  out.reserve(corpus.records.size());
  std::size_t matched = 0;
  for (const SampleRecord& r : corpus.records) {
    const auto it = by_sample.find(r.sample_id);
    if (it == by_sample.end()) {
      out.push_back(decide(r.sample_id, {}, assigned_reviewers));
    } else {
      matched += it->second.size();
      out.push_back(decide(r.sample_id, it->second, assigned_reviewers));
    }
  }
  if (orphans) *orphans = log.size() - matched;
  return out;
}

ApplyResult apply_votes(const Corpus& corpus, std::span<const ReviewDecision> decisions) {
  std::map<std::string_view, Outcome> outcome;
  for (const ReviewDecision& d : decisions) outcome[d.sample_id] = d.outcome;
  ApplyResult result{{corpus.header, {}}, {corpus.header, {}}, {corpus.header, {}}};
  for (const SampleRecord& r : corpus.records) {
    const auto it = outcome.find(r.sample_id);
    const Outcome o = it == outcome.end() ? Outcome::Pending : it->second;
    switch (o) {
      case Outcome::Retained: result.retained.records.push_back(r); break;
      case Outcome::Rejected: result.rejected.records.push_back(r); break;
      case Outcome::Pending: result.pending.records.push_back(r); break;
    }
  }
  return result;
}

std::string vote_json(const Vote& v) {
  return json{{"sample_id", v.sample_id}, {"reviewer_id", v.reviewer_id}, {"verdict", v.verdict},
              {"timestamp", v.timestamp}}
      .dump();
}

Vote parse_vote(std::string_view line) {
  try {
    const json j = json::parse(line);
    Vote v;
    v.sample_id = j.at("sample_id").get<std::string>();
    v.reviewer_id = j.at("reviewer_id").get<std::string>();
    const json& verdict = j.at("verdict");
    if (!verdict.is_number_integer()) throw VoteError("verdict must be the integer 0 or 1");
    v.verdict = verdict.get<int>();
    v.timestamp = j.value("timestamp", std::string{});
    if (v.sample_id.empty() || v.reviewer_id.empty()) throw VoteError("sample_id and reviewer_id must be nonempty");
    check_verdict(v);
    return v;
  } catch (const json::exception& e) {
    throw VoteError(std::string("malformed vote: ") + e.what());
  }
}

std::vector<Vote> read_vote_log(const std::filesystem::path& path) {
  std::vector<Vote> out;
  if (!std::filesystem::exists(path)) return out;
  const std::string contents = read_file(path);
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < contents.size()) {
    std::size_t end = contents.find('\n', start);
    if (end == std::string::npos) end = contents.size();
    const std::string_view line(contents.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (text::collapse_whitespace(line).empty()) continue;
    try {
      out.push_back(parse_vote(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string feedback_json(const FeedbackNote& note) {
  return json{{"sample_id", note.sample_id},
              {"reviewer_id", note.reviewer_id},
              {"category", feedback_category_name(note.category)},
              {"text", note.text}}
      .dump();
}

std::string decision_json(const ReviewDecision& d) {
  return json{{"sample_id", d.sample_id},
              {"qualified_votes", d.qualified_votes},
              {"total_votes", d.total_votes},
              {"outcome", outcome_name(d.outcome)}}
      .dump();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

AppendLog::AppendLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StorageError("cannot open log '" + path_.string() + "': " + std::strerror(errno));
}

AppendLog::~AppendLog() {
  if (fd_ >= 0) ::close(fd_);
}

void AppendLog::append_line(std::string_view line) {
  std::string buf(line);
  buf.push_back('\n');
  const off_t before = ::lseek(fd_, 0, SEEK_END);
  if (before < 0) throw StorageError("cannot seek log '" + path_.string() + "': " + std::strerror(errno));
  std::size_t written = 0;
  while (written < buf.size()) {
    const ssize_t n = ::write(fd_, buf.data() + written, buf.size() - written);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      const int err = errno;
      [[maybe_unused]] const int rc = ::ftruncate(fd_, before);
      throw StorageError("write to '" + path_.string() + "' failed: " + std::strerror(err));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) {
    const int err = errno;
    [[maybe_unused]] const int rc = ::ftruncate(fd_, before);
    throw StorageError("fsync of '" + path_.string() + "' failed: " + std::strerror(err));
  }
}

// ---------------------------------------------------------------------------

ReviewState::ReviewState(Corpus corpus, std::size_t assigned_reviewers)
    : corpus_(std::move(corpus)), assigned_(assigned_reviewers) {
  if (assigned_ == 0) throw std::invalid_argument("assigned_reviewers must be >= 1");
  for (std::size_t i = 0; i < corpus_.records.size(); ++i) {
    if (!index_.emplace(corpus_.records[i].sample_id, i).second) {
      throw DataError("duplicate sample_id '" + corpus_.records[i].sample_id + "' in corpus");
    }
  }
  for (const auto& [id, i] : index_) order_by_id_.push_back(i);
}

void ReviewState::check_vote(const Vote& vote) const {
  check_verdict(vote);
  if (!find(vote.sample_id)) throw DataError("unknown sample '" + vote.sample_id + "'");
  const auto it = votes_.find(vote.sample_id);
  if (it == votes_.end()) return;
  if (!it->second.contains(vote.reviewer_id) && it->second.size() >= assigned_) {
    throw VoteError("sample '" + vote.sample_id + "' already has votes from all " + std::to_string(assigned_) +
                    " assigned reviewers");
  }
}

ReviewDecision ReviewState::record(const Vote& vote) {
  votes_[vote.sample_id][vote.reviewer_id] = vote.verdict;
  return decision(vote.sample_id);
}

ReviewDecision ReviewState::decision(std::string_view sample_id) const {
  std::vector<Vote> votes;
  if (const auto it = votes_.find(sample_id); it != votes_.end()) {
    for (const auto& [reviewer, verdict] : it->second) votes.push_back({std::string(sample_id), reviewer, verdict, {}});
  }
  return decide(sample_id, votes, assigned_);
}

std::vector<ReviewDecision> ReviewState::decisions() const {
  std::vector<ReviewDecision> out;
  out.reserve(corpus_.records.size());
  for (const SampleRecord& r : corpus_.records) out.push_back(decision(r.sample_id));
  return out;
}

ReviewProgress ReviewState::progress() const {
  ReviewProgress p;
  for (const ReviewDecision& d : decisions()) {
    switch (d.outcome) {
      case Outcome::Retained: ++p.retained; break;
      case Outcome::Rejected: ++p.rejected; break;
      case Outcome::Pending: ++p.pending; break;
    }
  }
  for (const auto& [sample, by_reviewer] : votes_)
    for (const auto& [reviewer, verdict] : by_reviewer) ++p.per_reviewer[reviewer];
  return p;
}

const SampleRecord* ReviewState::find(std::string_view sample_id) const {
  const auto it = index_.find(sample_id);
  return it == index_.end() ? nullptr : &corpus_.records[it->second];
}

const SampleRecord* ReviewState::next_for(std::string_view reviewer_id) const {
  for (std::size_t i : order_by_id_) {
    const SampleRecord& r = corpus_.records[i];
    const auto it = votes_.find(r.sample_id);
    if (it == votes_.end()) return &r;
    const auto& by_reviewer = it->second;
    if (by_reviewer.find(std::string(reviewer_id)) != by_reviewer.end()) continue;
    if (by_reviewer.size() >= assigned_) continue;
    return &r;
  }
  return nullptr;
}

std::string ReviewState::export_retained() const {
  return serialize_corpus(apply_votes(corpus_, decisions()).retained);
}

ReviewState ReviewState::replay(Corpus corpus, std::size_t assigned_reviewers, std::span<const Vote> log) {
  ReviewState state(std::move(corpus), assigned_reviewers);
  for (const Vote& v : log) {
    try {
      state.check_vote(v);
    } catch (const DataError&) {
      continue;
    }
    state.record(v);
  }
  return state;
}

}  // namespace posmed
