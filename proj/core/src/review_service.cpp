#include <httplib.h>
#include <json.hpp>

#include <shared_mutex>

#include "posmed/review.hpp"

namespace posmed {
namespace {

using json = nlohmann::ordered_json;

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, std::string_view code, std::string_view detail) {
  reply(res, status, json{{"error", code}, {"detail", detail}});
}

std::string sample_url(const std::string& id) {
  return "/api/v1/samples/" + httplib::detail::encode_url(id);
}

json sample_payload(const SampleRecord& r) {
  return json{{"sample", json::parse(record_json(r))},
              {"image_url", sample_url(r.sample_id) + "/image"},
              {"mask_url", sample_url(r.sample_id) + "/mask"}};
}

json decision_payload(const ReviewDecision& d) { return json::parse(decision_json(d)); }

void send_file(httplib::Response& res, const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError& e) {
    reply_error(res, 404, "file_not_found", e.what());
    return;
  }
  const bool png = bytes.size() > 4 && bytes.compare(1, 3, "PNG") == 0;
  res.set_content(std::move(bytes), png ? "image/png" : "image/x-portable-graymap");
}

}  // namespace

struct ReviewService::Impl {
  Impl(Corpus corpus, ReviewServiceOptions opts)
      : options(std::move(opts)),
        votes(options.vote_log),
        feedback(options.feedback_log.empty() ? std::filesystem::path(options.vote_log.string() + ".feedback.jsonl")
                                              : options.feedback_log),
        state(ReviewState::replay(std::move(corpus), options.assigned_reviewers, read_vote_log(options.vote_log))) {
    routes();
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/api/v1/queue/next", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string reviewer = req.get_param_value("reviewer");
      if (reviewer.empty()) return reply_error(res, 400, "missing_reviewer", "query parameter 'reviewer' is required");
      std::shared_lock lock(mu);
      const SampleRecord* next = state.next_for(reviewer);
      if (!next) return reply(res, 200, json{{"empty", true}});
      reply(res, 200, sample_payload(*next));
    });

    server.Get(R"(/api/v1/samples/(.+)/(image|mask))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(mu);
      const SampleRecord* r = state.find(req.matches[1].str());
      if (!r) {
        // The id itself may end in "/image" or "/mask".
        if (const SampleRecord* whole = state.find(req.matches[1].str() + "/" + req.matches[2].str())) {
          return reply(res, 200, with_decision(*whole));
        }
        return reply_error(res, 404, "unknown_sample", req.matches[1].str());
      }
      send_file(res, req.matches[2] == "image" ? r->image_path : r->mask_path);
    });

    server.Get(R"(/api/v1/samples/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(mu);
      const SampleRecord* r = state.find(req.matches[1].str());
      if (!r) return reply_error(res, 404, "unknown_sample", req.matches[1].str());
      reply(res, 200, with_decision(*r));
    });

    server.Post("/api/v1/votes", [this](const httplib::Request& req, httplib::Response& res) {
      Vote vote;
      try {
        vote = parse_vote(req.body);
      } catch (const DataError& e) {
        return reply_error(res, 400, "malformed_vote", e.what());
      }
      if (vote.timestamp.empty()) vote.timestamp = utc_timestamp();
      std::unique_lock lock(mu);
      try {
        state.check_vote(vote);
      } catch (const VoteError& e) {
        return reply_error(res, 409, "unassigned_reviewer", e.what());
      } catch (const DataError& e) {
        return reply_error(res, 404, "unknown_sample", e.what());
      }
      try {
        votes.append_line(vote_json(vote));
      } catch (const StorageError& e) {
        return reply_error(res, 500, "storage_error", e.what());
      }
      reply(res, 200, json{{"decision", decision_payload(state.record(vote))}});
    });

    server.Post("/api/v1/feedback", [this](const httplib::Request& req, httplib::Response& res) {
      FeedbackNote note;
      try {
        const json j = json::parse(req.body);
        note.sample_id = j.at("sample_id").get<std::string>();
        note.reviewer_id = j.at("reviewer_id").get<std::string>();
        note.text = j.at("text").get<std::string>();
        const std::string category = j.value("category", std::string("other"));
        const auto c = feedback_category_from_name(category);
        if (!c) return reply_error(res, 400, "malformed_feedback", "unknown category '" + category + "'");
        note.category = *c;
      } catch (const json::exception& e) {
        return reply_error(res, 400, "malformed_feedback", e.what());
      }
      std::unique_lock lock(mu);
      if (!state.find(note.sample_id)) return reply_error(res, 404, "unknown_sample", note.sample_id);
      try {
        feedback.append_line(feedback_json(note));
      } catch (const StorageError& e) {
        return reply_error(res, 500, "storage_error", e.what());
      }
      reply(res, 200, json{{"ok", true}});
    });

    server.Get("/api/v1/progress", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(mu);
      const ReviewProgress p = state.progress();
      json per = json::object();
      for (const auto& [reviewer, n] : p.per_reviewer) per[reviewer] = n;
      reply(res, 200,
            json{{"retained", p.retained}, {"rejected", p.rejected}, {"pending", p.pending}, {"per_reviewer", per}});
    });

    server.Get("/api/v1/export", [this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(mu);
      res.set_content(state.export_retained(), "application/x-ndjson");
    });
  }

  json with_decision(const SampleRecord& r) const {
    json j = sample_payload(r);
    j["decision"] = decision_payload(state.decision(r.sample_id));
    return j;
  }

  ReviewServiceOptions options;
  AppendLog votes;
  AppendLog feedback;
  mutable std::shared_mutex mu;
  ReviewState state;
  httplib::Server server;
};

ReviewService::ReviewService(Corpus corpus, ReviewServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(corpus), std::move(options))) {}

ReviewService::~ReviewService() { stop(); }

bool ReviewService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int ReviewService::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool ReviewService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void ReviewService::wait_until_ready() const { impl_->server.wait_until_ready(); }

void ReviewService::stop() {
  if (impl_) impl_->server.stop();
}

ReviewState ReviewService::snapshot() const {
  std::shared_lock lock(impl_->mu);
  return impl_->state;
}

}  // namespace posmed
