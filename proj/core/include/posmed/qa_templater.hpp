#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posmed/mask_geometry.hpp"

namespace posmed {

inline constexpr std::string_view kNamePlaceholder = "<name>";
inline constexpr std::string_view kPositionPlaceholder = "<position>";

struct QaTemplate {
  std::string id;
  std::string question;
  std::string answer;
  std::string style;
};

struct QaPair {
  std::string question;
  std::string answer;
  std::string template_id;
  std::string target_name;
  Zone zone = Zone::Invalid;

  friend bool operator==(const QaPair&, const QaPair&) = default;
};

// Canonical rendering used when generating answers. Generation uses only
// these phrases; the liberal synonym lexicon lives in metrics.
std::string_view zone_phrase(Zone zone);

// Throws DataError when a template carries an unknown <...> token, lacks
// <position> in its answer, or lacks <name> in both texts.
void validate_template(const QaTemplate& tmpl);

std::vector<QaTemplate> parse_templates(std::string_view jsonl, std::string_view origin = "<memory>");
std::vector<QaTemplate> load_templates(const std::filesystem::path& path);

QaPair instantiate(const QaTemplate& tmpl, std::string_view target_name, Zone zone);

// Canonical phrases present in `answer`, scanned case-insensitively.
std::vector<Zone> canonical_zones_in(std::string_view answer);

// casefold + whitespace collapse + terminal punctuation strip of question and
// answer, joined by a unit separator.
std::string dedupe_key(const QaPair& pair);
std::vector<QaPair> dedupe(std::span<const QaPair> pairs);

struct PolishClientConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8088/polish
  bool enabled = false;
  std::chrono::milliseconds timeout{5000};
  std::size_t max_in_flight = 4;
};

struct PolishOutcome {
  QaPair pair;
  std::optional<std::string> warning;
};

// Identity when disabled. When enabled, POSTs {"question","answer"} to the
// endpoint and keeps the rewrite only if the answer still carries exactly
// the pair's canonical zone phrase and no placeholder. Network failures fall
// back to the input pair with a warning.
PolishOutcome polish(const QaPair& pair, const PolishClientConfig& client);

// Bounded-concurrency batch form; outcomes are returned in input order.
std::vector<PolishOutcome> polish_all(std::span<const QaPair> pairs, const PolishClientConfig& client);

}  // namespace posmed
