#include "posmed/qa_templater.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_set>

#include "posmed/corpus.hpp"
#include "posmed/error.hpp"
#include "posmed/parallel.hpp"
#include "posmed/text.hpp"

namespace posmed {
namespace {

using nlohmann::json;

struct PlaceholderToken {
  std::size_t pos;
  std::string_view token;
};

std::vector<PlaceholderToken> placeholder_tokens(std::string_view s) {
  std::vector<PlaceholderToken> out;
  for (std::size_t i = s.find('<'); i != std::string_view::npos; i = s.find('<', i + 1)) {
    const std::size_t close = s.find_first_of("<>\n", i + 1);
    if (close == std::string_view::npos || s[close] != '>') continue;
    out.push_back({i, s.substr(i, close - i + 1)});
  }
  return out;
}

std::size_t count_token(std::string_view s, std::string_view token) {
  std::size_t n = 0;
  for (const auto& t : placeholder_tokens(s)) n += t.token == token;
  return n;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Position rendering. The center phrase already carries its preposition, so
// a leading "in the" / "at the" / ... before the placeholder is absorbed.
std::string render_position(std::string_view text, Zone zone) {
  const std::string_view phrase = zone_phrase(zone);
  std::string out;
  std::size_t cursor = 0;
  for (std::size_t at = text.find(kPositionPlaceholder); at != std::string_view::npos;
       at = text.find(kPositionPlaceholder, cursor)) {
    std::string_view before = text.substr(cursor, at - cursor);
    bool capitalize = false;
    if (zone == Zone::Center) {
      static constexpr std::string_view kAbsorbed[] = {"in the ", "at the ", "on the ", "within the ",
                                                       "to the ", "the "};
      const std::string lowered = text::casefold(before);
      for (std::string_view prefix : kAbsorbed) {
        if (lowered.size() < prefix.size() ||
            lowered.compare(lowered.size() - prefix.size(), prefix.size(), prefix) != 0) {
          continue;
        }
        const std::size_t start = before.size() - prefix.size();
        if (start > 0 && is_word_char(before[start - 1])) continue;
        capitalize = std::isupper(static_cast<unsigned char>(before[start])) != 0;
        before = before.substr(0, start);
        break;
      }
    }
    out.append(before);
    if (!capitalize) {
      // Sentence-initial placeholders render capitalized.
      const std::size_t last = out.find_last_not_of(" \t");
      capitalize = last == std::string::npos ||
                   ((out[last] == '.' || out[last] == '!' || out[last] == '?') && last + 1 < out.size());
    }
    std::string rendered(phrase);
    if (capitalize) rendered[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(rendered[0])));
    out.append(rendered);
    cursor = at + kPositionPlaceholder.size();
  }
  out.append(text.substr(cursor));
  return out;
}

std::string replace_all(std::string_view text, std::string_view token, std::string_view value) {
  std::string out;
  std::size_t cursor = 0;
  for (std::size_t at = text.find(token); at != std::string_view::npos; at = text.find(token, cursor)) {
    out.append(text.substr(cursor, at - cursor));
    out.append(value);
    cursor = at + token.size();
  }
  out.append(text.substr(cursor));
  return out;
}

bool has_placeholder(std::string_view s) {
  return count_token(s, kNamePlaceholder) > 0 || count_token(s, kPositionPlaceholder) > 0;
}

// The single zone named by canonical phrases in `answer`, if exactly one.
std::optional<Zone> sole_canonical_zone(std::string_view answer) {
  const auto zones = canonical_zones_in(answer);
  const std::set<Zone> distinct(zones.begin(), zones.end());
  if (distinct.size() != 1) return std::nullopt;
  return *distinct.begin();
}

std::string normalize_for_key(std::string_view s) {
  return text::strip_terminal_punctuation(text::collapse_whitespace(text::casefold(s)));
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("polish endpoint must be a URL: " + url);
  const std::size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::string_view zone_phrase(Zone zone) {
  switch (zone) {
    case Zone::TL: return "top left";
    case Zone::TR: return "top right";
    case Zone::BL: return "bottom left";
    case Zone::BR: return "bottom right";
    case Zone::Center: return "near the center";
    case Zone::Invalid: break;
  }
  throw std::invalid_argument("zone INVALID has no phrase");
}

void validate_template(const QaTemplate& tmpl) {
  const std::string where = "template '" + tmpl.id + "'";
  if (tmpl.id.empty()) throw DataError("template with empty id");
  if (tmpl.question.empty() || tmpl.answer.empty()) throw DataError(where + ": empty question or answer");
  for (std::string_view field : {std::string_view(tmpl.question), std::string_view(tmpl.answer)}) {
    for (const auto& t : placeholder_tokens(field)) {
      if (t.token != kNamePlaceholder && t.token != kPositionPlaceholder) {
        throw DataError(where + ": unknown placeholder " + std::string(t.token));
      }
    }
  }
  if (count_token(tmpl.answer, kPositionPlaceholder) == 0) {
    throw DataError(where + ": answer lacks <position>");
  }
  if (count_token(tmpl.question, kNamePlaceholder) + count_token(tmpl.answer, kNamePlaceholder) == 0) {
    throw DataError(where + ": neither question nor answer mentions <name>");
  }
}

std::vector<QaTemplate> parse_templates(std::string_view jsonl, std::string_view origin) {
  std::vector<QaTemplate> out;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (text::collapse_whitespace(line).empty()) continue;
    const std::string loc = std::string(origin) + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
      QaTemplate t{j.at("id").get<std::string>(), j.at("question").get<std::string>(),
                   j.at("answer").get<std::string>(), j.value("style", std::string{})};
      validate_template(t);
      if (!ids.insert(t.id).second) throw DataError("duplicate template id '" + t.id + "'");
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw DataError(loc + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(loc + ": " + e.what());
    }
  }
  return out;
}

std::vector<QaTemplate> load_templates(const std::filesystem::path& path) {
  return parse_templates(read_file(path), path.string());
}

QaPair instantiate(const QaTemplate& tmpl, std::string_view target_name, Zone zone) {
  if (zone == Zone::Invalid) throw std::invalid_argument("cannot instantiate a template for zone INVALID");
  if (target_name.empty()) throw std::invalid_argument("target name must be nonempty");
  validate_template(tmpl);

  auto fill = [&](std::string_view s) {
    return render_position(replace_all(s, kNamePlaceholder, target_name), zone);
  };
  QaPair pair{fill(tmpl.question), fill(tmpl.answer), tmpl.id, std::string(target_name), zone};
  if (has_placeholder(pair.question) || has_placeholder(pair.answer)) {
    throw DataError("template '" + tmpl.id + "': placeholder survived substitution");
  }
  if (sole_canonical_zone(pair.answer) != zone) {
    throw DataError("template '" + tmpl.id + "': answer must name exactly the zone " +
                    std::string(zone_code(zone)));
  }
  return pair;
}

std::vector<Zone> canonical_zones_in(std::string_view answer) {
  const std::string lowered = text::casefold(answer);
  std::vector<std::pair<std::size_t, Zone>> hits;
  for (Zone z : kRealZones) {
    const std::string_view phrase = zone_phrase(z);
    for (std::size_t at = lowered.find(phrase); at != std::string::npos; at = lowered.find(phrase, at + 1)) {
      const bool left_ok = at == 0 || !is_word_char(lowered[at - 1]);
      const std::size_t after = at + phrase.size();
      const bool right_ok = after >= lowered.size() || !is_word_char(lowered[after]);
      if (left_ok && right_ok) hits.emplace_back(at, z);
    }
  }
  std::sort(hits.begin(), hits.end());
  std::vector<Zone> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.second);
  return out;
}

std::string dedupe_key(const QaPair& pair) {
  return normalize_for_key(pair.question) + '\x1f' + normalize_for_key(pair.answer);
}

std::vector<QaPair> dedupe(std::span<const QaPair> pairs) {
  std::vector<QaPair> out;
  std::unordered_set<std::string> seen;
  for (const QaPair& p : pairs) {
    if (seen.insert(dedupe_key(p)).second) out.push_back(p);
  }
  return out;
}

PolishOutcome polish(const QaPair& pair, const PolishClientConfig& client) {
  if (!client.enabled) return {pair, std::nullopt};

  auto fallback = [&](std::string why) {
    return PolishOutcome{pair, "polish skipped for template '" + pair.template_id + "': " + std::move(why)};
  };

  Endpoint ep;
  try {
    ep = split_endpoint(client.endpoint);
  } catch (const std::exception& e) {
    return fallback(e.what());
  }
  httplib::Client http(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(client.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(client.timeout - secs);
  http.set_connection_timeout(secs.count(), usecs.count());
  http.set_read_timeout(secs.count(), usecs.count());
  http.set_write_timeout(secs.count(), usecs.count());

  const json body = {{"question", pair.question}, {"answer", pair.answer}};
  const auto res = http.Post(ep.path, body.dump(), "application/json");
  if (!res) return fallback("request failed: " + httplib::to_string(res.error()));
  if (res->status / 100 != 2) return fallback("endpoint returned HTTP " + std::to_string(res->status));

  QaPair polished = pair;
  try {
    const json reply = json::parse(res->body);
    polished.question = reply.at("question").get<std::string>();
    polished.answer = reply.at("answer").get<std::string>();
  } catch (const json::exception& e) {
    return fallback(std::string("malformed reply: ") + e.what());
  }
  if (polished.question.empty() || polished.answer.empty()) return fallback("empty rewrite");
  if (has_placeholder(polished.question) || has_placeholder(polished.answer)) {
    return fallback("rewrite reintroduced a placeholder");
  }
  if (sole_canonical_zone(polished.answer) != pair.zone) {
    return fallback("rewrite lost the zone phrase '" + std::string(zone_phrase(pair.zone)) + "'");
  }
  return {std::move(polished), std::nullopt};
}

std::vector<PolishOutcome> polish_all(std::span<const QaPair> pairs, const PolishClientConfig& client) {
  std::vector<PolishOutcome> out(pairs.size());
  const std::size_t limit = client.enabled ? std::max<std::size_t>(client.max_in_flight, 1) : 1;
  parallel_for(pairs.size(), limit, [&](std::size_t i) { out[i] = polish(pairs[i], client); });
  return out;
}

}  // namespace posmed
