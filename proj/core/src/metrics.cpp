#include "posmed/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "posmed/error.hpp"
#include "posmed/parallel.hpp"
#include "posmed/text.hpp"

namespace posmed {
namespace {

using json = nlohmann::ordered_json;

struct LexiconEntry {
  std::vector<std::string> words;
  Zone zone;
};

// Accepted zone phrasings for parsing free text. Longer phrases come first so
// "near the center" is consumed as one claim.
const std::vector<LexiconEntry>& lexicon() {
  static const std::vector<LexiconEntry> kLexicon = [] {
    std::vector<LexiconEntry> l;
    auto add = [&](std::string_view phrase, Zone z) { l.push_back({text::word_tokens(phrase), z}); };
    add("near the center", Zone::Center);
    add("near the centre", Zone::Center);
    add("near the middle", Zone::Center);
    for (std::string_view v : {"top", "upper"}) {
      add(std::string(v) + " left", Zone::TL);
      add(std::string(v) + " right", Zone::TR);
      add("left " + std::string(v), Zone::TL);
      add("right " + std::string(v), Zone::TR);
    }
    for (std::string_view v : {"bottom", "lower"}) {
      add(std::string(v) + " left", Zone::BL);
      add(std::string(v) + " right", Zone::BR);
      add("left " + std::string(v), Zone::BL);
      add("right " + std::string(v), Zone::BR);
    }
    for (std::string_view w : {"topleft", "upperleft"}) add(w, Zone::TL);
    for (std::string_view w : {"topright", "upperright"}) add(w, Zone::TR);
    for (std::string_view w : {"bottomleft", "lowerleft"}) add(w, Zone::BL);
    for (std::string_view w : {"bottomright", "lowerright"}) add(w, Zone::BR);
    for (std::string_view w : {"center", "centre", "central", "centrally", "middle"}) add(w, Zone::Center);
    std::stable_sort(l.begin(), l.end(),
                     [](const LexiconEntry& a, const LexiconEntry& b) { return a.words.size() > b.words.size(); });
    return l;
  }();
  return kLexicon;
}

GroupScore finish(GroupScore g, double dice, double iou, double rouge) {
  if (g.samples) {
    const double n = static_cast<double>(g.samples);
    g.mean_dice = dice / n;
    g.mean_iou = iou / n;
    g.mean_rouge = rouge / n;
    g.accuracy = static_cast<double>(g.correct) / n;
  }
  return g;
}

json group_json(const GroupScore& g) {
  return json{{"samples", g.samples},   {"mdice", g.mean_dice}, {"miou", g.mean_iou},
              {"rouge_l", g.mean_rouge}, {"correct", g.correct}, {"accuracy", g.accuracy}};
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

SegScore dice_iou(const BinaryMask& pred, const BinaryMask& gt, EmptyPairPolicy empty) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DataError("mask dimension mismatch: prediction " + std::to_string(pred.height()) + "x" +
                    std::to_string(pred.width()) + " vs ground truth " + std::to_string(gt.height()) + "x" +
                    std::to_string(gt.width()));
  }
  std::size_t inter = 0;
  std::size_t p = 0;
  std::size_t g = 0;
  const auto& pc = pred.cells();
  const auto& gc = gt.cells();
  for (std::size_t i = 0; i < pc.size(); ++i) {
    p += pc[i];
    g += gc[i];
    inter += pc[i] & gc[i];
  }
  if (p + g == 0) {
    const double v = empty == EmptyPairPolicy::ScoreOne ? 1.0 : 0.0;
    return {v, v};
  }
  const double i = static_cast<double>(inter);
  return {2.0 * i / static_cast<double>(p + g), i / static_cast<double>(p + g - inter)};
}

std::vector<std::string> rouge_tokens(std::string_view s) { return text::word_tokens(s); }

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l_tokens(rouge_tokens(candidate), rouge_tokens(reference));
}

std::optional<Zone> extract_zone(std::string_view answer) {
  const std::vector<std::string> tokens = text::word_tokens(answer);
  std::set<Zone> found;
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t advance = 1;
    for (const LexiconEntry& e : lexicon()) {
      if (i + e.words.size() > tokens.size()) continue;
      if (std::equal(e.words.begin(), e.words.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
        found.insert(e.zone);
        advance = e.words.size();
        break;
      }
    }
    i += advance;
  }
  if (found.size() != 1) return std::nullopt;
  return *found.begin();
}

std::vector<Prediction> parse_predictions(std::string_view jsonl, std::string_view origin) {
  std::vector<Prediction> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (text::collapse_whitespace(line).empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("sample_id").get<std::string>(), j.at("mask").get<std::string>(),
                     j.at("answer").get<std::string>()});
    } catch (const json::exception& e) {
      throw DataError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path), path.string());
}

EvalReport evaluate_run(std::span<const Prediction> predictions, std::span<const SampleRecord> corpus,
                        const EvalOptions& options) {
  std::unordered_map<std::string_view, const SampleRecord*> by_id;
  for (const SampleRecord& r : corpus) by_id.emplace(r.sample_id, &r);

  EvalReport report;
  report.predictions = predictions.size();
  report.empty_policy = options.empty_policy;

  std::vector<std::pair<const Prediction*, const SampleRecord*>> matched;
  std::set<std::string_view> seen;
  for (const Prediction& p : predictions) {
    const auto it = by_id.find(p.sample_id);
    if (it == by_id.end()) {
      report.unmatched.push_back(p.sample_id);
      continue;
    }
    if (!seen.insert(p.sample_id).second) throw DataError("duplicate prediction for sample '" + p.sample_id + "'");
    matched.emplace_back(&p, it->second);
  }
  std::sort(report.unmatched.begin(), report.unmatched.end());
  std::sort(matched.begin(), matched.end(),
            [](const auto& a, const auto& b) { return a.second->sample_id < b.second->sample_id; });

  report.samples.resize(matched.size());
  parallel_for(matched.size(), options.jobs, [&](std::size_t i) {
    const auto& [pred, rec] = matched[i];
    SampleScore& s = report.samples[i];
    s.sample_id = rec->sample_id;
    s.modality = rec->modality;
    try {
      s.seg = dice_iou(BinaryMask::load(pred->mask_path), BinaryMask::load(rec->mask_path), options.empty_policy);
    } catch (const DataError& e) {
      throw DataError("sample '" + rec->sample_id + "': " + e.what());
    }
    const auto cand = rouge_tokens(pred->answer);
    for (const QaPair& qa : rec->qa) s.rouge = std::max(s.rouge, rouge_l_tokens(cand, rouge_tokens(qa.answer)));
    s.claimed = extract_zone(pred->answer);
    s.correct = s.claimed == rec->zone;
  });

  struct Sums {
    GroupScore g;
    double dice = 0, iou = 0, rouge = 0;
    void add(const SampleScore& s) {
      ++g.samples;
      g.correct += s.correct;
      dice += s.seg.dice;
      iou += s.seg.iou;
      rouge += s.rouge;
    }
  };
  std::map<Modality, Sums> groups;
  Sums all;
  for (const SampleScore& s : report.samples) {
    groups[s.modality].add(s);
    all.add(s);
  }
  for (const auto& [m, sums] : groups) report.by_modality[m] = finish(sums.g, sums.dice, sums.iou, sums.rouge);
  report.overall = finish(all.g, all.dice, all.iou, all.rouge);
  return report;
}

std::string report_json(const EvalReport& r) {
  json header = {{"predictions", r.predictions},
                 {"scored", r.overall.samples},
                 {"unmatched_count", r.unmatched.size()},
                 {"unmatched", r.unmatched},
                 {"empty_pair_score", r.empty_policy == EmptyPairPolicy::ScoreOne ? 1.0 : 0.0},
                 {"text_metric", "rouge-l-f1"},
                 {"accuracy_rule", "zone-lexicon-extraction; unparseable counts as incorrect"}};
  json by = json::object();
  for (const auto& [m, g] : r.by_modality) by[std::string(modality_name(m))] = group_json(g);
  return json{{"header", header}, {"by_modality", by}, {"overall", group_json(r.overall)}}.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "predictions " << r.predictions << ", scored " << r.overall.samples << ", unmatched " << r.unmatched.size()
     << ", empty-pair score " << (r.empty_policy == EmptyPairPolicy::ScoreOne ? "1" : "0") << "\n";
  for (const auto& id : r.unmatched) os << "  unmatched: " << id << "\n";
  os << "\n"
     << std::left << std::setw(12) << "modality" << std::right << std::setw(8) << "n" << std::setw(9) << "mDice"
     << std::setw(9) << "mIoU" << std::setw(9) << "ROUGE-L" << std::setw(9) << "ACC%" << "\n";
  auto row = [&](std::string_view name, const GroupScore& g) {
    os << std::left << std::setw(12) << name << std::right << std::setw(8) << g.samples << std::setw(9)
       << fixed(g.mean_dice, 4) << std::setw(9) << fixed(g.mean_iou, 4) << std::setw(9) << fixed(g.mean_rouge, 4)
       << std::setw(9) << fixed(100.0 * g.accuracy, 2) << "\n";
  };
  for (const auto& [m, g] : r.by_modality) row(modality_name(m), g);
  row("overall", r.overall);
  return os.str();
}

}  // namespace posmed
