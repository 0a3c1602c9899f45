#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posmed/corpus.hpp"
#include "posmed/mask_geometry.hpp"

namespace posmed {

struct SegScore {
  double dice = 0.0;
  double iou = 0.0;
};

// Score assigned when prediction and ground truth are both empty.
enum class EmptyPairPolicy : std::uint8_t { ScoreOne, ScoreZero };

// Throws DataError on dimension mismatch.
SegScore dice_iou(const BinaryMask& pred, const BinaryMask& gt,
                  EmptyPairPolicy empty = EmptyPairPolicy::ScoreOne);

std::vector<std::string> rouge_tokens(std::string_view s);
// ROUGE-L F1 over casefolded, punctuation-stripped whitespace tokens.
double rouge_l(std::string_view candidate, std::string_view reference);
double rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// nullopt means UNPARSEABLE: no zone phrase, or phrases naming more than one
// distinct zone.
std::optional<Zone> extract_zone(std::string_view answer);

struct Prediction {
  std::string sample_id;
  std::string mask_path;
  std::string answer;
};

std::vector<Prediction> parse_predictions(std::string_view jsonl, std::string_view origin = "<memory>");
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

struct GroupScore {
  std::size_t samples = 0;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  double mean_rouge = 0.0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct SampleScore {
  std::string sample_id;
  Modality modality = Modality::Rgb;
  SegScore seg;
  double rouge = 0.0;
  std::optional<Zone> claimed;
  bool correct = false;
};

struct EvalReport {
  std::size_t predictions = 0;
  std::vector<std::string> unmatched;
  EmptyPairPolicy empty_policy = EmptyPairPolicy::ScoreOne;
  std::map<Modality, GroupScore> by_modality;
  GroupScore overall;
  std::vector<SampleScore> samples;  // sorted by sample_id
};

struct EvalOptions {
  EmptyPairPolicy empty_policy = EmptyPairPolicy::ScoreOne;
  std::size_t jobs = 1;
};

// ROUGE is scored against every reference answer of the sample and the best
// match is kept. UNPARSEABLE answers count as incorrect.
EvalReport evaluate_run(std::span<const Prediction> predictions, std::span<const SampleRecord> corpus,
                        const EvalOptions& options = {});

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace posmed
