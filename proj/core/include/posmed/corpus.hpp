#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posmed/mask_geometry.hpp"
#include "posmed/qa_templater.hpp"

namespace posmed {

inline constexpr int kCorpusSchemaVersion = 1;

enum class Modality : std::uint8_t { Ultrasound, Mri, Ct, Xray, Endoscopy, Rgb };
enum class TargetKind : std::uint8_t { Tumor, Anatomy };
enum class Split : std::uint8_t { Train, Test };

inline constexpr Modality kAllModalities[] = {Modality::Ultrasound, Modality::Mri, Modality::Ct,
                                              Modality::Xray, Modality::Endoscopy, Modality::Rgb};

std::string_view modality_name(Modality m);
std::optional<Modality> modality_from_name(std::string_view name);
std::string_view target_kind_name(TargetKind k);
std::optional<TargetKind> target_kind_from_name(std::string_view name);
std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view name);

struct SampleRecord {
  std::string sample_id;
  std::string image_path;
  std::string mask_path;
  Modality modality = Modality::Rgb;
  std::string target_name;
  TargetKind target_kind = TargetKind::Tumor;
  Zone zone = Zone::Invalid;
  BoundingBox bbox;
  std::vector<QaPair> qa;
  Split split = Split::Train;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// First line of every corpus file.
struct CorpusHeader {
  int schema = kCorpusSchemaVersion;
  ZoneConfig zone;
  std::string created_at = "1970-01-01T00:00:00Z";

  friend bool operator==(const CorpusHeader& a, const CorpusHeader& b) {
    return a.schema == b.schema && a.zone.tau == b.zone.tau && a.zone.tau_mode == b.zone.tau_mode &&
           a.created_at == b.created_at;
  }
};

struct Corpus {
  CorpusHeader header;
  std::vector<SampleRecord> records;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// Source adapters

// How image/mask pairs are laid out under a source root.
//
//   PairedDirs:  <root>[/<split>]/images/<stem>.<ext>
//                <root>[/<split>]/masks/<stem><mask_suffix>.<ext>
//   ClassDirs:   <root>[/<split>]/<class>/<stem>.<ext>
//                <root>[/<split>]/<class>/<stem><mask_suffix>*.<ext>   (union of all matches)
//
// <split> directories are named "train" and "test". When absent, every
// sample takes the adapter's default split.
enum class Layout : std::uint8_t { PairedDirs, ClassDirs };

struct SourceAdapter {
  std::string name;
  Modality modality;
  std::string target_name;
  TargetKind target_kind;
  Layout layout = Layout::PairedDirs;
  std::string mask_suffix;
  // Unseen-distribution sources are evaluation only.
  bool test_only = false;
};

std::span<const SourceAdapter> known_adapters();
const SourceAdapter* find_adapter(std::string_view name);
// Paired-dirs adapter carrying the modality's default target vocabulary.
SourceAdapter generic_adapter(Modality modality);

struct IngestOptions {
  ZoneConfig zone;
  std::size_t pairs_per_image = 8;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

enum class QuarantineReason : std::uint8_t { Invalid, DimensionMismatch };
std::string_view quarantine_reason_code(QuarantineReason r);

struct QuarantineEntry {
  std::string sample_id;
  std::string image_path;
  std::string mask_path;
  QuarantineReason reason = QuarantineReason::Invalid;
  std::string detail;
};

struct IngestError {
  std::string sample_id;
  std::string path;
  std::string message;
};

struct IngestResult {
  std::vector<SampleRecord> records;
  std::vector<QuarantineEntry> quarantined;
  std::vector<IngestError> errors;
  // Image files discovered; equals records + quarantined + errors.
  std::size_t files_seen = 0;

  void merge(IngestResult other);
};

IngestResult ingest(const std::filesystem::path& source_root, const SourceAdapter& adapter,
                    const IngestOptions& options, std::span<const QaTemplate> templates);

// A bundle root holds one subdirectory per known adapter name.
IngestResult ingest_bundle(const std::filesystem::path& bundle_root, const IngestOptions& options,
                           std::span<const QaTemplate> templates);

// Picks `count` distinct templates for a sample. Deterministic in
// (seed, sample_id) and independent of the standard library's distributions.
std::vector<std::size_t> choose_templates(std::string_view sample_id, std::uint64_t seed,
                                          std::size_t template_count, std::size_t count);

// ---------------------------------------------------------------------------
// Statistics

struct CorpusManifest {
  std::string created_at;
  ZoneConfig zone;
  std::map<Modality, std::size_t> source_counts;
  std::size_t images = 0;
  std::size_t qa_pairs = 0;
  std::map<TargetKind, double> target_kind_fractions;
  std::map<Zone, std::size_t> zone_histogram;
  std::map<Split, std::size_t> split_counts;

  double modality_share(Modality m) const;
};

// Throws DataError on empty input.
CorpusManifest stats(std::span<const SampleRecord> records, const CorpusHeader& header = {});
std::string manifest_json(const CorpusManifest& manifest);
std::string manifest_table(const CorpusManifest& manifest);

// ---------------------------------------------------------------------------
// Persistence

std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(std::string_view jsonl, std::string_view origin = "<memory>");
void export_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

std::string record_json(const SampleRecord& record);
SampleRecord parse_record(std::string_view line);

std::string serialize_quarantine(const IngestResult& result);

// Dedupes each record's QA list in place.
void dedupe_records(std::vector<SampleRecord>& records);

// Writes `contents` to `path` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace posmed
