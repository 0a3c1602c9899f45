#include "posmed/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <random>
#include <sstream>
#include <variant>

#include "posmed/error.hpp"
#include "posmed/parallel.hpp"
#include "posmed/text.hpp"

namespace posmed {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const std::vector<SourceAdapter>& adapter_table() {
  // Target vocabulary per source; masks carry no class labels.
  static const std::vector<SourceAdapter> kAdapters = {
      {"busi", Modality::Ultrasound, "breast tumor", TargetKind::Tumor, Layout::ClassDirs, "_mask", false},
      {"brain_mri", Modality::Mri, "brain tumor", TargetKind::Tumor, Layout::PairedDirs, "", false},
      {"lung_ct", Modality::Ct, "lung", TargetKind::Anatomy, Layout::PairedDirs, "", false},
      {"lung_xray", Modality::Xray, "lung", TargetKind::Anatomy, Layout::PairedDirs, "", false},
      {"kvasir", Modality::Endoscopy, "polyp", TargetKind::Tumor, Layout::PairedDirs, "", false},
      {"clinicdb", Modality::Endoscopy, "polyp", TargetKind::Tumor, Layout::PairedDirs, "", false},
      {"cvc300", Modality::Endoscopy, "polyp", TargetKind::Tumor, Layout::PairedDirs, "", true},
      {"etis", Modality::Endoscopy, "polyp", TargetKind::Tumor, Layout::PairedDirs, "", true},
      {"colondb", Modality::Endoscopy, "polyp", TargetKind::Tumor, Layout::PairedDirs, "", true},
      {"isic", Modality::Rgb, "skin lesion", TargetKind::Tumor, Layout::PairedDirs, "_segmentation", false},
  };
  return kAdapters;
}

bool is_image_file(const fs::path& p) {
  std::string ext = text::casefold(p.extension().string());
  return ext == ".png" || ext == ".pgm";
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Candidate {
  std::string sample_id;
  fs::path image;
  std::vector<fs::path> masks;  // empty when no mask was found
  Split split;
};

void discover_paired(const fs::path& dir, const std::string& id_prefix, const SourceAdapter& adapter,
                     Split split, std::vector<Candidate>& out) {
  const auto masks = sorted_files(dir / "masks");
  for (const fs::path& image : sorted_files(dir / "images")) {
    Candidate c{id_prefix + image.stem().string(), image, {}, split};
    const std::string want = image.stem().string() + adapter.mask_suffix;
    for (const fs::path& m : masks) {
      if (m.stem().string() == want) {
        c.masks.push_back(m);
        break;
      }
    }
    out.push_back(std::move(c));
  }
}

void discover_class_dirs(const fs::path& dir, const std::string& id_prefix, const SourceAdapter& adapter,
                         Split split, std::vector<Candidate>& out) {
  for (const fs::path& cls : sorted_dirs(dir)) {
    const auto files = sorted_files(cls);
    for (const fs::path& image : files) {
      const std::string stem = image.stem().string();
      if (stem.find(adapter.mask_suffix) != std::string::npos) continue;
      Candidate c{id_prefix + cls.filename().string() + "/" + stem, image, {}, split};
      const std::string prefix = stem + adapter.mask_suffix;
      for (const fs::path& m : files) {
        const std::string ms = m.stem().string();
        if (ms.rfind(prefix, 0) == 0 && (ms.size() == prefix.size() || ms[prefix.size()] == '_')) {
          c.masks.push_back(m);
        }
      }
      out.push_back(std::move(c));
    }
  }
}

std::vector<Candidate> discover(const fs::path& root, const SourceAdapter& adapter) {
  std::vector<Candidate> out;
  const Split fallback = adapter.test_only ? Split::Test : Split::Train;
  auto scan = [&](const fs::path& dir, Split split, const std::string& id_prefix) {
    if (adapter.layout == Layout::PairedDirs) {
      discover_paired(dir, id_prefix, adapter, split, out);
    } else {
      discover_class_dirs(dir, id_prefix, adapter, split, out);
    }
  };
  const bool has_splits = fs::is_directory(root / "train") || fs::is_directory(root / "test");
  if (has_splits) {
    for (Split s : {Split::Train, Split::Test}) {
      const std::string sname(split_name(s));
      const Split tagged = adapter.test_only ? Split::Test : s;
      scan(root / sname, tagged, adapter.name + "/" + sname + "/");
    }
  } else {
    scan(root, fallback, adapter.name + "/" + std::string(split_name(fallback)) + "/");
  }
  std::sort(out.begin(), out.end(),
            [](const Candidate& a, const Candidate& b) { return a.sample_id < b.sample_id; });
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Outcome = std::variant<SampleRecord, QuarantineEntry, IngestError>;

Outcome process(const Candidate& c, const SourceAdapter& adapter, const IngestOptions& options,
                std::span<const QaTemplate> templates) {
  const std::string image_path = c.image.generic_string();
  if (c.masks.empty()) return IngestError{c.sample_id, image_path, "no mask found for image"};
  const std::string mask_path = c.masks.front().generic_string();
  try {
    const ImageSize image_size = read_image_size(c.image);
    BinaryMask mask = BinaryMask::load(c.masks.front());
    for (std::size_t i = 1; i < c.masks.size(); ++i) {
      const BinaryMask extra = BinaryMask::load(c.masks[i]);
      if (extra.height() != mask.height() || extra.width() != mask.width()) {
        return QuarantineEntry{c.sample_id, image_path, c.masks[i].generic_string(),
                               QuarantineReason::DimensionMismatch, "mask components differ in size"};
      }
      for (int r = 0; r < mask.height(); ++r)
        for (int col = 0; col < mask.width(); ++col)
          if (extra.at(r, col)) mask.set(r, col);
    }
    if (image_size.height != mask.height() || image_size.width != mask.width()) {
      std::ostringstream why;
      why << "image " << image_size.height << "x" << image_size.width << " vs mask " << mask.height() << "x"
          << mask.width();
      return QuarantineEntry{c.sample_id, image_path, mask_path, QuarantineReason::DimensionMismatch,
                             why.str()};
    }
    const ZoneResult zr = locate_zone(mask, options.zone);
    if (zr.zone == Zone::Invalid) {
      return QuarantineEntry{c.sample_id, image_path, mask_path, QuarantineReason::Invalid,
                             "mask has no foreground"};
    }

    SampleRecord rec;
    rec.sample_id = c.sample_id;
    rec.image_path = image_path;
    rec.mask_path = mask_path;
    rec.modality = adapter.modality;
    rec.target_name = adapter.target_name;
    rec.target_kind = adapter.target_kind;
    rec.zone = zr.zone;
    rec.bbox = *zr.bbox;
    rec.split = c.split;
    std::vector<QaPair> pairs;
    for (std::size_t idx : choose_templates(c.sample_id, options.seed, templates.size(), options.pairs_per_image)) {
      pairs.push_back(instantiate(templates[idx], adapter.target_name, zr.zone));
    }
    rec.qa = dedupe(pairs);
    return rec;
  } catch (const DataError& e) {
    return IngestError{c.sample_id, image_path, e.what()};
  }
}

ojson bbox_json(const BoundingBox& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

template <typename T, typename F>
T parse_enum(const ojson& j, const char* key, F&& from_name) {
  const std::string s = j.at(key).get<std::string>();
  const auto v = from_name(s);
  if (!v) throw DataError(std::string("unknown ") + key + " '" + s + "'");
  return *v;
}

ojson header_json(const CorpusHeader& h) {
  return ojson{{"posmed_schema", h.schema},
               {"tau", h.zone.tau},
               {"tau_mode", tau_mode_name(h.zone.tau_mode)},
               {"created_at", h.created_at}};
}

CorpusHeader parse_header(std::string_view line) {
  const ojson j = ojson::parse(line);
  if (!j.is_object() || !j.contains("posmed_schema")) {
    throw DataError("missing corpus header line with 'posmed_schema'");
  }
  CorpusHeader h;
  h.schema = j.at("posmed_schema").get<int>();
  if (h.schema != kCorpusSchemaVersion) {
    throw DataError("corpus schema version mismatch: expected " + std::to_string(kCorpusSchemaVersion) +
                    ", found " + std::to_string(h.schema));
  }
  h.zone.tau = j.at("tau").get<double>();
  h.zone.tau_mode = parse_enum<TauMode>(j, "tau_mode", tau_mode_from_name);
  h.created_at = j.value("created_at", std::string{});
  return h;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Ultrasound: return "ultrasound";
    case Modality::Mri: return "mri";
    case Modality::Ct: return "ct";
    case Modality::Xray: return "xray";
    case Modality::Endoscopy: return "endoscopy";
    case Modality::Rgb: return "rgb";
  }
  return "unknown";
}

std::optional<Modality> modality_from_name(std::string_view name) {
  for (Modality m : kAllModalities)
    if (modality_name(m) == name) return m;
  return std::nullopt;
}

std::string_view target_kind_name(TargetKind k) { return k == TargetKind::Tumor ? "tumor" : "anatomy"; }

std::optional<TargetKind> target_kind_from_name(std::string_view name) {
  if (name == "tumor") return TargetKind::Tumor;
  if (name == "anatomy") return TargetKind::Anatomy;
  return std::nullopt;
}

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::optional<Split> split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::span<const SourceAdapter> known_adapters() { return adapter_table(); }

const SourceAdapter* find_adapter(std::string_view name) {
  for (const auto& a : adapter_table())
    if (a.name == name) return &a;
  return nullptr;
}

SourceAdapter generic_adapter(Modality modality) {
  for (const auto& a : adapter_table()) {
    if (a.modality == modality) {
      SourceAdapter g = a;
      g.name = std::string(modality_name(modality));
      g.layout = Layout::PairedDirs;
      g.mask_suffix.clear();
      g.test_only = false;
      return g;
    }
  }
  throw std::invalid_argument("no adapter for modality");
}

std::string_view quarantine_reason_code(QuarantineReason r) {
  return r == QuarantineReason::Invalid ? "INVALID" : "DIMENSION_MISMATCH";
}

void IngestResult::merge(IngestResult other) {
  std::move(other.records.begin(), other.records.end(), std::back_inserter(records));
  std::move(other.quarantined.begin(), other.quarantined.end(), std::back_inserter(quarantined));
  std::move(other.errors.begin(), other.errors.end(), std::back_inserter(errors));
  files_seen += other.files_seen;
  std::sort(records.begin(), records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.sample_id < b.sample_id; });
}

std::vector<std::size_t> choose_templates(std::string_view sample_id, std::uint64_t seed,
                                          std::size_t template_count, std::size_t count) {
  std::vector<std::size_t> idx(template_count);
  for (std::size_t i = 0; i < template_count; ++i) idx[i] = i;
  count = std::min(count, template_count);
  std::mt19937_64 rng(fnv1a(sample_id) ^ (seed * 0x9e3779b97f4a7c15ULL));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (template_count - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

IngestResult ingest(const std::filesystem::path& source_root, const SourceAdapter& adapter,
                    const IngestOptions& options, std::span<const QaTemplate> templates) {
  options.zone.validate();
  if (!fs::is_directory(source_root)) {
    throw DataError("source directory '" + source_root.string() + "' does not exist");
  }
  if (templates.empty()) throw DataError("no QA templates supplied");

  const std::vector<Candidate> candidates = discover(source_root, adapter);
  std::vector<std::optional<Outcome>> slots(candidates.size());
  parallel_for(candidates.size(), options.jobs,
               [&](std::size_t i) { slots[i] = process(candidates[i], adapter, options, templates); });

  IngestResult result;
  result.files_seen = candidates.size();
  for (auto& slot : slots) {
    std::visit(
        [&](auto&& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, SampleRecord>) result.records.push_back(std::move(v));
          else if constexpr (std::is_same_v<T, QuarantineEntry>) result.quarantined.push_back(std::move(v));
          else result.errors.push_back(std::move(v));
        },
        *slot);
  }
  return result;
}

IngestResult ingest_bundle(const std::filesystem::path& bundle_root, const IngestOptions& options,
                           std::span<const QaTemplate> templates) {
  if (!fs::is_directory(bundle_root)) {
    throw DataError("bundle directory '" + bundle_root.string() + "' does not exist");
  }
  IngestResult all;
  bool any = false;
  for (const fs::path& dir : sorted_dirs(bundle_root)) {
    const SourceAdapter* adapter = find_adapter(dir.filename().string());
    if (!adapter) {
      throw DataError("bundle subdirectory '" + dir.string() + "' does not name a known source adapter");
    }
    all.merge(ingest(dir, *adapter, options, templates));
    any = true;
  }
  if (!any) throw DataError("bundle directory '" + bundle_root.string() + "' has no source subdirectories");
  return all;
}

double CorpusManifest::modality_share(Modality m) const {
  const auto it = source_counts.find(m);
  if (it == source_counts.end() || images == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(images);
}

CorpusManifest stats(std::span<const SampleRecord> records, const CorpusHeader& header) {
  if (records.empty()) throw DataError("cannot compute statistics of an empty corpus");
  CorpusManifest m;
  m.created_at = header.created_at;
  m.zone = header.zone;
  for (Modality mod : kAllModalities) m.source_counts[mod] = 0;
  for (Zone z : kRealZones) m.zone_histogram[z] = 0;
  m.split_counts[Split::Train] = 0;
  m.split_counts[Split::Test] = 0;
  std::size_t anatomy = 0;
  for (const SampleRecord& r : records) {
    ++m.source_counts[r.modality];
    ++m.zone_histogram[r.zone];
    ++m.split_counts[r.split];
    m.qa_pairs += r.qa.size();
    anatomy += r.target_kind == TargetKind::Anatomy;
  }
  m.images = records.size();
  const double n = static_cast<double>(m.images);
  m.target_kind_fractions[TargetKind::Anatomy] = static_cast<double>(anatomy) / n;
  m.target_kind_fractions[TargetKind::Tumor] = static_cast<double>(m.images - anatomy) / n;
  return m;
}

std::string manifest_json(const CorpusManifest& m) {
  ojson j;
  j["created_at"] = m.created_at;
  j["tau"] = m.zone.tau;
  j["tau_mode"] = tau_mode_name(m.zone.tau_mode);
  j["totals"] = {{"images", m.images}, {"qa_pairs", m.qa_pairs}};
  ojson counts = ojson::object();
  ojson percent = ojson::object();
  for (const auto& [mod, n] : m.source_counts) {
    counts[std::string(modality_name(mod))] = n;
    percent[std::string(modality_name(mod))] =
        m.images ? 100.0 * static_cast<double>(n) / static_cast<double>(m.images) : 0.0;
  }
  j["source_counts"] = counts;
  j["source_percent"] = percent;
  ojson kinds = ojson::object();
  for (const auto& [k, f] : m.target_kind_fractions) kinds[std::string(target_kind_name(k))] = f;
  j["target_kind_fractions"] = kinds;
  ojson zones = ojson::object();
  for (const auto& [z, n] : m.zone_histogram) zones[std::string(zone_code(z))] = n;
  j["zone_histogram"] = zones;
  ojson splits = ojson::object();
  for (const auto& [s, n] : m.split_counts) splits[std::string(split_name(s))] = n;
  j["split_counts"] = splits;
  return j.dump(2) + "\n";
}

std::string manifest_table(const CorpusManifest& m) {
  std::ostringstream os;
  os << "images    " << m.images << "\n";
  os << "qa_pairs  " << m.qa_pairs << "\n";
  os << "tau       " << m.zone.tau << " (" << tau_mode_name(m.zone.tau_mode) << ")\n\n";
  os << std::left << std::setw(12) << "modality" << std::right << std::setw(8) << "count" << std::setw(10)
     << "share" << "\n";
  for (const auto& [mod, n] : m.source_counts) {
    const double pct = m.images ? 100.0 * static_cast<double>(n) / static_cast<double>(m.images) : 0.0;
    os << std::left << std::setw(12) << modality_name(mod) << std::right << std::setw(8) << n << std::setw(9)
       << fixed(pct, 1) << "%\n";
  }
  os << "\n";
  for (const auto& [k, f] : m.target_kind_fractions) {
    os << std::left << std::setw(12) << target_kind_name(k) << std::right << std::setw(17) << fixed(100.0 * f, 1)
       << "%\n";
  }
  os << "\nzones:";
  for (const auto& [z, n] : m.zone_histogram) os << ' ' << zone_code(z) << '=' << n;
  os << "\nsplits:";
  for (const auto& [s, n] : m.split_counts) os << ' ' << split_name(s) << '=' << n;
  os << "\n";
  return os.str();
}

std::string record_json(const SampleRecord& r) {
  ojson qa = ojson::array();
  for (const QaPair& p : r.qa) {
    qa.push_back({{"question", p.question},
                  {"answer", p.answer},
                  {"template_id", p.template_id},
                  {"target_name", p.target_name},
                  {"zone", zone_code(p.zone)}});
  }
  const ojson j = {{"sample_id", r.sample_id},
                   {"image_path", r.image_path},
                   {"mask_path", r.mask_path},
                   {"modality", modality_name(r.modality)},
                   {"target_name", r.target_name},
                   {"target_kind", target_kind_name(r.target_kind)},
                   {"zone", zone_code(r.zone)},
                   {"bbox", bbox_json(r.bbox)},
                   {"split", split_name(r.split)},
                   {"qa", qa}};
  return j.dump();
}

SampleRecord parse_record(std::string_view line) {
  try {
    const ojson j = ojson::parse(line);
    SampleRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    r.mask_path = j.at("mask_path").get<std::string>();
    r.modality = parse_enum<Modality>(j, "modality", modality_from_name);
    r.target_name = j.at("target_name").get<std::string>();
    r.target_kind = parse_enum<TargetKind>(j, "target_kind", target_kind_from_name);
    r.zone = parse_enum<Zone>(j, "zone", zone_from_code);
    if (r.zone == Zone::Invalid) throw DataError("record '" + r.sample_id + "' has zone INVALID");
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw DataError("bbox must be [x_min,y_min,x_max,y_max]");
    r.bbox = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    r.split = parse_enum<Split>(j, "split", split_from_name);
    for (const auto& q : j.at("qa")) {
      QaPair p;
      p.question = q.at("question").get<std::string>();
      p.answer = q.at("answer").get<std::string>();
      p.template_id = q.at("template_id").get<std::string>();
      p.target_name = q.at("target_name").get<std::string>();
      p.zone = parse_enum<Zone>(q, "zone", zone_from_code);
      r.qa.push_back(std::move(p));
    }
    return r;
  } catch (const ojson::exception& e) {
    throw DataError(std::string("malformed corpus record: ") + e.what());
  }
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out = header_json(corpus.header).dump();
  out += '\n';
  for (const SampleRecord& r : corpus.records) {
    out += record_json(r);
    out += '\n';
  }
  return out;
}

Corpus parse_corpus(std::string_view jsonl, std::string_view origin) {
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool have_header = false;
  while (start < jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (text::collapse_whitespace(line).empty()) continue;
    try {
      if (!have_header) {
        corpus.header = parse_header(line);
        have_header = true;
      } else {
        corpus.records.push_back(parse_record(line));
      }
    } catch (const ojson::exception& e) {
      throw DataError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(std::string(origin) + ": empty corpus file (no header line)");
  return corpus;
}

void export_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file_atomic(path, serialize_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path), path.string()); }

std::string serialize_quarantine(const IngestResult& result) {
  std::string out;
  for (const QuarantineEntry& q : result.quarantined) {
    out += ojson{{"kind", "quarantine"},
                 {"sample_id", q.sample_id},
                 {"image_path", q.image_path},
                 {"mask_path", q.mask_path},
                 {"reason", quarantine_reason_code(q.reason)},
                 {"detail", q.detail}}
               .dump();
    out += '\n';
  }
  for (const IngestError& e : result.errors) {
    out += ojson{{"kind", "error"}, {"sample_id", e.sample_id}, {"path", e.path}, {"reason", "UNREADABLE"},
                 {"detail", e.message}}
               .dump();
    out += '\n';
  }
  return out;
}

void dedupe_records(std::vector<SampleRecord>& records) {
  for (SampleRecord& r : records) r.qa = dedupe(r.qa);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace posmed
