#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "doctest.h"
#include "posmed/corpus.hpp"
#include "posmed/error.hpp"
#include "posmed/image_io.hpp"
#include "support.hpp"

using namespace posmed;

namespace {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::vector<QaTemplate> templates() { return load_templates("fixtures/templates.jsonl"); }

GrayImage square(int h, int w, int r0, int c0, int side) {
  GrayImage img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) img.pixels[static_cast<std::size_t>(r * w + c)] = 255;
  return img;
}

// Paired-dirs source with three valid samples and one empty mask.
void write_small_source(const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  const GrayImage scan{32, 32, std::vector<std::uint8_t>(32 * 32, 90)};
  const GrayImage masks[] = {square(32, 32, 2, 2, 5), square(32, 32, 2, 24, 5), square(32, 32, 14, 14, 4),
                             GrayImage{32, 32, std::vector<std::uint8_t>(32 * 32, 0)}};
  for (int i = 0; i < 4; ++i) {
    const std::string stem = "case_" + std::to_string(i);
    write_png(root / "images" / (stem + ".png"), scan);
    write_png(root / "masks" / (stem + ".png"), masks[i]);
  }
}

SampleRecord record(std::string id, Modality m, TargetKind k = TargetKind::Tumor, Zone z = Zone::TL) {
  SampleRecord r;
  r.sample_id = std::move(id);
  r.image_path = "img/" + r.sample_id + ".png";
  r.mask_path = "mask/" + r.sample_id + ".png";
  r.modality = m;
  r.target_name = "polyp";
  r.target_kind = k;
  r.zone = z;
  r.bbox = {1, 2, 3, 4};
  r.qa = {{"Where is the polyp?", "The polyp is in the top left region.", "t01", "polyp", z}};
  return r;
}

}  // namespace

TEST_CASE("ingest: three valid and one empty mask") {
  testing::TempDir dir("ingest");
  write_small_source(dir.path());
  const auto t = templates();
  const IngestResult r = ingest(dir.path(), generic_adapter(Modality::Endoscopy), {}, t);
  REQUIRE(r.records.size() == 3);
  REQUIRE(r.quarantined.size() == 1);
  CHECK(r.errors.empty());
  CHECK(r.files_seen == 4);
  CHECK(r.quarantined[0].reason == QuarantineReason::Invalid);
  CHECK(r.quarantined[0].sample_id.find("case_3") != std::string::npos);

  CHECK(r.records[0].zone == Zone::TL);
  CHECK(r.records[1].zone == Zone::TR);
  CHECK(r.records[2].zone == Zone::Center);
  CHECK(std::is_sorted(r.records.begin(), r.records.end(),
                       [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; }));
  for (const auto& rec : r.records) {
    CHECK(rec.modality == Modality::Endoscopy);
    CHECK_FALSE(rec.qa.empty());
    CHECK(rec.qa.size() == dedupe(rec.qa).size());
    CHECK(rec.split == Split::Train);
  }
}

TEST_CASE("ingest: twice gives byte-identical output") {
  testing::TempDir dir("ingest2");
  write_small_source(dir.path());
  const auto t = templates();
  IngestOptions serial;
  IngestOptions parallel;
  parallel.jobs = 4;
  const auto a = ingest(dir.path(), generic_adapter(Modality::Ct), serial, t);
  const auto b = ingest(dir.path(), generic_adapter(Modality::Ct), parallel, t);
  CHECK(serialize_corpus({{}, a.records}) == serialize_corpus({{}, b.records}));
  CHECK(serialize_quarantine(a) == serialize_quarantine(b));
}

TEST_CASE("ingest: mask larger than its image is quarantined") {
  testing::TempDir dir("mismatch");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  write_png(dir / "images/a.png", GrayImage{16, 16, std::vector<std::uint8_t>(256, 7)});
  write_png(dir / "masks/a.png", square(32, 32, 4, 4, 4));
  const auto t = templates();
  const auto r = ingest(dir.path(), generic_adapter(Modality::Mri), {}, t);
  CHECK(r.records.empty());
  REQUIRE(r.quarantined.size() == 1);
  CHECK(r.quarantined[0].reason == QuarantineReason::DimensionMismatch);
  CHECK(quarantine_reason_code(r.quarantined[0].reason) != quarantine_reason_code(QuarantineReason::Invalid));
}

TEST_CASE("ingest: unreadable file is an error entry and ingestion continues") {
  testing::TempDir dir("broken");
  write_small_source(dir.path());
  {
    std::ofstream junk(dir / "images/case_9.png");
    junk << "not a png";
  }
  {
    std::ofstream junk(dir / "masks/case_9.png");
    junk << "not a png";
  }
  const auto t = templates();
  const auto r = ingest(dir.path(), generic_adapter(Modality::Xray), {}, t);
  CHECK(r.records.size() == 3);
  CHECK(r.quarantined.size() == 1);
  CHECK(r.errors.size() == 1);
  CHECK(r.files_seen == r.records.size() + r.quarantined.size() + r.errors.size());
}

TEST_CASE("bundled synthetic fixture: conservation and re-derivability") {
  const auto t = templates();
  const IngestResult r = ingest_bundle("fixtures/synthetic", {}, t);
  CHECK(r.files_seen == 42);
  CHECK(r.records.size() == 40);
  CHECK(r.quarantined.size() == 2);
  CHECK(r.errors.empty());
  CHECK(r.files_seen == r.records.size() + r.quarantined.size() + r.errors.size());
  const ZoneConfig cfg;
  for (const auto& rec : r.records) CHECK(classify_zone(BinaryMask::load(rec.mask_path), cfg) == rec.zone);

  // The busi benign case with two mask files unions them.
  const auto it = std::find_if(r.records.begin(), r.records.end(),
                               [](const auto& rec) { return rec.sample_id == "busi/train/benign/benign (2)"; });
  REQUIRE(it != r.records.end());
  BinaryMask a = BinaryMask::load("fixtures/synthetic/busi/benign/benign (2)_mask.png");
  const BinaryMask b = BinaryMask::load("fixtures/synthetic/busi/benign/benign (2)_mask_1.png");
  for (int row = 0; row < a.height(); ++row)
    for (int col = 0; col < a.width(); ++col)
      if (b.at(row, col)) a.set(row, col);
  CHECK(*bounding_box(a) == it->bbox);
}

TEST_CASE("unseen-distribution sources are test only") {
  const SourceAdapter* cvc = find_adapter("cvc300");
  REQUIRE(cvc);
  CHECK(cvc->test_only);
  const auto t = templates();
  const auto r = ingest("fixtures/synthetic/cvc300", *cvc, {}, t);
  REQUIRE_FALSE(r.records.empty());
  for (const auto& rec : r.records) CHECK(rec.split == Split::Test);
}

TEST_CASE("export of the bundled fixture has a pinned digest") {
  const auto t = templates();
  const IngestResult r = ingest_bundle("fixtures/synthetic", {}, t);
  const std::string bytes = serialize_corpus({{}, r.records});
  CHECK(sha256_hex(bytes) == "df0685d8df63484631d28c509724b2ca81cd2c94d0306c12eea81252aa5dafb6");
  testing::TempDir dir("digest");
  export_corpus(dir / "a.jsonl", {{}, r.records});
  export_corpus(dir / "b.jsonl", {{}, r.records});
  CHECK(read_file(dir / "a.jsonl") == bytes);
  CHECK(read_file(dir / "b.jsonl") == bytes);
}

TEST_CASE("export and load round trip") {
  testing::TempDir dir("rt");
  SUBCASE("empty list writes the header only") {
    export_corpus(dir / "e.jsonl", {});
    const std::string text = read_file(dir / "e.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(load_corpus(dir / "e.jsonl").records.empty());
  }
  SUBCASE("one record") {
    Corpus c{{}, {record("x/1", Modality::Ultrasound, TargetKind::Tumor, Zone::BR)}};
    c.header.zone = {7.5, TauMode::Absolute};
    c.header.created_at = "2025-02-03T04:05:06Z";
    export_corpus(dir / "one.jsonl", c);
    CHECK(load_corpus(dir / "one.jsonl") == c);
  }
  SUBCASE("ingested records") {
    const auto t = templates();
    const Corpus c{{}, ingest_bundle("fixtures/synthetic", {}, t).records};
    CHECK(parse_corpus(serialize_corpus(c)) == c);
  }
}

TEST_CASE("schema version mismatch names both versions") {
  const std::string text = "{\"posmed_schema\":2,\"tau\":0.1,\"tau_mode\":\"relative\"}\n";
  try {
    parse_corpus(text);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 1") != std::string::npos);
    CHECK(msg.find("found 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_corpus("{\"id\": 1}\n"), DataError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl"), DataError);
}

TEST_CASE("stats: shares and fractions") {
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 48; ++i) recs.push_back(record("x" + std::to_string(i), Modality::Xray, TargetKind::Anatomy));
  for (int i = 0; i < 33; ++i) recs.push_back(record("c" + std::to_string(i), Modality::Ct, TargetKind::Anatomy));
  for (int i = 0; i < 19; ++i) recs.push_back(record("m" + std::to_string(i), Modality::Mri));
  const CorpusManifest m = stats(recs);
  CHECK(m.images == 100);
  CHECK(m.qa_pairs == 100);
  CHECK(m.modality_share(Modality::Xray) == 0.48);
  CHECK(m.modality_share(Modality::Ct) == 0.33);
  CHECK(m.target_kind_fractions.at(TargetKind::Anatomy) == doctest::Approx(0.81).epsilon(1e-12));
  CHECK(m.target_kind_fractions.at(TargetKind::Tumor) + m.target_kind_fractions.at(TargetKind::Anatomy) ==
        doctest::Approx(1.0).epsilon(1e-12));
  std::size_t total = 0;
  for (const auto& [mod, n] : m.source_counts) total += n;
  CHECK(total == m.images);

  std::vector<SampleRecord> anatomy{record("a", Modality::Ct, TargetKind::Anatomy),
                                    record("b", Modality::Xray, TargetKind::Anatomy)};
  CHECK(stats(anatomy).target_kind_fractions.at(TargetKind::Anatomy) == 1.0);
  CHECK_THROWS_AS(stats({}), DataError);
}

TEST_CASE("stats totals are invariant under reordering") {
  const auto t = templates();
  auto recs = ingest_bundle("fixtures/synthetic", {}, t).records;
  const std::string before = manifest_json(stats(recs));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(recs.begin(), recs.end(), rng);
    CHECK(manifest_json(stats(recs)) == before);
  }
}

TEST_CASE("bundled fixture modality percentages") {
  const auto t = templates();
  const auto m = stats(ingest_bundle("fixtures/synthetic", {}, t).records);
  CHECK(m.images == 40);
  // xray 12, ct 6, endoscopy 8, ultrasound 4, mri 6, rgb 4 of 40.
  CHECK(m.source_counts.at(Modality::Xray) == 12);
  CHECK(m.source_counts.at(Modality::Ct) == 6);
  CHECK(m.source_counts.at(Modality::Endoscopy) == 8);
  CHECK(m.source_counts.at(Modality::Ultrasound) == 4);
  CHECK(m.source_counts.at(Modality::Mri) == 6);
  CHECK(m.source_counts.at(Modality::Rgb) == 4);
  CHECK(m.target_kind_fractions.at(TargetKind::Anatomy) == doctest::Approx(18.0 / 40).epsilon(1e-12));
}

TEST_CASE("choose_templates is deterministic and distinct") {
  const auto a = choose_templates("lung_xray/train/lung_xray_100", 3, 55, 8);
  CHECK(a == choose_templates("lung_xray/train/lung_xray_100", 3, 55, 8));
  CHECK(a != choose_templates("lung_xray/train/lung_xray_100", 4, 55, 8));
  auto s = a;
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(a.size() == 8);
  CHECK(choose_templates("x", 0, 5, 8).size() == 5);
}

TEST_CASE("write_file_atomic replaces contents") {
  testing::TempDir dir("atomic");
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(read_file(dir / "f.txt") == "two");
}
