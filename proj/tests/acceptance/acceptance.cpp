// Acceptance suite: one PASS/FAIL line per primary criterion.
//
//   posmed_acceptance [--jobs N]
//
// Exit status is 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli/cli.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "posmed/corpus.hpp"
#include "posmed/mask_geometry.hpp"
#include "posmed/metrics.hpp"
#include "posmed/nn/fusion.hpp"
#include "posmed/nn/grad_check.hpp"
#include "posmed/nn/losses.hpp"
#include "posmed/nn/mask_head.hpp"
#include "posmed/parallel.hpp"
#include "posmed/qa_templater.hpp"
#include "posmed/review.hpp"
#include "support.hpp"

using namespace posmed;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
  double limit_seconds = 0.0;  // 0 means no runtime bound
};

// Accumulates failure notes for one criterion.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 3) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  bool ok() const { return !failed_; }
  std::string failures() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    return s;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::size_t g_jobs = default_jobs();

Verdict zone_oracle() {
  std::mt19937_64 rng(1001);
  Check c;
  std::size_t agree = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const int h = testing::uniform_int(rng, 1, 64), w = testing::uniform_int(rng, 1, 64);
    const auto cells = testing::random_cells(rng, h, w, testing::uniform_real(rng, 0.0, 1.0));
    const ZoneConfig cfg{testing::uniform_real(rng, 0.02, 0.3), TauMode::Relative};
    const std::string got(zone_code(classify_zone(BinaryMask(h, w, cells), cfg)));
    const std::string want = oracle::zone(cells, h, w, cfg.threshold_pixels(h, w));
    agree += got == want;
    c.require(got == want, "mask " + std::to_string(i) + ": " + got + " vs " + want);
  }
  return {c.ok(), std::to_string(agree) + "/1000 masks agree (sizes 1..64, density 0..1)" +
                      (c.ok() ? "" : "; " + c.failures()),
          5.0};
}

Zone swap_h(Zone z) {
  switch (z) {
    case Zone::TL: return Zone::TR;
    case Zone::TR: return Zone::TL;
    case Zone::BL: return Zone::BR;
    case Zone::BR: return Zone::BL;
    default: return z;
  }
}

Zone swap_v(Zone z) {
  switch (z) {
    case Zone::TL: return Zone::BL;
    case Zone::BL: return Zone::TL;
    case Zone::TR: return Zone::BR;
    case Zone::BR: return Zone::TR;
    default: return z;
  }
}

Verdict zone_properties() {
  std::mt19937_64 rng(1002);
  Check c;
  std::size_t mirror_h = 0, mirror_v = 0, monotone = 0, translate = 0;
  for (int i = 0; i < 6000; ++i) {
    const int h = testing::uniform_int(rng, 4, 64), w = testing::uniform_int(rng, 4, 64);
    const int r0 = testing::uniform_int(rng, 0, h - 1), c0 = testing::uniform_int(rng, 0, w - 1);
    const int r1 = testing::uniform_int(rng, r0, std::min(h - 1, r0 + h / 3));
    const int c1 = testing::uniform_int(rng, c0, std::min(w - 1, c0 + w / 3));
    const BinaryMask m = testing::rect_mask(h, w, r0, c0, r1, c1);
    const ZoneConfig cfg{testing::uniform_real(rng, 0.5, 10.0), TauMode::Absolute};
    const double tau = cfg.threshold_pixels(h, w);
    const ZoneResult z = locate_zone(m, cfg);

    // Boundary-center cases sit on the flip axis: x_c in {W/2, (W-1)/2}.
    const ZoneResult zh = locate_zone(m.flipped_horizontal(), cfg);
    const double xc = z.bbox->center_x(), yc = z.bbox->center_y();
    if (xc != w / 2.0 && xc != (w - 1) / 2.0 && *z.distance > tau && *zh.distance > tau) {
      ++mirror_h;
      c.require(zh.zone == swap_h(z.zone), "horizontal mirror case " + std::to_string(i));
    }
    const ZoneResult zv = locate_zone(m.flipped_vertical(), cfg);
    if (yc != h / 2.0 && yc != (h - 1) / 2.0 && *z.distance > tau && *zv.distance > tau) {
      ++mirror_v;
      c.require(zv.zone == swap_v(z.zone), "vertical mirror case " + std::to_string(i));
    }
    if (z.zone == Zone::Center) {
      ++monotone;
      for (double k : {1.0, 1.01, 2.0, 100.0})
        c.require(classify_zone(m, {cfg.tau * k, TauMode::Absolute}) == Zone::Center, "tau case " + std::to_string(i));
    }
    const int a = testing::uniform_int(rng, 0, w - 1 - c1), b = testing::uniform_int(rng, 0, h - 1 - r1);
    BinaryMask moved(h, w);
    for (const Pixel& p : foreground_pixels(m)) moved.set(p.row + b, p.col + a);
    ++translate;
    c.require(*bounding_box(moved) == BoundingBox{c0 + a, r0 + b, c1 + a, r1 + b},
              "translation case " + std::to_string(i));
  }
  // Masks that start CENTER are rare among random blobs; add centered ones.
  for (int i = 0; monotone < 600 && i < 5000; ++i) {
    const int h = testing::uniform_int(rng, 8, 64), w = testing::uniform_int(rng, 8, 64);
    const int r = testing::uniform_int(rng, h / 2 - 2, h / 2 + 1), col = testing::uniform_int(rng, w / 2 - 2, w / 2 + 1);
    const BinaryMask m = testing::rect_mask(h, w, r, col, r, col);
    const double tau0 = testing::uniform_real(rng, 1.5, 4.0);
    if (classify_zone(m, {tau0, TauMode::Absolute}) != Zone::Center) continue;
    ++monotone;
    for (double k : {1.0, 1.01, 2.0, 100.0})
      c.require(classify_zone(m, {tau0 * k, TauMode::Absolute}) == Zone::Center, "centered tau case");
  }
  const bool enough = mirror_h >= 500 && mirror_v >= 500 && monotone >= 500 && translate >= 500;
  c.require(enough, "fewer than 500 cases for a property");
  std::ostringstream d;
  d << "h-mirror " << mirror_h << ", v-mirror " << mirror_v << ", tau-monotone " << monotone << ", translation "
    << translate << " cases";
  if (!c.ok()) d << "; " << c.failures();
  return {c.ok(), d.str()};
}

Verdict dice_iou_identity() {
  std::mt19937_64 rng(1003);
  Check c;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int h = testing::uniform_int(rng, 1, 32), w = testing::uniform_int(rng, 1, 32);
    const BinaryMask p(h, w, testing::random_cells(rng, h, w, testing::uniform_real(rng, 0, 1)));
    const BinaryMask g(h, w, testing::random_cells(rng, h, w, testing::uniform_real(rng, 0, 1)));
    const SegScore s = dice_iou(p, g);
    worst = std::max(worst, std::abs(s.dice - 2.0 * s.iou / (1.0 + s.iou)));
  }
  c.require(worst < 1e-12, "identity residual " + fmt("%.3g", worst));

  const BinaryMask a = testing::rect_mask(4, 4, 0, 0, 1, 1);
  const SegScore same = dice_iou(a, a);
  c.require(same.dice == 1.0 && same.iou == 1.0, "identical masks");
  const SegScore disjoint = dice_iou(a, testing::rect_mask(4, 4, 2, 2, 3, 3));
  c.require(disjoint.dice == 0.0 && disjoint.iou == 0.0, "disjoint masks");
  BinaryMask p(4, 4), g(4, 4);
  p.set(0, 0);
  p.set(0, 1);
  g.set(0, 1);
  g.set(0, 2);
  const SegScore half = dice_iou(p, g);
  c.require(half.dice == 0.5 && half.iou == 1.0 / 3.0, "2/2/1 overlap");
  return {c.ok(), "max |dice - 2iou/(1+iou)| = " + fmt("%.3g", worst) + " over 1000 pairs (tol 1e-12); trio exact" +
                      (c.ok() ? "" : "; " + c.failures())};
}

Verdict rouge_oracle() {
  std::mt19937_64 rng(1004);
  Check c;
  const char* alphabet[] = {"a", "b", "c", "d", "e"};
  std::size_t exact = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> x, y;
    const int lx = testing::uniform_int(rng, 0, 12), ly = testing::uniform_int(rng, 0, 12);
    for (int k = 0; k < lx; ++k) x.push_back(alphabet[testing::uniform_int(rng, 0, 4)]);
    for (int k = 0; k < ly; ++k) y.push_back(alphabet[testing::uniform_int(rng, 0, 4)]);
    std::string sx, sy;
    for (const auto& t : x) sx += t + " ";
    for (const auto& t : y) sy += t + " ";
    const double want = oracle::rouge_l_f1(x, y);
    const bool ok = lcs_length(x, y) == oracle::lcs(x, y).length && rouge_l_tokens(x, y) == want &&
                    rouge_l(sx, sy) == want;
    exact += ok;
    c.require(ok, "pair " + std::to_string(i));
  }
  return {c.ok(), std::to_string(exact) + "/10000 pairs exactly equal (length <= 12, 5-token alphabet)"};
}

Verdict round_trip() {
  Check c;
  std::size_t ok = 0, total = 0;
  const auto templates = load_templates("fixtures/templates.jsonl");
  c.require(templates.size() == 55, "template count " + std::to_string(templates.size()));
  for (const auto& t : templates) {
    for (Zone z : kRealZones) {
      for (const char* name : {"polyp", "brain tumor", "lung"}) {
        ++total;
        const bool hit = extract_zone(instantiate(t, name, z).answer) == z;
        ok += hit;
        c.require(hit, t.id + "/" + std::string(zone_code(z)) + "/" + name);
      }
    }
  }
  c.require(total == 825, "expected 825 combinations");
  return {c.ok(), std::to_string(ok) + "/" + std::to_string(total) + " answers recover their zone"};
}

Verdict grad_checks() {
  Check c;
  std::vector<std::uint64_t> seeds(10);
  for (std::uint64_t s = 0; s < 10; ++s) seeds[s] = s;
  std::ostringstream d;
  for (nn::GradComponent comp : nn::kAllComponents) {
    const double tol = comp == nn::GradComponent::Linear ? 1e-9 : 1e-4;
    double worst = 0.0;
    try {
      for (const auto& r : nn::grad_check_seeds(comp, seeds, {}, g_jobs)) worst = std::max(worst, r.max_rel_error);
    } catch (const std::exception& e) {
      c.require(false, std::string(nn::component_name(comp)) + ": " + e.what());
      worst = INFINITY;
    }
    c.require(worst < tol, std::string(nn::component_name(comp)) + " " + fmt("%.3g", worst));
    d << nn::component_name(comp) << " " << fmt("%.2e", worst) << " (tol " << fmt("%.0e", tol) << ") ";
  }
  d << "over seeds 0-9";
  return {c.ok(), d.str(), 60.0};
}

Verdict shape_contract() {
  Check c;
  const nn::MaskHeadConfig cfg;  // 256 channels, 6 stages
  const nn::Shape expected{1, 1, 1024, 1024};
  c.require(nn::mask_head_output_shape({1, 256, 16, 16}, cfg) == expected, "shape path");

  nn::UniformSource rng(7);
  nn::FusionConfig fc;  // 256 channels, embed 4096, 8 heads
  const nn::FusionParams fp = nn::FusionParams::uniform(fc, rng);
  const nn::Tensor z_image = nn::uniform_tensor({1, 256, 16, 16}, rng, -1, 1);
  const nn::Tensor z_emb = nn::uniform_tensor({1, 8, 4096}, rng, -1, 1);
  const nn::Tensor fused = nn::fuse(z_image, z_emb, fp);
  c.require(fused.shape() == z_image.shape(), "fuse keeps [1,256,16,16]");
  const nn::Tensor logits = nn::mask_head(fused, nn::MaskHeadParams::uniform(cfg, rng));
  c.require(logits.shape() == expected, "smoke run shape " + nn::shape_string(logits.shape()));
  c.require(logits.all_finite(), "non-finite logits");
  return {c.ok(), "[1,256,16,16] -> fuse -> mask_head -> " + nn::shape_string(logits.shape()) + ", finite"};
}

Verdict loss_defaults() {
  const nn::LossWeights w;
  const double total = nn::total_loss(0.4, 0.2);
  const bool ok = w.lambda_seg == 1.0 && w.lambda_txt == 0.5 && std::abs(total - 0.5) <= 1e-15;
  return {ok, "total_loss(0.4, 0.2) = " + fmt("%.17g", total) + " (tol 1e-15), lambda_seg " +
                  fmt("%g", w.lambda_seg) + ", lambda_txt " + fmt("%g", w.lambda_txt)};
}

Verdict majority_voting() {
  Check c;
  auto decide3 = [](const std::vector<int>& v) {
    std::vector<Vote> votes;
    for (std::size_t i = 0; i < v.size(); ++i) votes.push_back({"s", "r" + std::to_string(i), v[i], ""});
    return decide("s", votes, 3).outcome;
  };
  std::size_t table = 0, flips = 0;
  for (int bits = 0; bits < 8; ++bits) {
    std::vector<int> v{bits & 1, (bits >> 1) & 1, (bits >> 2) & 1};
    const Outcome o = decide3(v);
    const Outcome want = v[0] + v[1] + v[2] >= 2 ? Outcome::Retained : Outcome::Rejected;
    table += o == want;
    c.require(o == want, "truth table row " + std::to_string(bits));
    const int majority = o == Outcome::Retained ? 1 : 0;
    for (std::size_t i = 0; i < 3; ++i) {
      if (v[i] == majority) continue;
      std::vector<int> flipped = v;
      flipped[i] = majority;
      ++flips;
      c.require(decide3(flipped) == o, "minority flip row " + std::to_string(bits));
    }
  }

  Corpus corpus;
  for (int i = 0; i < 8; ++i) {
    SampleRecord r;
    r.sample_id = "s" + std::to_string(i);
    r.zone = Zone::TL;
    r.target_name = "polyp";
    r.qa = {{"Where is the polyp?", "The polyp is in the top left region.", "t01", "polyp", Zone::TL}};
    corpus.records.push_back(r);
  }
  std::mt19937_64 rng(1009);
  ReviewState live(corpus, 3);
  std::vector<Vote> log;
  for (int i = 0; i < 100; ++i) {
    const Vote v{"s" + std::to_string(testing::uniform_int(rng, 0, 7)), "r" + std::to_string(testing::uniform_int(rng, 0, 3)),
                 testing::uniform_int(rng, 0, 1), ""};
    try {
      live.check_vote(v);
    } catch (const VoteError&) {
      continue;
    }
    live.record(v);
    log.push_back(v);
  }
  const bool replay_ok = ReviewState::replay(corpus, 3, log).decisions() == live.decisions() &&
                         decide_all(corpus, log, 3) == live.decisions();
  c.require(replay_ok, "replay diverged");
  std::ostringstream d;
  d << table << "/8 truth-table rows, " << flips << " minority flips stable, replay of " << log.size()
    << " accepted of 100 fuzz votes " << (replay_ok ? "matches" : "differs");
  return {c.ok(), d.str()};
}

// generate -> dedupe -> stats, returning the three output files' bytes.
std::vector<std::string> pipeline(const testing::TempDir& dir, const std::string& tag, std::size_t jobs) {
  const std::string corpus = (dir / (tag + "_corpus.jsonl")).string();
  const std::string deduped = (dir / (tag + "_dedupe.jsonl")).string();
  const std::string stats = (dir / (tag + "_stats.json")).string();
  const std::string j = std::to_string(jobs);
  if (cli::dispatch({"posmed", "--jobs", j, "--log-level", "off", "generate", "--source", "fixtures/synthetic", "--out",
                     corpus}) != 0 ||
      cli::dispatch({"posmed", "--log-level", "off", "dedupe", "--corpus", corpus, "--out", deduped}) != 0 ||
      cli::dispatch({"posmed", "--log-level", "off", "stats", "--corpus", deduped, "--format", "json", "--out", stats}) !=
          0) {
    return {};
  }
  return {read_file(corpus), read_file(deduped), read_file(stats)};
}

Verdict end_to_end() {
  Check c;
  testing::TempDir dir("acceptance");
  const auto first = pipeline(dir, "run1", 1);
  const std::size_t jobs = std::max<std::size_t>(g_jobs, 4);
  const auto second = pipeline(dir, "run2", jobs);
  c.require(!first.empty() && !second.empty(), "pipeline exited nonzero");
  if (!c.ok()) return {false, c.failures()};
  c.require(first == second, "outputs differ between runs");

  const auto j = nlohmann::json::parse(first[2]);
  const std::size_t images = j["totals"]["images"].get<std::size_t>();
  c.require(images >= 30, "fewer than 30 images");
  // Known composition of the synthetic fixture, 40 images.
  const std::pair<const char*, double> expected[] = {{"xray", 30.0}, {"ct", 15.0},  {"endoscopy", 20.0},
                                                     {"mri", 15.0},  {"rgb", 10.0}, {"ultrasound", 10.0}};
  std::ostringstream d;
  d << "3 outputs byte-identical across runs (jobs 1 vs " << jobs << "); " << images << " images;";
  for (const auto& [name, pct] : expected) {
    const double got = j["source_percent"].value(name, -1.0);
    c.require(got == pct, std::string(name) + " " + fmt("%g", got));
    d << " " << name << " " << fmt("%g", got) << "%";
  }
  if (!c.ok()) d << "; " << c.failures();
  return {c.ok(), d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--jobs") g_jobs = std::max(1, std::atoi(argv[i + 1]));
  }
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"zone oracle equivalence", zone_oracle},
      {"zone properties", zone_properties},
      {"dice-iou identity", dice_iou_identity},
      {"rouge-l vs dp-lcs oracle", rouge_oracle},
      {"generation/evaluation round trip", round_trip},
      {"gradient checks", grad_checks},
      {"shape contract", shape_contract},
      {"loss defaults", loss_defaults},
      {"majority voting", majority_voting},
      {"end-to-end determinism", end_to_end},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (v.limit_seconds > 0 && secs >= v.limit_seconds) v.pass = false;
    std::string timing = fmt("%.2fs", secs);
    if (v.limit_seconds > 0) timing += " (limit " + fmt("%g", v.limit_seconds) + "s)";
    std::printf("%s  %-34s %s [%s]\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str(), timing.c_str());
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
