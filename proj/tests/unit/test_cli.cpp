#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "cli/cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "posmed/corpus.hpp"
#include "posmed/nn/param_io.hpp"
#include "support.hpp"

using namespace posmed;
using posmed::cli::dispatch;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr interleaved
};

// Runs the installed-layout binary so stderr diagnostics can be inspected.
Run run_binary(const std::string& args) {
  Run r;
  const std::string cmd = std::string(POSMED_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "posmed");
  return dispatch(args);
}

}  // namespace

TEST_CASE("help exits 0") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"generate", "--help"}) == 0);
  CHECK(run({"--version"}) == 0);
}

TEST_CASE("usage errors exit 1 with a suggestion") {
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"frobnicate"}) == cli::kExitUsage);
  const Run r = run_binary("zones --maks fixtures/synthetic");
  CHECK(r.status == 1);
  CHECK(r.output.find("did you mean '--masks'") != std::string::npos);
  CHECK(cli::suggest_flag("--corpsu", {"--corpus", "--votes"}) == "--corpus");
  CHECK(cli::suggest_flag("--zzzzzzzz", {"--corpus"}).empty());
}

TEST_CASE("missing input exits 2 naming the path") {
  const Run r = run_binary("eval --pred /nope/preds.jsonl --corpus /nope/corpus.jsonl");
  CHECK(r.status == 2);
  CHECK(r.output.find("/nope/") != std::string::npos);
  CHECK(run({"stats", "--corpus", "/nope/corpus.jsonl"}) == cli::kExitData);
}

TEST_CASE("generate then apply-votes with an empty log") {
  testing::TempDir dir("cli_gen");
  const std::string corpus = (dir / "corpus.jsonl").string();
  REQUIRE(run({"generate", "--source", "fixtures/synthetic", "--out", corpus}) == 0);
  const Corpus generated = load_corpus(corpus);
  CHECK(generated.records.size() == 40);
  CHECK(std::filesystem::exists(corpus + ".quarantine.jsonl"));
  CHECK(std::filesystem::exists(corpus + ".config.toml"));

  const std::string retained = (dir / "retained.jsonl").string();
  REQUIRE(run({"apply-votes", "--corpus", corpus, "--votes", (dir / "votes.jsonl").string(), "--out", retained}) == 0);
  CHECK(load_corpus(retained).records.empty());
  CHECK(load_corpus(retained + ".pending.jsonl") == generated);
  CHECK(load_corpus(retained + ".rejected.jsonl").records.empty());
}

TEST_CASE("generate is byte-identical across runs and job counts") {
  testing::TempDir dir("cli_det");
  const std::string a = (dir / "a.jsonl").string(), b = (dir / "b.jsonl").string();
  REQUIRE(run({"--jobs", "1", "generate", "--source", "fixtures/synthetic", "--out", a}) == 0);
  REQUIRE(run({"--jobs", "4", "generate", "--source", "fixtures/synthetic", "--out", b}) == 0);
  CHECK(read_file(a) == read_file(b));
  CHECK(read_file(a + ".quarantine.jsonl") == read_file(b + ".quarantine.jsonl"));

  const std::string c = (dir / "c.jsonl").string();
  REQUIRE(run({"--seed", "9", "generate", "--source", "fixtures/synthetic", "--out", c}) == 0);
  CHECK(read_file(a) != read_file(c));
}

TEST_CASE("resolved config reproduces the run") {
  testing::TempDir dir("cli_cfg");
  const std::string a = (dir / "a.jsonl").string(), b = (dir / "b.jsonl").string();
  REQUIRE(run({"--seed", "4", "generate", "--source", "fixtures/synthetic", "--tau", "0.2", "--pairs-per-image", "3",
               "--out", a}) == 0);
  const std::string cfg = read_file(a + ".config.toml");
  CHECK(cfg.find("seed") != std::string::npos);
  CHECK(cfg.find("generate.tau") != std::string::npos);
  // Flags on the command line override the file.
  REQUIRE(run({"--config", a + ".config.toml", "generate", "--out", b}) == 0);
  CHECK(read_file(a) == read_file(b));
}

TEST_CASE("single-source generate, stats and dedupe") {
  testing::TempDir dir("cli_one");
  const std::string corpus = (dir / "kvasir.jsonl").string();
  REQUIRE(run({"generate", "--source", "fixtures/synthetic/kvasir", "--adapter", "kvasir", "--out", corpus}) == 0);
  CHECK(load_corpus(corpus).records.size() == 6);
  const std::string q = read_file(corpus + ".quarantine.jsonl");
  CHECK(q.find("INVALID") != std::string::npos);

  const std::string stats_out = (dir / "stats.json").string();
  REQUIRE(run({"stats", "--corpus", corpus, "--format", "json", "--out", stats_out}) == 0);
  const auto j = nlohmann::json::parse(read_file(stats_out));
  CHECK(j["totals"]["images"] == 6);

  const std::string deduped = (dir / "dd.jsonl").string();
  REQUIRE(run({"dedupe", "--corpus", corpus, "--out", deduped}) == 0);
  CHECK(read_file(deduped) == read_file(corpus));

  CHECK(run({"generate", "--source", "fixtures/synthetic/kvasir", "--modality", "endoscopy", "--adapter", "kvasir",
             "--out", corpus}) == cli::kExitUsage);
}

TEST_CASE("zones emits one line per mask") {
  testing::TempDir dir("cli_zones");
  const std::string out = (dir / "zones.jsonl").string();
  REQUIRE(run({"zones", "--masks", "fixtures/synthetic/kvasir/masks", "--out", out}) == 0);
  const std::string text = read_file(out);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  CHECK(text.find("\"INVALID\"") != std::string::npos);
}

TEST_CASE("grad-check and shape-check") {
  testing::TempDir dir("cli_nn");
  const std::string out = (dir / "gc.json").string();
  REQUIRE(run({"grad-check", "--component", "linear", "--component", "seg_loss", "--seeds", "2", "--report", "json",
               "--out", out}) == 0);
  const auto j = nlohmann::json::parse(read_file(out));
  CHECK(j["pass"] == true);
  CHECK(j["results"].size() == 4);
  CHECK(run({"grad-check", "--component", "bogus"}) == cli::kExitUsage);
  CHECK(run({"shape-check", "--no-run"}) == 0);
  CHECK(run({"shape-check", "--channels", "16", "--grid", "2", "--stages", "2", "--embed-dim", "8", "--tokens", "2",
             "--heads", "4"}) == 0);
}

TEST_CASE("export params writes a loadable fixture") {
  testing::TempDir dir("cli_export");
  const std::string prefix = (dir / "params").string();
  REQUIRE(run({"export", "--params", prefix, "--channels", "8", "--embed-dim", "6", "--heads", "2", "--stages", "1"}) ==
          0);
  CHECK(std::filesystem::exists(prefix + ".bin"));
  CHECK(std::filesystem::exists(prefix + ".json"));
  const nn::NamedTensors loaded = nn::load_tensors(prefix);
  nn::FusionParams fusion = nn::FusionParams::zeros({8, 6, 8, 2, true});
  nn::MaskHeadParams head = nn::MaskHeadParams::zeros({8, 1});
  nn::assign(loaded, fusion, &head);
  CHECK(nn::collect(fusion, &head) == loaded);
}

TEST_CASE("eval over a generated corpus") {
  testing::TempDir dir("cli_eval");
  const std::string corpus = (dir / "c.jsonl").string();
  REQUIRE(run({"generate", "--source", "fixtures/synthetic/isic", "--adapter", "isic", "--out", corpus}) == 0);
  const Corpus c = load_corpus(corpus);
  {
    std::ofstream preds(dir / "p.jsonl");
    for (const auto& r : c.records) {
      preds << nlohmann::json{{"sample_id", r.sample_id}, {"mask", r.mask_path}, {"answer", r.qa[0].answer}}.dump()
            << "\n";
    }
  }
  const std::string report = (dir / "r.json").string();
  REQUIRE(run({"eval", "--pred", (dir / "p.jsonl").string(), "--corpus", corpus, "--report", "json", "--out", report}) ==
          0);
  const auto j = nlohmann::json::parse(read_file(report));
  CHECK(j["overall"]["accuracy"] == 1.0);
  CHECK(j["overall"]["mdice"] == 1.0);
}
