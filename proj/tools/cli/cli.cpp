#include "cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cctype>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "posmed/corpus.hpp"
#include "posmed/error.hpp"
#include "posmed/mask_geometry.hpp"
#include "posmed/metrics.hpp"
#include "posmed/nn/embedding.hpp"
#include "posmed/nn/fusion.hpp"
#include "posmed/nn/grad_check.hpp"
#include "posmed/nn/mask_head.hpp"
#include "posmed/nn/param_io.hpp"
#include "posmed/parallel.hpp"
#include "posmed/qa_templater.hpp"
#include "posmed/review.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace posmed::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A check ran to completion and reported failure.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::size_t jobs = default_jobs();
  std::uint64_t seed = 0;
  std::string log_level = "info";
};

struct ZoneFlags {
  double tau = 0.1;
  std::string tau_mode = "relative";

  ZoneConfig resolve() const {
    const auto mode = tau_mode_from_name(tau_mode);
    if (!mode) throw UsageError("--tau-mode must be 'absolute' or 'relative', got '" + tau_mode + "'");
    ZoneConfig cfg{tau, *mode};
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

void add_zone_flags(CLI::App* cmd, ZoneFlags& z) {
  cmd->add_option("--tau", z.tau, "Center threshold (fraction of min(H,W) or pixels)")->capture_default_str();
  cmd->add_option("--tau-mode", z.tau_mode, "abs|absolute or rel|relative")->capture_default_str();
}

std::shared_ptr<spdlog::logger> logger() {
  static const std::shared_ptr<spdlog::logger> log = [] {
    auto l = std::make_shared<spdlog::logger>("posmed", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

void emit(const std::string& contents, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << contents;
    std::cout.flush();
  } else {
    write_file_atomic(out, contents);
  }
}

// Every run that writes files records its resolved configuration beside them:
// the global flags plus the active subcommand's section, readable by --config.
void write_resolved_config(const CLI::App& app, const std::string& out) {
  if (out.empty() || out == "-") return;
  std::string prefix;
  const CLI::App* root = &app;
  for (; root->get_parent(); root = root->get_parent()) prefix = root->get_name() + "." + prefix;
  std::istringstream all(root->config_to_str(true, false));
  std::string resolved;
  for (std::string line; std::getline(all, line);) {
    const std::string key = line.substr(0, line.find('='));
    const bool global = key.find('.') == std::string::npos;
    const bool unset = line.ends_with("=\"\"");
    if (!unset && (global || key.rfind(prefix, 0) == 0)) resolved += line + "\n";
  }
  write_file_atomic(out + ".config.toml", resolved);
}

// ---------------------------------------------------------------------------
// zones

struct ZonesCmd {
  std::string masks;
  ZoneFlags zone;
  std::string out;

  void run(const CLI::App& app) const {
    const ZoneConfig cfg = zone.resolve();
    if (!fs::is_directory(masks)) throw DataError("mask directory '" + masks + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(masks)) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM")) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::string body;
    for (const fs::path& f : files) {
      const ZoneResult r = locate_zone(BinaryMask::load(f), cfg);
      ojson j = {{"mask", f.generic_string()}, {"zone", zone_code(r.zone)}};
      j["bbox"] = r.bbox ? ojson::array({r.bbox->x_min, r.bbox->y_min, r.bbox->x_max, r.bbox->y_max}) : ojson();
      j["distance"] = r.distance ? ojson(*r.distance) : ojson();
      body += j.dump() + "\n";
    }
    emit(body, out);
    write_resolved_config(app, out);
    logger()->info("classified {} masks", files.size());
  }
};

// ---------------------------------------------------------------------------
// generate

struct GenerateCmd {
  std::string source;
  std::string modality;
  std::string adapter;
  std::string templates = "fixtures/templates.jsonl";
  ZoneFlags zone;
  std::size_t pairs_per_image = 8;
  std::string created_at = "1970-01-01T00:00:00Z";
  std::string out;
  std::string polish_endpoint;
  int polish_timeout_ms = 5000;
  std::size_t polish_in_flight = 4;

  void run(const CLI::App& app, const GlobalOptions& g) const {
    IngestOptions opts;
    opts.zone = zone.resolve();
    opts.pairs_per_image = pairs_per_image;
    opts.seed = g.seed;
    opts.jobs = g.jobs;
    if (pairs_per_image == 0) throw UsageError("--pairs-per-image must be >= 1");

    const std::vector<QaTemplate> tmpls = load_templates(templates);
    IngestResult result;
    if (!adapter.empty()) {
      const SourceAdapter* a = find_adapter(adapter);
      if (!a) throw UsageError("unknown source adapter '" + adapter + "'");
      result = ingest(source, *a, opts, tmpls);
    } else if (!modality.empty()) {
      const auto m = modality_from_name(modality);
      if (!m) throw UsageError("unknown modality '" + modality + "'");
      result = ingest(source, generic_adapter(*m), opts, tmpls);
    } else {
      result = ingest_bundle(source, opts, tmpls);
    }

    if (!polish_endpoint.empty()) polish_records(result.records);

    for (const QuarantineEntry& q : result.quarantined) {
      logger()->warn("quarantined {} ({}): {}", q.sample_id, quarantine_reason_code(q.reason), q.detail);
    }
    for (const IngestError& e : result.errors) logger()->warn("skipped {}: {}", e.path, e.message);
    if (result.records.empty()) throw DataError("no usable samples under '" + source + "'");

    Corpus corpus;
    corpus.header.zone = opts.zone;
    corpus.header.created_at = created_at;
    corpus.records = std::move(result.records);
    export_corpus(out, corpus);
    write_file_atomic(out + ".quarantine.jsonl", serialize_quarantine(result));
    write_resolved_config(app, out);
    logger()->info("{} files, {} samples, {} quarantined, {} unreadable", result.files_seen,
                   corpus.records.size(), result.quarantined.size(), result.errors.size());
  }

  void polish_records(std::vector<SampleRecord>& records) const {
    PolishClientConfig client;
    client.endpoint = polish_endpoint;
    client.enabled = true;
    client.timeout = std::chrono::milliseconds(polish_timeout_ms);
    client.max_in_flight = std::max<std::size_t>(1, polish_in_flight);
    for (SampleRecord& r : records) {
      const std::vector<PolishOutcome> outcomes = polish_all(r.qa, client);
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].warning) logger()->warn("{}: {}", r.sample_id, *outcomes[i].warning);
        r.qa[i] = outcomes[i].pair;
      }
      r.qa = dedupe(r.qa);
    }
  }
};

// ---------------------------------------------------------------------------
// stats, dedupe

struct StatsCmd {
  std::string corpus;
  std::string format = "table";
  std::string out;

  void run(const CLI::App& app) const {
    const Corpus c = load_corpus(corpus);
    const CorpusManifest m = stats(c.records, c.header);
    emit(format == "json" ? manifest_json(m) : manifest_table(m), out);
    write_resolved_config(app, out);
  }
};

struct DedupeCmd {
  std::string corpus;
  std::string out;

  void run(const CLI::App& app) const {
    Corpus c = load_corpus(corpus);
    std::size_t before = 0, after = 0;
    for (const SampleRecord& r : c.records) before += r.qa.size();
    dedupe_records(c.records);
    for (const SampleRecord& r : c.records) after += r.qa.size();
    emit(serialize_corpus(c), out);
    write_resolved_config(app, out);
    logger()->info("removed {} duplicate pairs, {} remain", before - after, after);
  }
};

// ---------------------------------------------------------------------------
// review serve, apply-votes

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw UsageError("--bind expects host:port, got '" + bind + "'");
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(bind.substr(colon + 1), &used);
    if (used != bind.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw UsageError("--bind port is not a number in '" + bind + "'");
  }
  if (port < 0 || port > 65535) throw UsageError("--bind port out of range in '" + bind + "'");
  return {bind.substr(0, colon), port};
}

struct ServeCmd {
  std::string corpus;
  std::string votes;
  std::string feedback;
  std::string bind = "127.0.0.1:8080";
  std::size_t reviewers = 3;

  void run() const {
    if (reviewers == 0) throw UsageError("--reviewers must be >= 1");
    const auto [host, port] = parse_bind(bind);
    ReviewServiceOptions opts;
    opts.vote_log = votes;
    opts.feedback_log = feedback;
    opts.assigned_reviewers = reviewers;
    ReviewService service(load_corpus(corpus), opts);

    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    bool bound = true;
    std::jthread server([&] { bound = service.listen(host, port); });
    std::jthread waiter([&] {
      int sig = 0;
      sigwait(&stop_signals, &sig);
      service.stop();
    });
    service.wait_until_ready();
    logger()->info("review service on http://{}:{}/api/v1 ({} reviewers per sample)", host, port, reviewers);
    server.join();
    if (!bound) {
      pthread_kill(waiter.native_handle(), SIGTERM);
      throw DataError("cannot bind " + bind);
    }
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
};

struct ApplyVotesCmd {
  std::string corpus;
  std::string votes;
  std::string out;
  std::size_t reviewers = 3;

  void run(const CLI::App& app) const {
    if (reviewers == 0) throw UsageError("--reviewers must be >= 1");
    const Corpus c = load_corpus(corpus);
    const std::vector<Vote> log = read_vote_log(votes);
    std::size_t orphans = 0;
    const std::vector<ReviewDecision> decisions = decide_all(c, log, reviewers, &orphans);
    const ApplyResult r = apply_votes(c, decisions);
    export_corpus(out, r.retained);
    export_corpus(out + ".rejected.jsonl", r.rejected);
    export_corpus(out + ".pending.jsonl", r.pending);
    write_resolved_config(app, out);
    if (orphans > 0) logger()->warn("{} votes reference samples absent from the corpus", orphans);
    logger()->info("retained {}, rejected {}, pending {}", r.retained.records.size(), r.rejected.records.size(),
                   r.pending.records.size());
  }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
  std::string pred;
  std::string corpus;
  std::string report = "table";
  std::string empty_pair = "one";
  std::string out;

  void run(const CLI::App& app, const GlobalOptions& g) const {
    EvalOptions opts;
    opts.jobs = g.jobs;
    if (empty_pair == "one") opts.empty_policy = EmptyPairPolicy::ScoreOne;
    else if (empty_pair == "zero") opts.empty_policy = EmptyPairPolicy::ScoreZero;
    else throw UsageError("--empty-pair must be 'one' or 'zero'");
    const std::vector<Prediction> preds = load_predictions(pred);
    const Corpus c = load_corpus(corpus);
    const EvalReport r = evaluate_run(preds, c.records, opts);
    if (!r.unmatched.empty()) logger()->warn("{} predictions have no corpus sample", r.unmatched.size());
    emit(report == "json" ? report_json(r) : report_table(r), out);
    write_resolved_config(app, out);
  }
};

// ---------------------------------------------------------------------------
// grad-check, shape-check

double grad_threshold(nn::GradComponent c) { return c == nn::GradComponent::Linear ? 1e-9 : 1e-4; }

struct GradCheckCmd {
  std::vector<std::string> components{"fuse", "seg_loss", "text_loss", "composite", "linear"};
  std::size_t seeds = 10;
  std::string report = "table";
  std::string out;

  void run(const CLI::App& app, const GlobalOptions& g) const {
    std::vector<nn::GradComponent> which;
    for (const std::string& name : components) {
      const auto c = nn::component_from_name(name);
      if (!c) throw UsageError("unknown component '" + name + "'");
      which.push_back(*c);
    }
    if (seeds == 0) throw UsageError("--seeds must be >= 1");
    std::vector<std::uint64_t> seed_list;
    for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(g.seed + i);

    const nn::GradCheckConfig cfg;
    bool all_pass = true;
    ojson results = ojson::array();
    std::ostringstream table;
    table << "component   seed  rel_error   threshold  worst\n";
    for (nn::GradComponent c : which) {
      for (const nn::GradCheckResult& r : nn::grad_check_seeds(c, seed_list, cfg, g.jobs)) {
        const double limit = grad_threshold(c);
        const bool pass = r.max_rel_error < limit;
        all_pass = all_pass && pass;
        results.push_back({{"component", nn::component_name(c)},
                           {"seed", r.seed},
                           {"max_rel_error", r.max_rel_error},
                           {"max_abs_error", r.max_abs_error},
                           {"worst", r.worst},
                           {"worst_analytic", r.worst_analytic},
                           {"worst_numeric", r.worst_numeric},
                           {"worst_block", r.worst_block},
                           {"worst_block_error", r.worst_block_error},
                           {"checked", r.checked},
                           {"threshold", limit},
                           {"pass", pass}});
        char line[256];
        std::snprintf(line, sizeof line, "%-10s %5llu  %.3e  %.0e      %s%s\n",
                      std::string(nn::component_name(c)).c_str(), static_cast<unsigned long long>(r.seed),
                      r.max_rel_error, limit, r.worst.c_str(), pass ? "" : "  FAIL");
        table << line;
      }
    }
    if (report == "json") {
      const ojson doc = {{"step", cfg.step}, {"pass", all_pass}, {"results", results}};
      emit(doc.dump(2) + "\n", out);
    } else {
      emit(table.str(), out);
    }
    write_resolved_config(app, out);
    if (!all_pass) throw CheckFailed("gradient check exceeded its threshold");
  }
};

struct ShapeCheckCmd {
  std::size_t channels = 256;
  std::size_t grid = 16;
  std::size_t stages = 6;
  std::size_t embed_dim = 4096;
  std::size_t tokens = 8;
  std::size_t heads = 8;
  bool run_forward = true;

  void run(const GlobalOptions& g) const {
    nn::MaskHeadConfig hc;
    hc.in_channels = channels;
    hc.stages = stages;
    const nn::Shape in{1, channels, grid, grid};
    const nn::Shape expected{1, 1, grid << stages, grid << stages};
    const nn::Shape predicted = nn::mask_head_output_shape(in, hc);
    std::cout << "fused input  " << nn::shape_string(in) << "\n";
    std::cout << "mask logits  " << nn::shape_string(predicted) << " (shape path)\n";
    if (predicted != expected) throw CheckFailed("shape path disagrees with " + nn::shape_string(expected));
    if (!run_forward) return;

    nn::FusionConfig fc;
    fc.image_channels = channels;
    fc.shared_dim = channels;
    fc.embed_dim = embed_dim;
    fc.heads = heads;
    nn::UniformSource rng(g.seed);
    const nn::FusionParams fp = nn::FusionParams::uniform(fc, rng);
    const nn::MaskHeadParams hp = nn::MaskHeadParams::uniform(hc, rng);
    const nn::Tensor z_image = nn::uniform_tensor(in, rng);
    const nn::EmbeddingProviderStub embed(tokens, embed_dim, g.seed);
    const std::vector<std::string> keys{"shape-check"};
    const nn::Tensor fused = nn::fuse(z_image, embed.embed_batch(keys), fp);
    const nn::Tensor logits = nn::mask_head(fused, hp);
    std::cout << "mask logits  " << nn::shape_string(logits.shape()) << " (forward run)\n";
    if (logits.shape() != expected) throw CheckFailed("forward run produced " + nn::shape_string(logits.shape()));
    if (!logits.all_finite()) throw CheckFailed("forward run produced non-finite logits");
  }
};

// ---------------------------------------------------------------------------
// export

struct ExportCmd {
  std::string corpus;
  std::string votes;
  std::size_t reviewers = 3;
  std::string split;
  std::string modality;
  std::string params;
  std::size_t channels = 32;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t stages = 2;
  std::string out;

  void run(const CLI::App& app, const GlobalOptions& g) const {
    if (!params.empty()) return export_params(app, g);
    if (corpus.empty() || out.empty()) throw UsageError("export needs --corpus and --out (or --params)");
    Corpus c = load_corpus(corpus);
    if (!votes.empty()) {
      const std::vector<Vote> log = read_vote_log(votes);
      c = apply_votes(c, decide_all(c, log, reviewers)).retained;
    }
    std::optional<Split> want_split;
    if (!split.empty()) {
      want_split = split_from_name(split);
      if (!want_split) throw UsageError("--split must be 'train' or 'test'");
    }
    std::optional<Modality> want_modality;
    if (!modality.empty()) {
      want_modality = modality_from_name(modality);
      if (!want_modality) throw UsageError("unknown modality '" + modality + "'");
    }
    std::erase_if(c.records, [&](const SampleRecord& r) {
      return (want_split && r.split != *want_split) || (want_modality && r.modality != *want_modality);
    });
    export_corpus(out, c);
    write_resolved_config(app, out);
    logger()->info("exported {} samples", c.records.size());
  }

  void export_params(const CLI::App& app, const GlobalOptions& g) const {
    nn::FusionConfig fc;
    fc.image_channels = channels;
    fc.shared_dim = channels;
    fc.embed_dim = embed_dim;
    fc.heads = heads;
    nn::MaskHeadConfig hc;
    hc.in_channels = channels;
    hc.stages = stages;
    try {
      fc.validate();
    } catch (const ShapeError& e) {
      throw UsageError(e.what());
    }
    nn::UniformSource rng(g.seed);
    const nn::FusionParams fp = nn::FusionParams::uniform(fc, rng);
    const nn::MaskHeadParams hp = nn::MaskHeadParams::uniform(hc, rng);
    nn::save_tensors(params, nn::collect(fp, &hp));
    write_resolved_config(app, params);
    logger()->info("wrote {}.bin and {}.json", params, params);
  }
};

// ---------------------------------------------------------------------------
// Parsing

void collect_flags(const CLI::App& app, std::vector<std::string>& out) {
  for (const CLI::Option* opt : app.get_options()) {
    for (const std::string& n : opt->get_lnames()) out.push_back("--" + n);
    for (const std::string& n : opt->get_snames()) out.push_back("-" + n);
  }
  for (const CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) collect_flags(*sub, out);
}

std::string unknown_flag_message(const CLI::App& app, const std::vector<std::string>& args) {
  std::vector<std::string> known;
  collect_flags(app, known);
  for (const std::string& a : args) {
    if (a.size() < 2 || a[0] != '-' || a == "--") continue;
    if (std::isdigit(static_cast<unsigned char>(a[1])) || a[1] == '.') continue;
    std::string flag = a.substr(0, a.find('='));
    if (std::find(known.begin(), known.end(), flag) != known.end()) continue;
    std::string msg = "unknown flag '" + flag + "'";
    const std::string hint = suggest_flag(flag, known);
    if (!hint.empty()) msg += "; did you mean '" + hint + "'?";
    return msg;
  }
  return {};
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Position-reasoning dataset pipeline, evaluation battery and fusion-decoder checks", "posmed"};
  app.set_config("--config", "", "Read flags from a key = value config file (flags on the command line win)");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "posmed 0.1.0");

  GlobalOptions g;
  app.add_option("--jobs", g.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  ZonesCmd zones;
  auto* c_zones = app.add_subcommand("zones", "Classify every mask in a directory into a zone");
  c_zones->add_option("--masks", zones.masks, "Directory of PNG/PGM masks")->required();
  add_zone_flags(c_zones, zones.zone);
  c_zones->add_option("--out", zones.out, "Output JSONL (default stdout)");

  GenerateCmd gen;
  auto* c_gen = app.add_subcommand("generate", "Build a corpus from a source directory or bundle");
  c_gen->add_option("--source", gen.source, "Source root, or bundle root with one directory per adapter")
      ->required();
  auto* o_mod = c_gen->add_option("--modality", gen.modality, "Treat --source as one source of this modality");
  c_gen->add_option("--adapter", gen.adapter, "Treat --source as this named source adapter")->excludes(o_mod);
  c_gen->add_option("--templates", gen.templates, "QA template JSONL")->capture_default_str();
  add_zone_flags(c_gen, gen.zone);
  c_gen->add_option("--pairs-per-image", gen.pairs_per_image, "QA pairs sampled per image")->capture_default_str();
  c_gen->add_option("--created-at", gen.created_at, "Timestamp recorded in the corpus header")
      ->capture_default_str();
  c_gen->add_option("--polish-endpoint", gen.polish_endpoint, "Enable polishing through this HTTP endpoint");
  c_gen->add_option("--polish-timeout-ms", gen.polish_timeout_ms, "Polish request timeout")->capture_default_str();
  c_gen->add_option("--polish-in-flight", gen.polish_in_flight, "Concurrent polish requests")
      ->capture_default_str();
  c_gen->add_option("--out", gen.out, "Corpus JSONL")->required();

  StatsCmd st;
  auto* c_stats = app.add_subcommand("stats", "Summarize a corpus");
  c_stats->add_option("--corpus", st.corpus, "Corpus JSONL")->required();
  c_stats->add_option("--format", st.format, "table|json")
      ->capture_default_str()
      ->check(CLI::IsMember({"table", "json"}));
  c_stats->add_option("--out", st.out, "Output file (default stdout)");

  DedupeCmd dd;
  auto* c_dedupe = app.add_subcommand("dedupe", "Remove repeated QA pairs within each sample");
  c_dedupe->add_option("--corpus", dd.corpus, "Corpus JSONL")->required();
  c_dedupe->add_option("--out", dd.out, "Output corpus (default stdout)");

  ServeCmd serve;
  auto* c_review = app.add_subcommand("review", "Expert review");
  c_review->require_subcommand(1);
  auto* c_serve = c_review->add_subcommand("serve", "Run the review HTTP API");
  c_serve->add_option("--corpus", serve.corpus, "Corpus JSONL")->required();
  c_serve->add_option("--votes", serve.votes, "Append-only vote log")->required();
  c_serve->add_option("--feedback", serve.feedback, "Feedback log (default <votes>.feedback.jsonl)");
  c_serve->add_option("--bind", serve.bind, "host:port")->capture_default_str();
  c_serve->add_option("--reviewers", serve.reviewers, "Reviewers assigned per sample")->capture_default_str();

  ApplyVotesCmd av;
  auto* c_apply = app.add_subcommand("apply-votes", "Split a corpus by majority vote");
  c_apply->add_option("--corpus", av.corpus, "Corpus JSONL")->required();
  c_apply->add_option("--votes", av.votes, "Vote log (missing file = no votes)")->required();
  c_apply->add_option("--out", av.out, "Retained corpus; .rejected/.pending sidecars beside it")->required();
  c_apply->add_option("--reviewers", av.reviewers, "Reviewers assigned per sample")->capture_default_str();

  EvalCmd ev;
  auto* c_eval = app.add_subcommand("eval", "Score predictions against a corpus");
  c_eval->add_option("--pred", ev.pred, "Predictions JSONL")->required();
  c_eval->add_option("--corpus", ev.corpus, "Corpus JSONL")->required();
  c_eval->add_option("--report", ev.report, "table|json")
      ->capture_default_str()
      ->check(CLI::IsMember({"table", "json"}));
  c_eval->add_option("--empty-pair", ev.empty_pair, "Score when both masks are empty: one|zero")
      ->capture_default_str();
  c_eval->add_option("--out", ev.out, "Output file (default stdout)");

  GradCheckCmd gc;
  auto* c_grad = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
  c_grad->add_option("--component", gc.components, "fuse|seg_loss|text_loss|composite|linear (repeatable)")
      ->capture_default_str();
  c_grad->add_option("--seeds", gc.seeds, "Number of seeds, starting at --seed")->capture_default_str();
  c_grad->add_option("--report", gc.report, "table|json")
      ->capture_default_str()
      ->check(CLI::IsMember({"table", "json"}));
  c_grad->add_option("--out", gc.out, "Output file (default stdout)");

  ShapeCheckCmd sc;
  auto* c_shape = app.add_subcommand("shape-check", "Verify the fused-features to mask-logits shape contract");
  c_shape->add_option("--channels", sc.channels, "Image feature channels")->capture_default_str();
  c_shape->add_option("--grid", sc.grid, "Feature grid side")->capture_default_str();
  c_shape->add_option("--stages", sc.stages, "Upsampling stages in the mask head")->capture_default_str();
  c_shape->add_option("--embed-dim", sc.embed_dim, "Language embedding width")->capture_default_str();
  c_shape->add_option("--tokens", sc.tokens, "Embedding tokens per sample")->capture_default_str();
  c_shape->add_option("--heads", sc.heads, "Attention heads")->capture_default_str();
  c_shape->add_flag("!--no-run", sc.run_forward, "Shape path only, no forward pass");

  ExportCmd ex;
  auto* c_export = app.add_subcommand("export", "Export a filtered corpus, or seeded parameter fixtures");
  c_export->add_option("--corpus", ex.corpus, "Corpus JSONL");
  c_export->add_option("--votes", ex.votes, "Keep only samples retained by this vote log");
  c_export->add_option("--reviewers", ex.reviewers, "Reviewers assigned per sample")->capture_default_str();
  c_export->add_option("--split", ex.split, "train|test");
  c_export->add_option("--modality", ex.modality, "Keep one modality");
  c_export->add_option("--out", ex.out, "Output corpus");
  c_export->add_option("--params", ex.params, "Write <prefix>.bin/.json parameter fixtures instead");
  c_export->add_option("--channels", ex.channels, "Image feature channels")->capture_default_str();
  c_export->add_option("--embed-dim", ex.embed_dim, "Language embedding width")->capture_default_str();
  c_export->add_option("--heads", ex.heads, "Attention heads")->capture_default_str();
  c_export->add_option("--stages", ex.stages, "Upsampling stages in the mask head")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = unknown_flag_message(app, {args.begin() + 1, args.end()});
    if (msg.empty()) msg = e.what();
    std::cerr << "posmed: " << msg << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  logger()->set_level(spdlog::level::from_str(g.log_level));

  try {
    if (c_zones->parsed()) zones.run(*c_zones);
    else if (c_gen->parsed()) gen.run(*c_gen, g);
    else if (c_stats->parsed()) st.run(*c_stats);
    else if (c_dedupe->parsed()) dd.run(*c_dedupe);
    else if (c_serve->parsed()) serve.run();
    else if (c_apply->parsed()) av.run(*c_apply);
    else if (c_eval->parsed()) ev.run(*c_eval, g);
    else if (c_grad->parsed()) gc.run(*c_grad, g);
    else if (c_shape->parsed()) sc.run(g);
    else if (c_export->parsed()) ex.run(*c_export, g);
  } catch (const UsageError& e) {
    logger()->error("{}", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    logger()->error("{}", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    logger()->error("{}", e.what());
    return kExitData;
  } catch (const CheckFailed& e) {
    logger()->error("{}", e.what());
    return kExitInternal;
  } catch (const std::exception& e) {
    logger()->error("internal error: {}", e.what());
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace

std::string suggest_flag(const std::string& unknown, const std::vector<std::string>& known) {
  std::string best;
  std::size_t best_d = 4;
  for (const std::string& k : known) {
    const std::size_t d = edit_distance(unknown, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

int dispatch(const std::vector<std::string>& args) {
  if (args.empty()) return kExitUsage;
  return run(args);
}

int dispatch(int argc, const char* const* argv) { return dispatch(std::vector<std::string>(argv, argv + argc)); }

}  // namespace posmed::cli
