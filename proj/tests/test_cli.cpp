#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>

#include "sfm/config.hpp"
#include "sfm/io.hpp"
#include "sfm/pipeline.hpp"
#include "sfm/viz.hpp"
#include "test_util.hpp"

using namespace sfm;
using namespace sfm::testing;

namespace {

// Small identity-encoder run so every command finishes in well under a second.
RunConfig feature_run(const std::filesystem::path& out) {
  RunConfig c = RunConfig::from_json(nlohmann::json::parse(R"({
    "seed": 3,
    "encoder": {"distill": "identity-8"},
    "data": {"source": "features", "num_classes": 4, "per_class": 30, "validation_per_class": 10,
             "feature_spread": 0.1},
    "distill": {"iterations": 60, "augment": {"brightness": false, "saturation": false, "contrast": false, "translate": false, "cutout": false, "flip": false}},
    "eval": {"iterations": 40, "golden_iterations": 100, "train_augmentation": false},
    "viz": {"k_classes": 4}
  })"));
  c.output_dir = out;
  return c;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(SFM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults and unknown keys") {
  const RunConfig d = RunConfig::from_json(nlohmann::json::object());
  CHECK(d.encoder.distill == "toy-conv-32");
  CHECK(d.encoder.eval_or_distill() == "toy-conv-32");
  CHECK(d.data.toy.per_class == 200);
  CHECK(d.data.validation_per_class == 50);
  CHECK(d.distill.method == DistillMethod::kSfm);
  CHECK(d.eval.strategy == EvalStrategy::kVanilla);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(nlohmann::json::parse(R"({"distill": {"iters": 5}})")),
                       doctest::Contains("distill.iters"), ValidationError);
  CHECK_THROWS_WITH_AS(RunConfig::from_json(nlohmann::json::parse(R"({"colour": 1})")),
                       doctest::Contains("colour"), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"eval": {"strategy": "kd"}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"seed": "x"})")), ValidationError);
}

TEST_CASE("config round trip and fingerprints") {
  TempDir dir("config");
  RunConfig a = feature_run(dir.path);
  const RunConfig b = RunConfig::from_json(a.to_json());
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.to_json() == b.to_json());
  RunConfig moved = a;
  moved.output_dir = "elsewhere";
  CHECK(moved.fingerprint() == a.fingerprint());
  RunConfig eval_only = a;
  eval_only.eval.iterations = 41;
  CHECK(eval_only.fingerprint() != a.fingerprint());
  CHECK(eval_only.stage_fingerprint("stats") == a.stage_fingerprint("stats"));
  CHECK(eval_only.stage_fingerprint("distill") == a.stage_fingerprint("distill"));
  RunConfig distill_changed = a;
  distill_changed.distill.iterations = 61;
  CHECK(distill_changed.stage_fingerprint("stats") == a.stage_fingerprint("stats"));
  CHECK(distill_changed.stage_fingerprint("distill") != a.stage_fingerprint("distill"));
  write_file_atomic(dir.path / "c.json", a.to_json().dump());
  CHECK(RunConfig::load(dir.path / "c.json").fingerprint() == a.fingerprint());
  CHECK_THROWS_AS(RunConfig::load(dir.path / "missing.json"), LoadError);
  write_file_atomic(dir.path / "bad.json", "{nope");
  CHECK_THROWS_AS(RunConfig::load(dir.path / "bad.json"), ValidationError);
}

TEST_CASE("propagated seeds") {
  RunConfig c;
  c.seed = 17;
  c.propagate_seed();
  CHECK(c.distill.seed == 17);
  CHECK(c.eval.seed == 17);
  CHECK(c.theory.seed == 17);
}

TEST_CASE("command parsing") {
  CHECK(parse_command("baseline") == Command::kBaseline);
  CHECK(to_string(Command::kViz) == "viz");
  CHECK_THROWS_AS(parse_command("train"), ValidationError);
}

TEST_CASE("distill without statistics names the missing file") {
  TempDir dir("nostats");
  const RunConfig c = feature_run(dir.path);
  const std::string expected = RunLayout{dir.path}.stats().string();
  CHECK_THROWS_WITH_AS(run_pipeline(Command::kDistill, c), doctest::Contains(expected.c_str()), LoadError);
  CHECK_THROWS_AS(run_pipeline(Command::kViz, c), LoadError);
}

TEST_CASE("full pipeline on features") {
  TempDir dir("pipeline");
  const RunConfig c = feature_run(dir.path);
  const RunLayout layout{dir.path};
  const auto stats = run_pipeline(Command::kStats, c);
  CHECK(std::filesystem::exists(layout.stats()));
  CHECK(std::filesystem::exists(layout.stats_meta()));
  CHECK(std::filesystem::exists(layout.effective_config()));
  CHECK(stats.encoder_checksum_start == stats.encoder_checksum_end);

  run_pipeline(Command::kDistill, c);
  CHECK(std::filesystem::exists(layout.synthetic(c.distill) / "metadata.json"));

  const auto e1 = run_pipeline(Command::kEval, c);
  const auto e2 = run_pipeline(Command::kEval, c);
  REQUIRE(e1.report);
  REQUIRE(e2.report);
  CHECK(e1.report->fingerprint() == e2.report->fingerprint());
  CHECK(e1.report->accuracy >= 0.0);
  CHECK(e1.encoder_checksum_start == e1.encoder_checksum_end);
  CHECK(std::filesystem::exists(layout.reports()));
  CHECK(std::filesystem::exists(layout.summary()));

  RunConfig ci = c;
  ci.eval.strategy = EvalStrategy::kCi;
  const auto ci_report = run_pipeline(Command::kEval, ci);
  REQUIRE(ci_report.report);
  CHECK(ci_report.report->strategy == "ci");

  RunConfig base = c;
  base.baseline.method = BaselineMethod::kNeighbors;
  const auto b = run_pipeline(Command::kBaseline, base);
  REQUIRE(b.report);
  CHECK(std::filesystem::exists(layout.baseline(BaselineMethod::kNeighbors)));

  run_pipeline(Command::kViz, c);
  for (const char* f : {"flow.png", "flow.csv", "cosine_summary.txt"}) {
    CHECK(std::filesystem::exists(layout.viz_dir() / f));
  }

  RunConfig th = c;
  th.theory.num_classes = 10;
  th.theory.feature_dim = 16;
  th.theory.trials = 1000;
  run_pipeline(Command::kTheory, th);
  CHECK(std::filesystem::exists(layout.theory_csv()));
  CHECK(std::filesystem::exists(layout.theory_text()));

  // Statistics from another encoder are refused.
  RunConfig wrong_dim = c;
  wrong_dim.encoder.distill = "identity-6";
  CHECK_THROWS_AS(run_pipeline(Command::kDistill, wrong_dim), ValidationError);

  // Changing the data invalidates the cached statistics.
  RunConfig data_changed = c;
  data_changed.data.feature_spread = 0.2;
  CHECK_THROWS_AS(run_pipeline(Command::kDistill, data_changed), ValidationError);
  // A stale distillation is refused after the distill config changes.
  RunConfig new_distill = c;
  new_distill.distill.learning_rate = 0.02;
  CHECK_THROWS_AS(run_pipeline(Command::kEval, new_distill), ValidationError);
}

TEST_CASE("flow projection") {
  std::mt19937_64 rng(8);
  const Matrix flow = random_matrix(5, 7, rng);
  const auto same = project_flows(flow, flow, 5);
  CHECK(same.mean_cosine == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.statistical_2d.isApprox(same.synthetic_2d));
  CHECK(same.per_class_cosine.size() == 5);

  // Rank-2 union around the origin: two components reconstruct it exactly.
  const Matrix basis = random_matrix(2, 7, rng);
  const Matrix stat = random_matrix(5, 2, rng) * basis;
  const Matrix syn = random_matrix(5, 2, rng) * basis;
  CHECK(project_flows(stat, syn, 3).reprojection_error < 1e-6);
  CHECK(project_flows(stat, syn, 3).statistical_2d.rows() == 3);

  CHECK_THROWS_AS(project_flows(flow, flow, 6), ValidationError);
  CHECK_THROWS_AS(project_flows(flow, flow, 0), ValidationError);
  CHECK_THROWS_AS(project_flows(flow, random_matrix(4, 7, rng), 2), ShapeError);

  TempDir dir("viz");
  const auto emitted = emit_flow_plot(flow, -flow, 5, dir.path);
  CHECK(emitted.mean_cosine == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(read_file(dir.path / "flow.png").substr(1, 3) == "PNG");
  CHECK(read_file(dir.path / "cosine_summary.txt").find("-1") != std::string::npos);
}

TEST_CASE("cli exit codes and options after the subcommand") {
  TempDir dir("cli");
  const auto log = dir.path / "log.txt";
  write_file_atomic(dir.path / "c.json", feature_run(dir.path / "run").to_json().dump());
  const std::string cfg = "--config " + (dir.path / "c.json").string() + " --out " + (dir.path / "run").string();
  CHECK(run_cli("distill " + cfg, log) == 3);
  CHECK(read_file(log).find("stats.sfmstats") != std::string::npos);
  CHECK(run_cli("stats " + cfg, log) == 0);
  CHECK(run_cli("distill " + cfg + " --method sfm", log) == 0);
  CHECK(run_cli("eval " + cfg + " --strategy ci", log) == 0);
  CHECK(read_file(log).find("ci") != std::string::npos);
  CHECK(run_cli("eval " + cfg + " --strategy kd", log) != 0);
  CHECK(run_cli("baseline " + cfg + " --method centroids", log) == 0);
  CHECK(std::filesystem::exists(dir.path / "run" / "baseline-centroids.sfmt"));
  CHECK(run_cli("frobnicate", log) != 0);
}
