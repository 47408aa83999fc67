#include "sfm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "sfm/io.hpp"
#include "sfm/rng.hpp"
#include "sfm/statistics.hpp"
#include "sfm/viz.hpp"

namespace sfm {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Command command) {
  switch (command) {
    case Command::kStats: return "stats";
    case Command::kDistill: return "distill";
    case Command::kEval: return "eval";
    case Command::kBaseline: return "baseline";
    case Command::kTheory: return "theory";
    case Command::kViz: return "viz";
  }
  return "?";
}

Command parse_command(const std::string& text) {
  for (Command c : {Command::kStats, Command::kDistill, Command::kEval, Command::kBaseline, Command::kTheory,
                    Command::kViz}) {
    if (to_string(c) == text) return c;
  }
  throw ValidationError("unknown command '" + text + "' (stats, distill, eval, baseline, theory, viz)");
}

fs::path RunLayout::synthetic(const DistillConfig& config) const {
  std::string name = "synthetic-" + to_string(config.method);
  if (config.method == DistillMethod::kLgm) name += "-" + to_string(config.lgm_w_mode);
  return root / name;
}

fs::path RunLayout::golden(std::uint64_t fingerprint) const { return root / ("golden-" + hex64(fingerprint) + ".sfmt"); }

fs::path RunLayout::baseline(BaselineMethod method) const { return root / ("baseline-" + to_string(method) + ".sfmt"); }

DataSplits load_data(const RunConfig& config, const Encoder& encoder) {
  DataSplits out;
  if (config.data.source == DataSource::kFile) {
    out.train = load_dataset(config.data.train_path);
    out.validation = load_dataset(config.data.validation_path);
    if (out.train.num_classes != out.validation.num_classes) {
      throw ValidationError("training and validation files disagree on the number of classes");
    }
    return out;
  }
  // One generated pool split by index; labels are interleaved so both parts stay balanced.
  const int classes = config.data.toy.num_classes;
  const std::size_t per_class = config.data.toy.per_class + config.data.validation_per_class;
  LabeledImages pool;
  if (config.data.source == DataSource::kToy) {
    ToyDataConfig toy = config.data.toy;
    toy.per_class = per_class;
    toy.seed = derive_seed(config.seed, {31});
    pool = make_toy_dataset(toy);
  } else {
    if (!encoder.spec().is_identity()) throw ValidationError("data.source = features needs an identity encoder");
    pool = make_feature_dataset(classes, per_class, encoder.feature_dim(), config.data.feature_spread,
                                derive_seed(config.seed, {32}));
  }
  const std::size_t n_train = config.data.toy.per_class * static_cast<std::size_t>(classes);
  std::vector<std::size_t> train_idx(n_train), val_idx(pool.size() - n_train);
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(val_idx.begin(), val_idx.end(), n_train);
  out.train = pool.select(train_idx);
  out.validation = pool.select(val_idx);
  return out;
}

namespace {

json artifact_stamp(const RunConfig& config, const std::string& stage) {
  return {{"tool_version", kToolVersion},
          {"config_fingerprint", hex64(config.fingerprint())},
          {"stage_fingerprint", hex64(config.stage_fingerprint(stage))}};
}

void write_json(const fs::path& path, const json& j, std::vector<fs::path>& artifacts) {
  write_file_atomic(path, j.dump(2) + "\n");
  artifacts.push_back(path);
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

struct Context {
  const RunConfig& config;
  RunLayout layout;
  Encoder encoder_d;
  std::optional<Encoder> encoder_e;
  PipelineResult result;

  explicit Context(const RunConfig& c)
      : config(c), layout{c.output_dir}, encoder_d(load_encoder(c.encoder.distill, c.encoder.weight_seed)) {
    result.encoder_checksum_start = encoder_d.checksum();
  }

  const Encoder& eval_encoder() {
    if (config.encoder.eval.empty() || config.encoder.eval == config.encoder.distill) return encoder_d;
    if (!encoder_e) encoder_e = load_encoder(config.encoder.eval, config.encoder.weight_seed);
    return *encoder_e;
  }
};

ClassStatistics load_checked_statistics(Context& ctx) {
  const fs::path path = ctx.layout.stats();
  if (!fs::exists(path)) {
    throw LoadError("statistics cache not found at " + path.string() + "; run the stats command with this config first");
  }
  ClassStatistics stats = load_statistics(path);
  if (stats.encoder_fingerprint != ctx.encoder_d.checksum()) {
    throw ValidationError("statistics cache " + path.string() + " was computed with encoder " +
                          hex64(stats.encoder_fingerprint) + " but the configured encoder is " +
                          hex64(ctx.encoder_d.checksum()) + "; refusing to run");
  }
  const json meta = read_json(ctx.layout.stats_meta());
  const std::string expected = hex64(ctx.config.stage_fingerprint("stats"));
  if (meta.value("stage_fingerprint", "") != expected) {
    throw ValidationError("statistics cache " + path.string() + " belongs to a different encoder/data config (" +
                          meta.value("stage_fingerprint", "?") + " vs " + expected + ")");
  }
  if (meta.value("statistics_fingerprint", "") != hex64(statistics_fingerprint(stats))) {
    throw ValidationError("statistics cache " + path.string() + " does not match its recorded fingerprint");
  }
  return stats;
}

SyntheticDataset load_checked_synthetic(Context& ctx) {
  const fs::path dir = ctx.layout.synthetic(ctx.config.distill);
  if (!fs::exists(dir / "metadata.json")) {
    throw LoadError("synthetic dataset not found at " + dir.string() + "; run the distill command first");
  }
  SyntheticDataset data = load_synthetic(dir);
  if (data.config_fingerprint != ctx.config.stage_fingerprint("distill")) {
    throw ValidationError("synthetic dataset " + dir.string() + " was distilled with config " +
                          hex64(data.config_fingerprint) + ", expected " +
                          hex64(ctx.config.stage_fingerprint("distill")));
  }
  if (data.encoder_fingerprint != ctx.encoder_d.checksum()) {
    throw ValidationError("synthetic dataset " + dir.string() + " was distilled with a different encoder");
  }
  return data;
}

Classifier golden_classifier(Context& ctx, const LabeledImages& train) {
  const std::uint64_t fp = ctx.config.stage_fingerprint("golden");
  const fs::path path = ctx.layout.golden(fp);
  if (fs::exists(path)) {
    const TensorFile file = load_tensor_file(path);
    const json header = json::parse(file.header_json);
    if (header.value("stage_fingerprint", "") != hex64(fp) ||
        header.value("encoder_fingerprint", "") != hex64(ctx.encoder_d.checksum())) {
      throw ValidationError(path.string() + ": golden classifier fingerprint mismatch");
    }
    Classifier c;
    c.provenance = Provenance::kGolden;
    const Tensor& w = file.at("weight");
    const Tensor& b = file.at("bias");
    if (w.dims.size() != 2 || b.dims.size() != 1 || w.dims[0] != b.dims[0]) {
      throw ValidationError(path.string() + ": malformed golden classifier");
    }
    c.weight = Eigen::Map<const Matrix>(w.values.data(), static_cast<Eigen::Index>(w.dims[0]),
                                        static_cast<Eigen::Index>(w.dims[1]));
    c.bias = Eigen::Map<const Vector>(b.values.data(), static_cast<Eigen::Index>(b.dims[0]));
    if (c.checksum() != parse_hex64(header.value("checksum", "0"))) {
      throw ValidationError(path.string() + ": golden classifier checksum mismatch");
    }
    return c;
  }
  Classifier c = train_golden_classifier(ctx.encoder_d, train, ctx.config.eval);
  TensorFile file;
  json header = artifact_stamp(ctx.config, "golden");
  header["format"] = "sfm-golden";
  header["encoder_fingerprint"] = hex64(ctx.encoder_d.checksum());
  header["checksum"] = hex64(c.checksum());
  file.header_json = header.dump();
  Tensor w{DType::kFloat64, {static_cast<std::uint64_t>(c.weight.rows()), static_cast<std::uint64_t>(c.weight.cols())},
           std::vector<double>(c.weight.data(), c.weight.data() + c.weight.size())};
  Tensor b{DType::kFloat64, {static_cast<std::uint64_t>(c.bias.size())},
           std::vector<double>(c.bias.data(), c.bias.data() + c.bias.size())};
  file.tensors["weight"] = std::move(w);
  file.tensors["bias"] = std::move(b);
  save_tensor_file(path, file);
  ctx.result.artifacts.push_back(path);
  return c;
}

std::string report_stem(const EvalReport& r) {
  std::string stem = r.name + "-" + r.strategy;
  if (r.inherit_initial_parameters) stem += "-ip";
  if (r.soft_label_alpha > 0.0) stem += "-alpha" + format_double(r.soft_label_alpha);
  if (!r.eval_encoder.empty()) stem += "-" + r.eval_encoder;
  return stem;
}

std::string summary_table(const std::vector<json>& reports) {
  std::string out = "name                      strategy  ip  alpha  eval_encoder            accuracy\n";
  for (const json& r : reports) {
    auto pad = [](std::string s, std::size_t w) {
      s.resize(std::max(s.size(), w), ' ');
      return s + " ";
    };
    out += pad(r.value("name", ""), 25) + pad(r.value("strategy", ""), 9) +
           pad(r.value("inherit_initial_parameters", false) ? "y" : "n", 3) +
           pad(format_fixed(r.value("soft_label_alpha", 0.0), 2), 6) + pad(r.value("eval_encoder", ""), 23) +
           format_fixed(100.0 * r.value("accuracy", 0.0), 2) + "\n";
  }
  return out;
}

void record_report(Context& ctx, EvalReport report, const std::string& source_fingerprint) {
  json j = report.to_json();
  j["config_fingerprint"] = hex64(ctx.config.fingerprint());
  j["source_fingerprint"] = source_fingerprint;
  fs::create_directories(ctx.layout.reports_dir());
  write_json(ctx.layout.reports_dir() / (report_stem(report) + ".json"), j, ctx.result.artifacts);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ctx.layout.reports_dir())) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string lines;
  std::vector<json> all;
  for (const auto& f : files) {
    all.push_back(read_json(f));
    lines += all.back().dump() + "\n";
  }
  write_file_atomic(ctx.layout.reports(), lines);
  write_file_atomic(ctx.layout.summary(), summary_table(all));
  ctx.result.artifacts.push_back(ctx.layout.reports());
  ctx.result.artifacts.push_back(ctx.layout.summary());
  ctx.result.summary = summary_table({j});
  ctx.result.report = std::move(report);
}

void run_stats(Context& ctx) {
  const DataSplits data = load_data(ctx.config, ctx.encoder_d);
  const ClassStatistics stats = compute_class_statistics(ctx.encoder_d, data.train, ctx.config.data.stats_batch_size);
  stats.require_all_classes();
  save_statistics(stats, ctx.layout.stats());
  ctx.result.artifacts.push_back(ctx.layout.stats());
  json meta = artifact_stamp(ctx.config, "stats");
  meta["format"] = "sfm-stats-meta";
  meta["encoder_fingerprint"] = hex64(stats.encoder_fingerprint);
  meta["statistics_fingerprint"] = hex64(statistics_fingerprint(stats));
  meta["dataset_fingerprint"] = hex64(dataset_fingerprint(data.train));
  meta["num_classes"] = stats.num_classes;
  meta["feature_dim"] = stats.feature_dim;
  meta["total"] = stats.total;
  write_json(ctx.layout.stats_meta(), meta, ctx.result.artifacts);
  ctx.result.summary = "statistics: " + std::to_string(stats.total) + " images, " +
                       std::to_string(stats.num_classes) + " classes, F = " + std::to_string(stats.feature_dim) +
                       " -> " + ctx.layout.stats().string() + "\n";
}

void run_distill(Context& ctx) {
  const DistillConfig& dc = ctx.config.distill;
  const std::uint64_t fp = ctx.config.stage_fingerprint("distill");
  SyntheticDataset data;
  if (dc.method == DistillMethod::kLgm) {
    const DataSplits splits = load_data(ctx.config, ctx.encoder_d);
    data = distill_lgm(dc, ctx.encoder_d, splits.train, fp);
  } else {
    const ClassStatistics stats = load_checked_statistics(ctx);
    if (dc.method == DistillMethod::kSfm) {
      data = distill_sfm(dc, ctx.encoder_d, build_statistical_flow(stats), fp);
    } else {
      data = distill_ablation(dc, ctx.encoder_d, stats, fp);
    }
  }
  const fs::path dir = ctx.layout.synthetic(dc);
  json cfg = ctx.config.to_json();
  cfg["stamp"] = artifact_stamp(ctx.config, "distill");
  save_synthetic(data, dir, cfg.dump());
  ctx.result.artifacts.push_back(dir);
  std::string s = "distilled " + to_string(dc.method) + " -> " + dir.string() + "\n";
  if (!data.trace.empty()) {
    s += "steps " + std::to_string(data.trace.size()) + ", loss " + format_fixed(data.trace.front().loss, 4) +
         " -> " + format_fixed(data.trace.back().loss, 4) + "\n";
  }
  ctx.result.summary = s;
}

std::string synthetic_name(const DistillConfig& dc) {
  std::string name = to_string(dc.method);
  if (dc.method == DistillMethod::kLgm) name += "-" + to_string(dc.lgm_w_mode);
  return name;
}

void run_eval(Context& ctx) {
  const SyntheticDataset synthetic = load_checked_synthetic(ctx);
  const DataSplits splits = load_data(ctx.config, ctx.encoder_d);
  const Classifier golden = golden_classifier(ctx, splits.train);
  ValidationSet validation(splits.validation);
  const auto start = std::chrono::steady_clock::now();
  EvalReport report = evaluate(synthetic.composed(), ctx.eval_encoder(), ctx.encoder_d, golden, ctx.config.eval,
                               validation);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.name = synthetic_name(ctx.config.distill);
  record_report(ctx, std::move(report), hex64(synthetic.content_fingerprint()));
}

void run_baseline(Context& ctx) {
  const DataSplits splits = load_data(ctx.config, ctx.encoder_d);
  const BaselineMethod method = ctx.config.baseline.method;
  std::optional<SyntheticDataset> synthetic;
  if (method == BaselineMethod::kNeighbors) synthetic = load_checked_synthetic(ctx);
  const LabeledImages chosen = select_baseline(method, splits.train, ctx.encoder_d,
                                               synthetic ? &*synthetic : nullptr, derive_seed(ctx.config.seed, {12}));
  save_dataset(chosen, ctx.layout.baseline(method));
  ctx.result.artifacts.push_back(ctx.layout.baseline(method));
  const Classifier golden = golden_classifier(ctx, splits.train);
  ValidationSet validation(splits.validation);
  const auto start = std::chrono::steady_clock::now();
  EvalReport report = evaluate(chosen, ctx.eval_encoder(), ctx.encoder_d, golden, ctx.config.eval, validation);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.name = "baseline-" + to_string(method);
  record_report(ctx, std::move(report), hex64(dataset_fingerprint(chosen)));
}

void run_theory(Context& ctx) {
  const std::vector<McCheck> checks = run_theory_suite(ctx.config.theory);
  write_file_atomic(ctx.layout.theory_csv(), theory_csv(checks));
  write_file_atomic(ctx.layout.theory_text(), theory_table(checks));
  ctx.result.artifacts.push_back(ctx.layout.theory_csv());
  ctx.result.artifacts.push_back(ctx.layout.theory_text());
  ctx.result.summary = theory_table(checks);
}

Matrix synthetic_flow(const Encoder& encoder, const LabeledImages& images) {
  const Matrix features = encode_dataset(encoder, images);
  return nontarget_means(features, images.labels, images.num_classes) -
         class_means(features, images.labels, images.num_classes);
}

void run_viz(Context& ctx) {
  const ClassStatistics stats = load_checked_statistics(ctx);
  const StatFlow flow = build_statistical_flow(stats);
  const SyntheticDataset synthetic = load_checked_synthetic(ctx);
  const fs::path dir = ctx.layout.viz_dir();
  fs::create_directories(dir);
  const FlowProjection proj =
      emit_flow_plot(flow.flow, synthetic_flow(ctx.encoder_d, synthetic.composed()), ctx.config.viz.k_classes, dir);
  const SyntheticDataset init = initialize_synthetic(ctx.config.distill, stats.num_classes,
                                                     synthetic.pyramids.front().output_shape());
  const double init_cosine = rowwise_cosine(flow.flow, synthetic_flow(ctx.encoder_d, init.composed())).mean();
  json meta = artifact_stamp(ctx.config, "distill");
  meta["mean_cosine"] = proj.mean_cosine;
  meta["mean_cosine_at_initialization"] = init_cosine;
  meta["reprojection_error"] = proj.reprojection_error;
  meta["k_classes"] = ctx.config.viz.k_classes;
  write_json(dir / "flow.json", meta, ctx.result.artifacts);
  for (const char* f : {"flow.png", "flow.csv", "cosine_summary.txt"}) ctx.result.artifacts.push_back(dir / f);
  ctx.result.summary = "mean flow cosine " + format_fixed(100.0 * proj.mean_cosine, 1) + " (initialization " +
                       format_fixed(100.0 * init_cosine, 1) + ") -> " + dir.string() + "\n";
}

}  // namespace

PipelineResult run_pipeline(Command command, const RunConfig& config) {
  config.validate();
  Context ctx(config);
  fs::create_directories(ctx.layout.root);
  json effective = config.to_json();
  effective["fingerprint"] = hex64(config.fingerprint());
  effective["tool_version"] = kToolVersion;
  write_json(ctx.layout.effective_config(), effective, ctx.result.artifacts);
  switch (command) {
    case Command::kStats: run_stats(ctx); break;
    case Command::kDistill: run_distill(ctx); break;
    case Command::kEval: run_eval(ctx); break;
    case Command::kBaseline: run_baseline(ctx); break;
    case Command::kTheory: run_theory(ctx); break;
    case Command::kViz: run_viz(ctx); break;
  }
  ctx.result.encoder_checksum_end = ctx.encoder_d.compute_checksum();
  if (ctx.result.encoder_checksum_end != ctx.result.encoder_checksum_start) {
    throw NumericError("encoder parameters changed during " + to_string(command));
  }
  return std::move(ctx.result);
}

}  // namespace sfm
