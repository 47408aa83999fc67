#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sfm/config.hpp"
#include "sfm/encoders.hpp"
#include "sfm/pipeline.hpp"

namespace {

std::string builtin_list() {
  std::string out;
  for (const auto& name : sfm::builtin_encoder_names()) out += (out.empty() ? "" : ", ") + name;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset distillation with statistical flow matching"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string method;
  std::string strategy;
  std::optional<double> alpha;
  std::string w_mode;
  std::string encoder;
  std::string eval_encoder;
  bool inherit = false;
  bool no_inherit = false;

  app.add_option("--config", config_path, "JSON run configuration (sections: encoder, data, distill, eval, "
                                          "baseline, theory, viz)");
  app.add_option("--seed", seed, "Run seed (overrides the file)");
  app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
  app.add_option("--method", method, "Distill method sfm|tcdd|ncdd|lgm, or baseline method random|centroids|neighbors");
  app.add_option("--strategy", strategy, "Evaluation strategy vanilla|ci|jt|st");
  app.add_option("--alpha", alpha, "Soft-label weight in [0,1]");
  app.add_option("--w-mode", w_mode, "LGM head mode random|fixed|analytic");
  app.add_option("--encoder", encoder, "Distillation encoder: builtin (" + builtin_list() + ") or weight file");
  app.add_option("--eval-encoder", eval_encoder, "Evaluation encoder (default: the distillation encoder)");
  app.add_flag("--ip", inherit, "Start the trainable classifier from the golden weights (jt, st)");
  app.add_flag("--no-ip", no_inherit, "Start the trainable classifier from zero (jt, st)");

  for (const char* name : {"stats", "distill", "eval", "baseline", "theory", "viz"}) {
    app.add_subcommand(name, std::string("Run the ") + name + " stage");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command_name = app.get_subcommands().front()->get_name();

  try {
    sfm::RunConfig config = config_path.empty() ? sfm::RunConfig{} : sfm::RunConfig::load(config_path);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.output_dir = out_dir;
    const sfm::Command command = sfm::parse_command(command_name);
    if (!method.empty()) {
      if (command == sfm::Command::kBaseline) {
        config.baseline.method = sfm::parse_baseline_method(method);
      } else {
        config.distill.method = sfm::parse_distill_method(method);
      }
    }
    if (!strategy.empty()) config.eval.strategy = sfm::parse_eval_strategy(strategy);
    if (alpha) config.eval.soft_label_alpha = *alpha;
    if (!w_mode.empty()) config.distill.lgm_w_mode = sfm::parse_head_mode(w_mode);
    if (!encoder.empty()) config.encoder.distill = encoder;
    if (!eval_encoder.empty()) config.encoder.eval = eval_encoder;
    if (inherit) config.eval.inherit_initial_parameters = true;
    if (no_inherit) config.eval.inherit_initial_parameters = false;
    config.propagate_seed();

    const sfm::PipelineResult result = sfm::run_pipeline(command, config);
    std::cout << result.summary;
    for (const auto& path : result.artifacts) std::cout << "wrote " << path.string() << "\n";
    return 0;
  } catch (const sfm::LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const sfm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
