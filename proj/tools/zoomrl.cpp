// zoomrl: generate data, curate, train, evaluate and inspect the zoom policy.
//
// Config precedence is flags > --config file > defaults. Any config field can
// be overridden with a dotted flag, e.g. `--train.steps 800` or
// `--env.noise_std=0.05`.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zoomrl/cli.hpp"

namespace {

using namespace zoomrl;

// Applies the leftover `--section.key value` arguments CLI11 did not consume.
void apply_dotted(RunConfig& cfg, std::vector<std::string> extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos)
      throw UsageError("unrecognised argument '" + arg + "'");
    arg.erase(0, 2);
    std::string value;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw UsageError("--" + arg + " needs a value");
      value = extras[++i];
    }
    try {
      apply_override(cfg, arg, value);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset, heldout, curation, checkpoints, metrics;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--dataset", dataset, "Training dataset (JSONL)");
    app->add_option("--heldout", heldout, "Held-out dataset (JSONL)");
    app->add_option("--curation", curation, "Curation records (JSONL)");
    app->add_option("--checkpoints", checkpoints, "Checkpoint directory");
    app->add_option("--metrics", metrics, "Metrics path stem (.jsonl/.csv)");
    app->allow_extras();
  }

  RunConfig resolve(CLI::App* app) const {
    RunConfig cfg = load_config(config);
    apply_dotted(cfg, app->remaining());
    if (seed) cfg.seed = *seed;
    if (dataset) cfg.paths.dataset = *dataset;
    if (heldout) cfg.paths.heldout = *heldout;
    if (curation) cfg.paths.curation = *curation;
    if (checkpoints) cfg.paths.checkpoints = *checkpoints;
    if (metrics) cfg.paths.metrics = *metrics;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train a small policy to use a keypoint zoom tool with GRPO"};
  app.require_subcommand(1);

  Common gen_c, cur_c, train_c, eval_c, insp_c;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic dataset and held-out split");
  gen_c.attach(gen);
  std::optional<int> gen_n, gen_heldout;
  gen->add_option("--n", gen_n, "Training samples");
  gen->add_option("--heldout-n", gen_heldout, "Held-out samples");

  auto* cur = app.add_subcommand("curate", "Score samples k-shot and write curation records");
  cur_c.attach(cur);
  std::optional<std::string> cur_ckpt;
  cur->add_option("--checkpoint", cur_ckpt, "Score with this policy instead of the untrained one");

  auto* trn = app.add_subcommand("train", "Run GRPO training");
  train_c.attach(trn);
  std::optional<int> steps;
  std::optional<std::string> resume;
  trn->add_option("--steps", steps, "Total optimizer steps");
  trn->add_option("--resume", resume, "Continue from a checkpoint; metrics are appended");

  auto* ev = app.add_subcommand("eval", "Greedy evaluation on the held-out split");
  eval_c.attach(ev);
  EvalOptions eopt;
  std::optional<std::string> eval_data;
  ev->add_option("--checkpoint", eopt.checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--obs-size", eopt.obs_size, "Observation resolution override");
  ev->add_flag("--no-crop-resize", eopt.no_crop_resize, "Do not upscale the zoom crop");
  ev->add_option("--out", eopt.out, "Write the report as JSON");
  ev->add_option("--split", eval_data, "Dataset to evaluate (defaults to the held-out split)");

  auto* ins = app.add_subcommand("inspect", "Print one greedy episode");
  insp_c.attach(ins);
  InspectOptions iopt;
  ins->add_option("--checkpoint", iopt.checkpoint, "Checkpoint (defaults to the untrained policy)");
  ins->add_option("--sample-id", iopt.sample_id, "Sample to run")->required();
  ins->add_flag("--inject-bad-call", iopt.inject_bad_call, "Corrupt the tool call to exercise the failure path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = gen_c.resolve(gen);
      if (gen_n) cfg.gen_n = *gen_n;
      if (gen_heldout) cfg.gen_heldout = *gen_heldout;
      cmd_gen(cfg, std::cout);
    } else if (cur->parsed()) {
      cmd_curate(cur_c.resolve(cur), cur_ckpt, std::cout);
    } else if (trn->parsed()) {
      RunConfig cfg = train_c.resolve(trn);
      if (steps) cfg.train.steps = *steps;
      cmd_train(cfg, resume, std::cout);
    } else if (ev->parsed()) {
      eopt.dataset = eval_data;
      cmd_eval(eval_c.resolve(ev), eopt, std::cout);
    } else if (ins->parsed()) {
      cmd_inspect(insp_c.resolve(ins), iopt, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
