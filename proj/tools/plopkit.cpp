#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "plop/cli_ops.hpp"
#include "plop/nfn.hpp"
#include "plop/selftest.hpp"

// Flag parsing only; the command logic lives in plop::cli so tests can call
// it in-process. Exit codes: 0 success, 1 validation error, 2 acceptance
// failure.

int main(int argc, char** argv) {
  CLI::App app{"plopkit: NFN module scoring, LoRA placement plans, and a training-dynamics lab"};
  app.require_subcommand(1);

  plop::cli::RunConfig cfg;
  std::string convention = "squared";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--output_dir", cfg.output_dir, "directory for all output files")
        ->capture_default_str();
    sub->add_option("--seed", cfg.seed, "base RNG seed")->capture_default_str();
  };

  CLI::App* score = app.add_subcommand("score", "compute per-module NFN scores");
  score->add_option("--weights", cfg.weights_path,
                    "weights file: bundle prefix/manifest, or .safetensors")
      ->required();
  score->add_option("--activations", cfg.activations_path, "activations bundle prefix/manifest")
      ->required();
  score->add_option("--m", cfg.m, "baseline draws per sample")->capture_default_str();
  score->add_option("--convention", convention, "score convention")
      ->check(CLI::IsMember({"squared", "unsquared"}))
      ->capture_default_str();
  score->add_option("--aggregation", cfg.aggregation, "also aggregate by module type, or not")
      ->check(CLI::IsMember({"type", "module"}))
      ->capture_default_str();
  score->add_option("--workers", cfg.workers, "scoring worker threads (results are identical)")
      ->capture_default_str();
  add_common(score);

  CLI::App* plan = app.add_subcommand("plan", "emit a LoRA placement plan from a scores file");
  plan->add_option("--scores", cfg.scores_path, "scores.json written by `score`")->required();
  plan->add_option("--strategy", cfg.strategy, "selection strategy")
      ->check(CLI::IsMember({"plop", "plop_inverse", "attn", "mlp", "all"}))
      ->capture_default_str();
  plan->add_option("--k", cfg.k, "number of module types to select")->capture_default_str();
  plan->add_option("--r", cfg.r, "LoRA rank")->capture_default_str();
  plan->add_option("--alpha", cfg.alpha, "LoRA alpha; 0 keeps the 2*r default")
      ->capture_default_str();
  add_common(plan);

  CLI::App* map = app.add_subcommand("map", "render a scores file as a layer-by-type map");
  map->add_option("--scores", cfg.scores_path, "scores.json written by `score`")->required();
  add_common(map);

  CLI::App* capture = app.add_subcommand(
      "capture", "run the toy transformer and dump weights + activation bundles");
  capture->add_option("--layers", cfg.model.n_layers, "transformer layers")->capture_default_str();
  capture->add_option("--d_model", cfg.model.d_model, "model width")->capture_default_str();
  capture->add_option("--n_heads", cfg.model.n_heads, "attention heads")->capture_default_str();
  capture->add_option("--d_mlp", cfg.model.d_mlp, "mlp width")->capture_default_str();
  capture->add_option("--vocab", cfg.model.vocab, "vocabulary size")->capture_default_str();
  capture->add_option("--max_seq", cfg.model.max_seq, "position table size")
      ->capture_default_str();
  capture->add_option("--model_seed", cfg.model.seed, "weight init seed")->capture_default_str();
  capture->add_option("--task", cfg.task, "built-in corpus: arithmetic or shuffled")
      ->check(CLI::IsMember({"arithmetic", "shuffled"}))
      ->capture_default_str();
  capture
      ->add_option("--tokens", cfg.tokens_path,
                   "token file (one sequence per line) used instead of --task")
      ->check(CLI::ExistingFile);
  capture->add_option("--batch", cfg.batch, "sequences per batch")->capture_default_str();
  capture->add_option("--seqlen", cfg.seqlen, "tokens per sequence")->capture_default_str();
  capture->add_option("--data_seed", cfg.data_seed, "corpus seed")->capture_default_str();
  capture->add_option("--data_step", cfg.data_step, "corpus step index")->capture_default_str();
  add_common(capture);

  CLI::App* lab = app.add_subcommand("lab", "run one training-dynamics experiment");
  lab->add_option("experiment", cfg.experiment, "theorem1 | signconst | baseline | fig3")
      ->required()
      ->check(CLI::IsMember({"theorem1", "signconst", "baseline", "fig3"}));
  int n_flag = -1, d_flag = -1, steps_flag = -1;
  lab->add_option("--n", n_flag, "width (default 1024; fig3 100)");
  lab->add_option("--d", d_flag, "input dim (default 64; fig3 100)");
  lab->add_option("--depth", cfg.lab_net.depth, "chain depth L")->capture_default_str();
  lab->add_option("--train_layer", cfg.lab_net.train_layer, "index of the trained layer")
      ->capture_default_str();
  lab->add_option("--eta", cfg.lab_net.eta, "SignSGD learning rate (applied as eta/n)")
      ->capture_default_str();
  lab->add_option("--steps", steps_flag,
                  "step count; unset estimates the constant-sign window and uses half of it "
                  "(fig3 default 300)");
  lab->add_option("--trials", cfg.trials, "trials for window estimation / sign constancy")
      ->capture_default_str();
  lab->add_option("--lr", cfg.fig3.adam.lr, "fig3 Adam learning rate")->capture_default_str();
  lab->add_option("--data_points", cfg.fig3.n_data, "fig3 dataset size")->capture_default_str();
  lab->add_option("--noise_var", cfg.fig3.noise_var, "fig3 label noise variance")
      ->capture_default_str();
  lab->add_option("--probes", cfg.fig3.probes, "fig3 probe inputs")->capture_default_str();
  lab->add_option("--baseline_dirs", cfg.fig3.baseline_dirs, "fig3 baseline directions")
      ->capture_default_str();
  add_common(lab);

  CLI::App* selftest =
      app.add_subcommand("selftest", "run the full acceptance checklist (exit 2 on failure)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (score->parsed()) {
      cfg.convention = plop::convention_from_name(convention);
      plop::cli::cmd_score(cfg, std::cout);
    } else if (plan->parsed()) {
      plop::cli::cmd_plan(cfg, std::cout);
    } else if (map->parsed()) {
      plop::cli::cmd_map(cfg, std::cout);
    } else if (capture->parsed()) {
      plop::cli::cmd_capture(cfg, std::cout);
    } else if (lab->parsed()) {
      if (n_flag > 0) {
        cfg.lab_net.n = n_flag;
        cfg.fig3.n = n_flag;
      }
      if (d_flag > 0) {
        cfg.lab_net.d = d_flag;
        cfg.fig3.d = d_flag;
      }
      if (steps_flag > 0) {
        cfg.lab_steps = steps_flag;
        cfg.fig3.steps = steps_flag;
      }
      plop::cli::cmd_lab(cfg, std::cout);
    } else if (selftest->parsed()) {
      return plop::selftest::run_acceptance(std::cout) == 0 ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
