// xmodal: generate data, train, evaluate, gradient-check, and run ablations.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xmodal/cli.hpp"

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

void add_common(CLI::App* cmd, CliOverrides& o, std::string& out) {
  cmd->add_option("--config", o.config, "flat key=value run config");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", out, "output directory")->required();
}

void add_eval_flags(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--mode", o.mode, "single | multi")
      ->check(CLI::IsMember({"single", "multi"}));
  cmd->add_option("--direction", o.direction, "ir2rgb | rgb2ir")
      ->check(CLI::IsMember({"ir2rgb", "rgb2ir"}));
  cmd->add_option("--shots", o.shots, "gallery images per identity (multi-shot)");
  cmd->add_option("--redraws", o.redraws, "gallery redraws averaged over");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modality re-identification toolkit"};
  app.require_subcommand(1);

  CliOverrides o;
  std::string out;
  std::optional<fs::path> dataset;
  fs::path checkpoint;

  auto* gen = app.add_subcommand("gen-data", "write train/eval datasets");
  add_common(gen, o, out);

  auto* tr = app.add_subcommand("train", "train a network");
  add_common(tr, o, out);
  tr->add_option("--dataset", dataset, "training set (default: generated)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, o, out);
  add_eval_flags(ev, o);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--dataset", dataset, "evaluation set (default: generated)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", o.seed, "suite seed");
  gc->add_option("--out", out, "output directory")->required();

  auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
  add_common(ab, o, out);
  add_eval_flags(ab, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gc->parsed()) {
      return cmd_gradcheck(o.seed.value_or(1), out, std::cout) ? kExitOk : kExitAcceptance;
    }
    const RunConfig config = resolve_config(o);
    if (gen->parsed()) {
      cmd_gen_data(config, out);
    } else if (tr->parsed()) {
      const TrainLog log = cmd_train(config, out, dataset);
      for (const auto& e : log.epochs) {
        std::cout << "epoch " << e.epoch << " lr_specific=" << e.lr_specific
                  << " lr_shared=" << e.lr_shared << " mean_loss=" << e.mean_loss << '\n';
      }
    } else if (ev->parsed()) {
      const RetrievalResult r = cmd_eval(config, checkpoint, out, dataset);
      std::cout << "rank-1 " << r.cmc.at(0) << "  mAP " << r.map << '\n';
    } else if (ab->parsed()) {
      cmd_ablate(config, out, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
