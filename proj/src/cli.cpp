#include "xmodal/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "xmodal/checkpoint.hpp"
#include "xmodal/gradcheck.hpp"

namespace xmodal {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  open_out(path) << j.dump(2) << '\n';
}

std::string epoch_file(int epoch) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch%02d.mtmf", epoch + 1);
  return buf;
}

}  // namespace

RunConfig resolve_config(const CliOverrides& o) {
  RunConfig config = o.config ? load_run_config(*o.config) : RunConfig{};
  if (o.seed) config.seed = *o.seed;
  if (o.mode) config.eval_mode = parse_eval_mode(*o.mode);
  if (o.direction) config.eval_direction = parse_direction(*o.direction);
  if (o.shots) config.eval_shots = *o.shots;
  if (o.redraws) config.eval_redraws = *o.redraws;
  config.validate();
  return config;
}

void write_config_echo(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  open_out(out_dir / "config.txt") << format_run_config(config);
}

void cmd_gen_data(const RunConfig& config, const fs::path& out_dir) {
  write_config_echo(config, out_dir);
  save_dataset(out_dir / "train.xmds", generate_dataset(config.train_spec()));
  save_dataset(out_dir / "eval.xmds", generate_dataset(config.eval_spec()));
}

TrainLog cmd_train(const RunConfig& config, const fs::path& out_dir,
                   const std::optional<fs::path>& dataset) {
  write_config_echo(config, out_dir);
  const Dataset train_set =
      dataset ? load_dataset(*dataset) : generate_dataset(config.train_spec());
  {
    // Same seed as train() uses, so this is exactly the epoch-0 state.
    Network init(config.resolved_model(), config.seed);
    save_checkpoint(out_dir / "checkpoint_init.mtmf", init.params().named());
  }
  TrainOutcome outcome = train(config, train_set, [&](int epoch, const Network& net) {
    save_checkpoint(out_dir / epoch_file(epoch), net.params().named());
  });
  save_checkpoint(out_dir / "model.mtmf", outcome.network.params().named());
  nlohmann::json metrics = outcome.log.to_json();
  metrics["seed"] = config.seed;
  metrics["loss"] = std::string(metric_loss_name(config.ablation.loss));
  write_json(out_dir / "metrics.json", metrics);
  return outcome.log;
}

RetrievalResult cmd_eval(const RunConfig& config, const fs::path& checkpoint,
                         const fs::path& out_dir, const std::optional<fs::path>& dataset) {
  write_config_echo(config, out_dir);
  NetworkParams params = NetworkParams::initialize(config.resolved_model(), config.seed);
  apply_checkpoint(load_checkpoint(checkpoint), params);
  Network network(config.resolved_model(), std::move(params));
  const Dataset eval_set =
      dataset ? load_dataset(*dataset) : generate_dataset(config.eval_spec());
  EvalOptions opts = config.eval_options();
  RetrievalResult result = evaluate(network, eval_set, opts);
  nlohmann::json j = result_to_json(result, opts);
  j["checkpoint"] = checkpoint.string();
  write_json(out_dir / "eval.json", j);
  auto csv = open_out(out_dir / "cmc.csv");
  write_cmc_csv(csv, result);
  return result;
}

bool cmd_gradcheck(std::uint64_t seed, const fs::path& out_dir, std::ostream& report) {
  fs::create_directories(out_dir);
  const auto entries = run_gradcheck_suite(seed);
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    ok = ok && e.passed();
    report << (e.passed() ? "PASS " : "FAIL ") << std::left << std::setw(24) << e.name
           << " max_rel_err=" << std::scientific << std::setprecision(3)
           << e.result.max_rel_error << " tol=" << e.tolerance << std::defaultfloat
           << " checked=" << e.result.elements_checked
           << " skipped=" << e.result.elements_skipped << '\n';
    if (!e.passed()) report << "    worst: " << e.result.worst_location << '\n';
    j.push_back({{"op", e.name},
                 {"max_rel_error", e.result.max_rel_error},
                 {"tolerance", e.tolerance},
                 {"elements_checked", e.result.elements_checked},
                 {"elements_skipped", e.result.elements_skipped},
                 {"passed", e.passed()}});
  }
  write_json(out_dir / "gradcheck.json", {{"seed", seed}, {"ops", j}, {"passed", ok}});
  return ok;
}

std::vector<AblationResult> cmd_ablate(const RunConfig& config, const fs::path& out_dir,
                                       std::ostream& report) {
  write_config_echo(config, out_dir);
  std::vector<AblationResult> results;
  nlohmann::json j = nlohmann::json::array();
  auto csv = open_out(out_dir / "ablation.csv");
  csv << "row,median_rank1,median_map\n";
  report << std::left << std::setw(10) << "row" << std::right << std::setw(10) << "rank-1"
         << std::setw(10) << "mAP" << '\n';
  for (const auto& row : select_ablation_rows(config.ablation_rows)) {
    AblationResult r = run_ablation_row(config, row, config.ablation_seeds);
    report << std::left << std::setw(10) << r.name << std::right << std::fixed
           << std::setprecision(4) << std::setw(10) << r.median_rank1 << std::setw(10)
           << r.median_map << std::defaultfloat << '\n';
    csv << r.name << ',' << r.median_rank1 << ',' << r.median_map << '\n';
    j.push_back({{"row", r.name},
                 {"rank1", r.rank1},
                 {"map", r.map},
                 {"median_rank1", r.median_rank1},
                 {"median_map", r.median_map}});
    results.push_back(std::move(r));
  }
  write_json(out_dir / "ablation.json", {{"seeds", config.ablation_seeds}, {"rows", j}});
  return results;
}

}  // namespace xmodal
