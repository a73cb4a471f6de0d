#ifndef XMODAL_CLI_HPP_
#define XMODAL_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "xmodal/config.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/train.hpp"

namespace xmodal {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitAcceptance = 4;

/// Command-line values that override the config file.
struct CliOverrides {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> direction;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> redraws;
};

/// Defaults, then the config file, then the flags. Validated.
RunConfig resolve_config(const CliOverrides& overrides);

/// Writes `config.txt` holding every resolved key into `out_dir`.
void write_config_echo(const RunConfig& config, const std::filesystem::path& out_dir);

/// train.xmds and eval.xmds.
void cmd_gen_data(const RunConfig& config, const std::filesystem::path& out_dir);

/// Writes checkpoint_init.mtmf, checkpoint_epochNN.mtmf after each epoch,
/// model.mtmf (final), and metrics.json. The training set is loaded from
/// `dataset` when given, otherwise generated from the config.
TrainLog cmd_train(const RunConfig& config, const std::filesystem::path& out_dir,
                   const std::optional<std::filesystem::path>& dataset = {});

/// Writes eval.json and cmc.csv. The evaluation set is loaded from
/// `dataset` when given, otherwise generated from the config.
RetrievalResult cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& dataset = {});

/// Prints one line per suite entry and writes gradcheck.json. Returns
/// true when every entry is within tolerance.
bool cmd_gradcheck(std::uint64_t seed, const std::filesystem::path& out_dir,
                   std::ostream& report);

/// Writes ablation.json and ablation.csv and prints the median table.
std::vector<AblationResult> cmd_ablate(const RunConfig& config,
                                       const std::filesystem::path& out_dir,
                                       std::ostream& report);

}  // namespace xmodal

#endif  // XMODAL_CLI_HPP_
