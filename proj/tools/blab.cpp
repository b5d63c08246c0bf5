// blab: synthetic long-tail experiments.
//
//   blab gen|train|metrics|dbg|compare --config <path> [--out <dir>] [--seed <u64>]
//
// Subcommands read upstream artifacts from the output directory and write
// their own next to them, plus a <command>.manifest.json with content hashes.
// Exit codes: 0 ok, 2 config error, 3 missing dependency, 4 numeric failure.

#include "blab/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

int main(int argc, char** argv) {
  CLI::App app{"Boundary-aware generation experiments on synthetic long-tailed data"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;

  using Command = blab::Manifest (*)(const blab::ExperimentConfig&, const std::filesystem::path&);
  const std::map<std::string, std::pair<std::string, Command>> commands{
      {"gen", {"Sample the long-tailed training set, the balanced test set and the mixture",
               &blab::cmd_gen}},
      {"train", {"Train the classifier on train.jsonl", &blab::cmd_train}},
      {"metrics", {"Overlap, outlier and generation-confidence reports", &blab::cmd_metrics}},
      {"dbg", {"Generate, filter and write the augmented dataset", &blab::cmd_dbg}},
      {"compare", {"Balanced control and arms A, B, C over the configured seeds",
                   &blab::cmd_compare}},
  };
  std::vector<CLI::Option*> seed_options;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    seed_options.push_back(sub->add_option("--seed", seed, "Override the experiment seed"));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    blab::ExperimentConfig cfg = blab::load_config(config_path);
    for (CLI::Option* opt : seed_options)
      if (opt->count() > 0) cfg.reseed(seed);
    const std::filesystem::path out = out_dir.empty() ? cfg.output : std::filesystem::path(out_dir);
    const blab::Manifest m = commands.at(name).second(cfg, out);
    std::cout << name << ": wrote " << m.files.size() << " file(s) to " << out.string()
              << " (config " << m.config_hash << ", seed " << m.seed << ")\n";
    return 0;
  } catch (const blab::Error& e) {
    std::cerr << "blab " << name << ": " << e.what() << '\n';
    return blab::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "blab " << name << ": " << e.what() << '\n';
    return 1;
  }
}
