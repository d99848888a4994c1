// memex: command-line front end. Usage: memex <command> [--config FILE] [flags].

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "memex/memex.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, out_dir, step_set;
  std::optional<std::size_t> threads, trials, port;
  std::optional<double> mask_ratio;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON configuration file");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--model", f.model, "model artifact path or http:// endpoint");
  sub->add_option("--out-dir", f.out_dir, "directory for output files");
  sub->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--step-set", f.step_set, "comma-separated resolutions, e.g. 1,2,5,10,max");
  sub->add_option("--mask-ratio", f.mask_ratio, "fraction of positions masked");
  sub->add_option("--trials", f.trials, "trials per estimate");
}

memex::cli::Config build_config(const std::string& command, const Flags& f) {
  memex::cli::Config cfg = f.config.empty() ? memex::cli::Config() : memex::cli::Config::load(f.config);
  if (cfg.has("command"))
    memex::require(cfg.get<std::string>("command", "") == command, memex::ErrorCode::config,
                   "config is for command '" + cfg.get<std::string>("command", "") + "'");
  if (f.seed) cfg.set("seed", *f.seed);
  // Flag paths are relative to the working directory, not to the config file.
  if (f.model) {
    const bool url = memex::looks_like_endpoint(*f.model);
    cfg.set("model", url ? *f.model : std::filesystem::absolute(*f.model).string());
  }
  if (f.out_dir) cfg.set("out_dir", *f.out_dir);
  if (f.threads) cfg.set("threads", *f.threads);
  if (f.step_set) cfg.set("step_set", *f.step_set);
  if (f.mask_ratio) cfg.set("mask_ratio", *f.mask_ratio);
  if (f.trials) cfg.set("trials", *f.trials);
  if (f.port) cfg.set("port", *f.port);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memex: memorization measurement for masked diffusion and autoregressive models"};
  app.require_subcommand(1);
  Flags flags;
  const std::map<std::string, std::string> help{
      {"fit-toy", "fit the exact posterior toy model on a corpus"},
      {"scatter-pz", "empirical hit rate vs trajectory estimate per example"},
      {"sweep-steps", "median log hit-rate gain over one-step decoding per resolution"},
      {"np-table", "discoverable PII counts per step mode, category and target p"},
      {"eps-cdf", "Hamming-error CDF and its Gaussian approximation"},
      {"traintest", "reconstruction likelihood of training vs held-out sequences"},
      {"verify", "exact oracle suite on generated small instances"},
      {"serve-toy", "serve a toy model over the memex/1 protocol"},
      {"synth", "generate the bundled synthetic corpora"},
      {"pii-records", "extract prefix/target PII records from documents"},
  };
  for (const auto& [name, fn] : memex::cli::commands()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    add_flags(sub, flags);
    if (name == "serve-toy") sub->add_option("--port", flags.port, "listen port");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = build_config(command, flags);
    const auto result = memex::cli::run_command(command, cfg);
    std::cout << result.summary.dump(2) << '\n';
    return result.exit_code;
  } catch (const memex::Error& e) {
    std::cerr << "memex " << command << ": " << e.what() << '\n';
    return e.code() == memex::ErrorCode::config ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "memex " << command << ": " << e.what() << '\n';
    return 3;
  }
}
