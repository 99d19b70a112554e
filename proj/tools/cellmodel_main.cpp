#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cellmodel/cli.hpp"
#include "cellmodel/io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Cell model identification, validation and SOC estimation"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  const std::map<std::string, std::string> help{
      {"simulate", "Generate a profile, run the plant and the sensor, write the traces"},
      {"fit", "Identify a model family from one or more traces"},
      {"validate", "Score a parameter file against a trace"},
      {"soc", "Run the SOC estimator over a trace"},
      {"sweep-kernels", "Train RBF networks over a range of kernel counts"},
  };
  for (const std::string& name : cellmodel::command_names()) {
    CLI::App* sub = app.add_subcommand(name, help.count(name) ? help.at(name) : "");
    sub->add_option("--config", config_path, "Sectioned key = value config file");
    sub->add_option("--seed", seed, "Seed for profile generation, sensor noise and training");
    sub->add_option("--out", out_dir, "Run directory for outputs");
    sub->add_option("--set", overrides, "Override, as section.key=value or key=value")->take_all();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cellmodel::kExitOk : cellmodel::kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const std::string text = config_path.empty() ? std::string() : cellmodel::read_text(config_path);
    const auto cfg = cellmodel::RunConfig::load(command, text, overrides, seed, out_dir);
    const auto summary = cellmodel::run_command(cfg);
    std::cout << summary.dump(2) << "\n";
    return cellmodel::kExitOk;
  } catch (const std::exception& e) {
    const int code = cellmodel::exit_code_for_current_exception();
    std::cerr << "error: " << e.what() << "\n";
    return code;
  }
}
