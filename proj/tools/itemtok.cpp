#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "itemtok/error.hpp"
#include "itemtok/pipeline.hpp"

using namespace itemtok;

namespace {

struct Common {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::optional<std::size_t> iteration;
};

std::string flag_name(const std::string& key) {
  std::string name = "--";
  for (char c : key) name += (c == '.' || c == '_') ? '-' : c;
  return name;
}

void add_config_options(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_file, "key=value config file")->check(CLI::ExistingFile);
  for (const auto& key : RunConfig::keys())
    cmd->add_option_function<std::string>(
        flag_name(key), [&common, key](const std::string& v) { common.flags[key] = v; }, RunConfig::describe(key));
}

RunConfig resolve(const Common& common) {
  RunConfig config;
  if (!common.config_file.empty()) apply_config_file(config, common.config_file);
  apply_environment(config, [](const char* name) { return std::getenv(name); });
  for (const auto& [key, value] : common.flags) config.set(key, value);
  config.validate();
  return config;
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Item identifier tokenization, next-item training and self-refinement"};
  app.require_subcommand(1);
  Common common;
  std::vector<std::string> report_runs;

  auto* init = app.add_subcommand("init", "build the dataset, embeddings and initial identifiers");
  auto* train = app.add_subcommand("train", "warm-up next-item training");
  auto* refine = app.add_subcommand("refine", "run the refinement iterations");
  auto* infer = app.add_subcommand("infer", "constrained beam-search recommendations for the test split");
  auto* eval = app.add_subcommand("eval", "metrics for one iteration's predictions");
  auto* report = app.add_subcommand("report", "comparison table across runs");
  for (auto* cmd : {init, train, refine, infer, eval}) add_config_options(cmd, common);
  for (auto* cmd : {infer, eval})
    cmd->add_option_function<std::size_t>(
        "-i,--iteration", [&common](std::size_t i) { common.iteration = i; },
        "iteration whose model and map to use (default: refine.iterations)");
  report->add_option("runs", report_runs, "run directories, optionally suffixed with :iteration")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      cmd_report(report_runs, std::cout);
      return 0;
    }
    const RunConfig config = resolve(common);
    if (init->parsed()) cmd_init(config, log_line);
    if (train->parsed()) cmd_train(config, log_line);
    if (refine->parsed()) cmd_refine(config, log_line);
    if (infer->parsed()) cmd_infer(config, common.iteration, log_line);
    if (eval->parsed()) {
      const auto metrics = cmd_eval(config, common.iteration, log_line);
      write_report(std::cout, metrics);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
