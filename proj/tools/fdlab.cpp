#include <CLI11.hpp>
#include <iostream>

#include "fdlab/pipeline/stages.hpp"

namespace {

struct Args {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool resume = false;
  bool no_timestamps = false;
};

int run_stage(const std::string& stage, const Args& a) {
  using namespace fdlab;
  auto cfg = pipeline::load_config(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.source["seed"] = *a.seed;
  }
  pipeline::Options opt;
  opt.jobs = std::max(1, a.jobs);
  opt.resume = a.resume;
  opt.timestamps = !a.no_timestamps;
  opt.log = [](const std::string& s) { std::cerr << s << '\n'; };
  pipeline::Pipeline p(cfg, opt);
  const auto r = p.run(stage);
  std::cout << stage << ": " << r.status << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fdlab: feature-disruption attack experiments"};
  app.require_subcommand(1, 1);
  Args args;
  const std::vector<std::pair<std::string, std::string>> stages{
      {"train-zoo", "train the classifier zoo"},
      {"train-banks", "train auxiliary heads for every zoo model"},
      {"attack", "run configured attack specs and persist results"},
      {"sweep", "run the transfer sweep and write reports"},
      {"analyze", "run the configured diagnostics"},
      {"report", "re-render plots and the run summary"}};
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", args.seed, "global seed (overrides seed)");
    sub->add_option("--jobs", args.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--resume", args.resume, "reuse completed sweep cells");
    sub->add_flag("--no-timestamps", args.no_timestamps, "omit wall-clock timestamps from outputs");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    return run_stage(stage, args);
  } catch (const fdlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const fdlab::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const fdlab::DependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
