#include <seqmag/cli/runner.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

enum Exit
{
  ok = 0,
  failure = 1,
  invalid_input = 2,
  capacity = 3
};

int report(const std::string& where, const std::exception& e, int code)
{
  std::cerr << "seqmag: " << where << ": " << e.what() << '\n';
  return code;
}

int run(const std::string& path, const seqmag::cli::RunOptions& opts)
{
  using namespace seqmag;
  cli::ExperimentConfig config;
  try {
    config = cli::load_config(path);
  } catch (const cli::config_error& e) {
    return report(path, e, invalid_input);
  }
  try {
    (void)cli::run_experiment(config, opts, std::cerr);
  } catch (const capacity_error& e) {
    return report(path, e, capacity);
  } catch (const cli::config_error& e) {
    return report(path, e, invalid_input);
  } catch (const cli::csv_error& e) {
    return report(path, e, invalid_input);
  } catch (const invalid_argument_error& e) {
    return report(path, e, invalid_input);
  } catch (const budget_error& e) {
    return report(path, e, invalid_input);
  } catch (const std::exception& e) {
    return report(path, e, failure);
  }
  return ok;
}

int plot(const std::string& csv, const std::string& spec_path, std::string output)
{
  using namespace seqmag::cli;
  PlotSpec spec;
  try {
    std::ifstream in(spec_path);
    if (!in) {
      throw config_error("cannot read plot spec");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    spec = parse_plot_spec(ss.str());
  } catch (const config_error& e) {
    return report(spec_path, e, invalid_input);
  }
  try {
    std::ifstream in(csv);
    if (!in) {
      throw csv_error("cannot read file", 0);
    }
    const CsvTable table = read_csv(in);
    if (output.empty()) {
      output = std::filesystem::path(csv).replace_extension(".svg").string();
    }
    std::ofstream out(output, std::ios::binary);
    out << render_svg(table, spec);
    if (!out) {
      std::cerr << "seqmag: cannot write " << output << '\n';
      return failure;
    }
  } catch (const csv_error& e) {
    return report(csv, e, invalid_input);
  }
  return ok;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Sequential-measurement magnetometry on Heisenberg spin chains"};
  app.set_version_flag("--version", SEQMAG_VERSION);
  app.require_subcommand(1);

  seqmag::cli::RunOptions opts;
  std::uint64_t seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Run the experiment described by a config file or a run manifest");
  std::string config_path;
  run_cmd->add_option("config", config_path, "YAML config, or manifest.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--threads", opts.threads, "Worker threads (default: $SEQMAG_THREADS, else 1)");
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Master seed, overriding the config");
  run_cmd->add_option("--output-dir", opts.output_dir, "Output directory, overriding the config");

  auto* plot_cmd = app.add_subcommand("plot", "Render a CSV table as SVG");
  std::string csv_path;
  std::string spec_path;
  std::string svg_path;
  plot_cmd->add_option("csv", csv_path, "Input CSV")->required();
  plot_cmd->add_option("--spec", spec_path, "Plot spec (YAML)")->required();
  plot_cmd->add_option("-o,--output", svg_path, "Output SVG (default: CSV path with .svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : invalid_input;
  }

  if (*run_cmd) {
    if (*seed_opt) {
      opts.seed = seed;
    }
    opts.base_dir = std::filesystem::path(config_path).parent_path();
    return run(config_path, opts);
  }
  return plot(csv_path, spec_path, svg_path);
}
