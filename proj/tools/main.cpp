// saflex command-line tool: gen-data, train, eval, oracle-check.
//
// Exit codes: 0 ok, 1 failure (including a failed oracle check), 2 bad
// usage or configuration, 3 numerical failure during training.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "config.hpp"

namespace fs = std::filesystem;
using namespace saflex;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw FormatError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw FormatError("write failed: " + p.string());
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

cli::Config resolve(const std::string& config_path) {
  return config_path.empty() ? cli::default_config() : cli::load_config(config_path);
}

/// One training run into `dir`; returns the final metrics row.
MetricsRow run_one(const cli::Config& c, const Splits& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", cli::dump(c));
  TrainResult r = train(c.run, data);
  std::ostringstream m;
  write_metrics_csv(m, r.history);
  write_text(dir / "metrics.csv", m.str());
  save_checkpoint((dir / "model.ckpt").string(), r.params);
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
  if (r.relabel.corrupted)
    std::cout << "relabel: corrupted " << r.relabel.corrupted << ", changed " << r.relabel.changed
              << ", precision " << r.relabel.precision() << ", recall " << r.relabel.recall() << "\n";
  return r.history.empty() ? MetricsRow{} : r.history.back();
}

int cmd_gen_data(const std::string& kind, std::size_t n, std::uint64_t seed, double sigma, double noise,
                 const std::string& out, const std::string& schema) {
  if (n == 0) throw ConfigError("gen-data: --n must be positive");
  Dataset ds;
  if (kind == "two_gaussians")
    ds = gen_two_gaussians(n, sigma, seed);
  else if (kind == "two_moons")
    ds = gen_two_moons(n, noise, seed);
  else
    throw ConfigError("gen-data: --kind must be two_gaussians or two_moons");
  write_csv(ds, out, schema);
  std::cout << "wrote " << n << " rows to " << out << " (schema " << schema << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& output_dir, const std::vector<double>& sweep) {
  cli::Config c = resolve(config_path);
  if (!output_dir.empty()) c.output_dir = output_dir;
  const Splits data = cli::load_splits(c);
  if (sweep.empty()) {
    MetricsRow last = run_one(c, data, c.output_dir);
    std::cout << "mode " << to_string(c.run.mode) << ": test_acc " << last.test_acc << ", val_loss "
              << last.val_loss << " (" << c.output_dir << ")\n";
    return 0;
  }

  // Sweep the Gaussian jitter strength; every other setting stays fixed.
  std::size_t stage = c.run.augment.stages.size();
  for (std::size_t s = 0; s < c.run.augment.stages.size(); ++s)
    if (c.run.augment.stages[s].kind == AugmentKind::kGaussianJitter) {
      stage = s;
      break;
    }
  if (stage == c.run.augment.stages.size())
    throw ConfigError("--sweep-sigma needs a gaussian_jitter stage in augment.stages");
  std::ostringstream summary;
  summary << "sigma,mode,test_acc,val_loss\n";
  for (double sigma : sweep) {
    cli::Config sc = c;
    sc.run.augment.stages[stage].sigma = sigma;
    const fs::path dir = fs::path(c.output_dir) / ("sigma_" + format_number(sigma));
    sc.output_dir = dir.string();
    MetricsRow last = run_one(sc, data, dir);
    summary << format_number(sigma) << ',' << to_string(c.run.mode) << ',' << last.test_acc << ','
            << last.val_loss << '\n';
    std::cout << "sigma " << sigma << ": test_acc " << last.test_acc << "\n";
  }
  write_text(fs::path(c.output_dir) / "sweep.csv", summary.str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint) {
  const cli::Config c = resolve(config_path);
  const Splits data = cli::load_splits(c);
  const ModelParams p = load_checkpoint(checkpoint);
  if (p.shape().input_dim() != data.test.X.cols() || p.shape().output_dim() != data.test.K)
    throw ConfigError("checkpoint shape does not match the configured data");
  for (const auto& [name, ds] : {std::pair<const char*, const Dataset*>{"val", &data.val}, {"test", &data.test}}) {
    if (ds->size() == 0) continue;
    const Evaluation e = evaluate(p, *ds);
    std::cout << name << ": loss " << e.loss << ", accuracy " << e.accuracy << " (n=" << ds->size() << ")\n";
  }
  return 0;
}

int cmd_oracle(const std::string& config_path, std::optional<std::size_t> instances,
               std::optional<std::uint64_t> seed) {
  cli::Config c = resolve(config_path);
  if (instances) c.oracle.instances = *instances;
  if (seed) c.oracle.seed = *seed;
  oracle::CheckReport rep;
  try {
    rep = oracle::run_check(c.oracle);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const std::size_t n = rep.instances.size();
  std::printf("instances %zu (%zu augmented samples), %.2f s\n", n, rep.samples_total, rep.seconds);
  std::printf("closed form  : value matches %zu/%zu, max gap %.3g, tie-break matches %zu/%zu\n", rep.value_matches,
              n, rep.max_gap, rep.tie_break_matches, n);
  std::printf("soft rule    : value matches %zu/%zu, max gap %.3g (weights from Pi.y >= 0 at tau %g)\n",
              rep.soft_rule_value_matches, n, rep.max_soft_rule_gap, c.oracle.tau);
  std::printf("sum rule     : value matches %zu/%zu, max gap %.3g, %zu per-sample disagreements\n",
              rep.sum_rule_value_matches, n, rep.max_sum_rule_gap, rep.rule_disagreements);
  std::printf("%s\n", rep.passed() ? "PASS" : "FAIL");
  return rep.passed() ? 0 : kExitFailure;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAFLEX training and verification tool"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  std::string config_path;
  app.add_flag("--print-config", print_config, "print the resolved configuration (defaults if no --config) and exit");
  app.add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV plus schema");
  std::string kind = "two_gaussians", out, schema;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  double sigma = 1.0, noise = 0.2;
  gen->add_option("--kind", kind, "two_gaussians | two_moons")->capture_default_str();
  gen->add_option("--n", n, "number of rows")->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--sigma", sigma, "two_gaussians spread")->capture_default_str();
  gen->add_option("--noise", noise, "two_moons noise")->capture_default_str();
  gen->add_option("--out", out, "CSV path")->required();
  gen->add_option("--schema", schema, "schema path")->required();

  auto* tr = app.add_subcommand("train", "train one model, or one per --sweep-sigma value");
  std::string output_dir;
  std::vector<double> sweep;
  tr->add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);
  tr->add_option("--output-dir", output_dir, "overrides run.output_dir");
  tr->add_option("--sweep-sigma", sweep, "jitter sigmas; one subdirectory each")->delimiter(',');

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the configured val/test splits");
  std::string checkpoint;
  ev->add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);

  auto* oc = app.add_subcommand("oracle-check", "compare the closed-form assignment with exhaustive enumeration");
  std::optional<std::size_t> instances;
  std::optional<std::uint64_t> oseed;
  oc->add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);
  oc->add_option("--instances", instances);
  oc->add_option("--seed", oseed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (print_config) {
      std::cout << cli::dump(resolve(config_path));
      return 0;
    }
    if (*gen) return cmd_gen_data(kind, n, seed, sigma, noise, out, schema);
    if (*tr) return cmd_train(config_path, output_dir, sweep);
    if (*ev) return cmd_eval(config_path, checkpoint);
    if (*oc) return cmd_oracle(config_path, instances, oseed);
    std::cerr << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
