// ringcast: run scenarios, check logs, sweep a parameter.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ringcast/config.hpp"
#include "ringcast/harness.hpp"

namespace fs = std::filesystem;
using namespace ringcast;

namespace {

config::KvConfig base_config(const std::string& path, const std::vector<std::string>& overrides) {
  config::KvConfig kv = path.empty() ? config::KvConfig{} : config::KvConfig::load(path);
  for (const auto& o : overrides) kv.apply_override(o);
  return kv;
}

void print_summary(const harness::RunResult& r) {
  const auto& m = r.metrics;
  std::cout << "scenario " << m.scenario << ": delivered " << m.delivered_total << " (" << m.committed_reals
            << " committed), " << m.duration_s << " s, " << m.throughput_bytes_per_s / 1e6 << " MB/s, "
            << m.writes_per_delivery << " writes/delivery, nulls " << m.nulls_committed << "\n";
  std::cout << harness::format_verdicts(r.verdicts);
  if (!r.state_dump.empty()) std::cerr << r.state_dump;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ringcast: atomic multicast over a simulated one-sided-write fabric"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;

  auto* run = app.add_subcommand("run", "run one scenario and write its report");
  run->add_option("--config", config_path, "key=value scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--override", overrides, "key=value, applied after the file");
  run->add_option("--out", out_dir, "report directory")->required();

  std::string logs_dir;
  auto* verify = app.add_subcommand("verify", "check commit_log.txt and deliveries.txt against the oracle");
  verify->add_option("--logs", logs_dir, "directory with the logs")->required()->check(CLI::ExistingDirectory);

  std::string param;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "run a scenario once per parameter value");
  sweep->add_option("--param", param, "config key to vary, e.g. window")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--config", config_path, "base scenario file")->check(CLI::ExistingFile);
  sweep->add_option("--override", overrides, "key=value, applied before the swept value");
  sweep->add_option("--out", out_dir, "output directory")->default_val("sweep_out");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = harness::ScenarioConfig::from_kv(base_config(config_path, overrides));
      const auto result = harness::run_scenario(cfg);
      harness::emit_report(result, out_dir);
      print_summary(result);
      return result.passed() ? 0 : 1;
    }
    if (*verify) {
      const auto verdicts = harness::verify_logs(logs_dir);
      std::cout << harness::format_verdicts(verdicts);
      for (const auto& v : verdicts) {
        if (!v.pass) return 1;
      }
      return 0;
    }
    if (*sweep) {
      // "w" is accepted as shorthand for the window key.
      const std::string key = param == "w" ? "window" : param;
      const auto rows = harness::run_sweep(base_config(config_path, overrides), key, config::split(values, ','),
                                           out_dir);
      bool ok = true;
      for (const auto& row : rows) {
        std::cout << key << "=" << row.value << "\n";
        print_summary(row.result);
        ok = ok && row.result.passed();
      }
      std::cout << "wrote " << (fs::path(out_dir) / "sweep.csv").string() << "\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "ringcast: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
