// perfbench command line: scenario runs, presets, sweeps, and the switch and
// hypervisor as standalone processes.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "perfbench/proxy.hpp"
#include "perfbench/runner.hpp"
#include "perfbench/switch_emulator.hpp"

using namespace perfbench;

namespace {

enum Exit {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kInvalid = 3,
  kLaunch = 4,
  kRunsFailed = 5,
  kIo = 6,
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("perfbench");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("PERFBENCH_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<uint32_t> duration;
  std::optional<double> trim;
  std::optional<int> nodelay;
  std::optional<std::string> hypervisor;
  std::optional<uint32_t> rate;
  std::optional<std::string> tenants;
  std::optional<uint32_t> runs;

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Seed for tenant address mappings");
    app->add_option("--duration", duration, "Run duration in seconds");
    app->add_option("--trim", trim, "Seconds cut from each end of a run");
    app->add_option("--nodelay", nodelay, "TCP_NODELAY on tenant connections (0/1)")
        ->check(CLI::Range(0, 1));
    app->add_option("--hypervisor", hypervisor, "none, fv or ovx");
    app->add_option("--rate", rate, "Total message rate per second");
    app->add_option("--tenants", tenants, "Tenant count or range from:to[:step]");
    app->add_option("--runs", runs, "Runs per point");
  }

  void apply(Scenario& s) const {
    if (seed) s.seed = *seed;
    if (duration) s.duration_s = *duration;
    if (trim) s.trim_s = *trim;
    if (nodelay) s.nodelay = {*nodelay == 1};
    if (hypervisor) {
      const auto m = parse_hypervisor_mode(*hypervisor);
      if (!m) throw ParseError("--hypervisor: expected none, fv or ovx");
      s.hypervisors = {*m};
      s.include_baseline = false;
      s.switch_only = *m == HypervisorMode::kNone;
    }
    if (rate) s.total_rates = {*rate};
    if (tenants) s.tenants = parse_tenant_range(*tenants);
    if (runs) s.runs = *runs;
    s.validate();
  }
};

Scenario resolve(const std::string& file_or_preset) {
  if (const Preset* p = find_preset(file_or_preset)) return p->scenario;
  return load_scenario(file_or_preset);
}

int summarize_results(const std::vector<PointResult>& results) {
  bool any_failed = false;
  bool all_launch = true;
  for (const auto& r : results) {
    std::cout << r.point.label() << ": " << r.reports.size() << "/" << r.point.runs << " runs";
    if (r.has_pooled) {
      std::cout << fmt::format(", pooled mean {:.3f} ms, median {:.3f} ms, p99 {:.3f} ms",
                               r.pooled.mean_ns / 1e6, r.pooled.median_ns / 1e6,
                               r.pooled.p99_ns / 1e6);
    }
    std::cout << "\n";
    if (!r.failures.empty()) any_failed = true;
    if (!r.reports.empty()) all_launch = false;
  }
  if (!any_failed) return kOk;
  return all_launch ? kLaunch : kRunsFailed;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"OpenFlow hypervisor benchmarking tool"};
  app.require_subcommand(1);

  std::string out_dir = "results";
  std::string target;
  Overrides ov;

  auto* run = app.add_subcommand("run", "Run every point of a scenario file");
  run->add_option("scenario", target, "Scenario JSON file")->required();
  run->add_option("--out-dir", out_dir, "Output directory");
  ov.attach(run);

  auto* preset = app.add_subcommand("preset", "Run a bundled preset");
  preset->add_option("name", target, "Preset name (see list-presets)")->required();
  preset->add_option("--out-dir", out_dir, "Output directory");
  ov.attach(preset);

  std::string axis_name = "rate";
  auto* sw = app.add_subcommand("sweep", "Vary one axis, holding the others at their first value");
  sw->add_option("scenario", target, "Scenario file or preset name")->required();
  sw->add_option("--axis", axis_name, "rate or tenants")->check(CLI::IsMember({"rate", "tenants"}));
  sw->add_option("--out-dir", out_dir, "Output directory");
  ov.attach(sw);

  auto* list = app.add_subcommand("list-presets", "List bundled presets");

  auto* describe = app.add_subcommand("describe", "Print the resolved plan of every point");
  describe->add_option("scenario", target, "Scenario file or preset name")->required();
  ov.attach(describe);

  SwitchConfig swc;
  std::string sw_listen = "127.0.0.1:6633";
  std::string sw_data = "127.0.0.1:0";
  std::string sw_peer = "127.0.0.1:9000";
  auto* swcmd = app.add_subcommand("switch", "Run the switch emulator in the foreground");
  swcmd->add_option("--listen", sw_listen, "OpenFlow listen address");
  swcmd->add_option("--data-bind", sw_data, "UDP data port address");
  swcmd->add_option("--data-peer", sw_peer, "Destination of PacketOut data");
  swcmd->add_option("--stats-capacity", swc.stats_capacity, "Port stats requests per second");

  std::string px_mode = "fv";
  std::string px_switch = "127.0.0.1:6633";
  std::string px_host = "127.0.0.1";
  uint16_t px_tenants = 1;
  uint16_t px_base = 6700;
  uint64_t px_seed = 1;
  double px_poll = 1.0;
  auto* pxcmd = app.add_subcommand("proxy", "Run a hypervisor in the foreground");
  pxcmd->add_option("--mode", px_mode, "fv or ovx")->check(CLI::IsMember({"fv", "ovx"}));
  pxcmd->add_option("--switch", px_switch, "Switch OpenFlow address");
  pxcmd->add_option("--tenants", px_tenants, "Number of tenants");
  pxcmd->add_option("--listen-host", px_host, "Tenant listen host");
  pxcmd->add_option("--base-port", px_base, "Port of tenant 1; tenant t uses base+t-1 (0: any)");
  pxcmd->add_option("--seed", px_seed, "Seed for ovx address mappings");
  pxcmd->add_option("--poll-rate", px_poll, "ovx stats polls per second");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    RunOptions opts;
    opts.out_dir = out_dir;
    if (list->parsed()) {
      for (const auto& p : presets()) {
        std::cout << p.name << "\t" << p.description << "\n";
      }
      return kOk;
    }
    if (describe->parsed()) {
      Scenario s = resolve(target);
      ov.apply(s);
      nlohmann::json all = nlohmann::json::array();
      for (const auto& p : expand(s)) all.push_back(describe_point(p));
      std::cout << all.dump(2) << "\n";
      return kOk;
    }
    if (run->parsed()) {
      Scenario s = load_scenario(target);
      ov.apply(s);
      return summarize_results(run_scenario(s, opts));
    }
    if (preset->parsed()) {
      const Preset* p = find_preset(target);
      if (p == nullptr) {
        std::cerr << "unknown preset '" << target << "'; try list-presets\n";
        return kUsage;
      }
      Scenario s = p->scenario;
      ov.apply(s);
      return summarize_results(run_scenario(s, opts));
    }
    if (sw->parsed()) {
      Scenario s = resolve(target);
      ov.apply(s);
      return summarize_results(sweep(s, *parse_sweep_axis(axis_name), opts));
    }
    if (swcmd->parsed()) {
      swc.listen = net::parse_endpoint(sw_listen);
      swc.data_bind = net::parse_endpoint(sw_data);
      swc.data_peer = net::parse_endpoint(sw_peer);
      return run_switch_process(swc);
    }
    if (pxcmd->parsed()) {
      ProxyConfig pc;
      pc.mode = *parse_hypervisor_mode(px_mode);
      pc.switch_endpoint = net::parse_endpoint(px_switch);
      pc.mappings = make_virtual_mappings(px_tenants, px_seed);
      pc.poll_rate = px_poll;
      return run_proxy_process(std::move(pc), px_tenants, px_host, px_base);
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidScenario& e) {
    std::cerr << "invalid scenario:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
    return kInvalid;
  } catch (const ComponentLaunchFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kLaunch;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}
