#include "perfbench/runner.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "perfbench/controller.hpp"
#include "perfbench/dataplane.hpp"
#include "perfbench/proxy.hpp"
#include "perfbench/switch_emulator.hpp"

namespace perfbench {

namespace {

std::atomic<SwitchEmulator*> g_switch{nullptr};
std::atomic<HypervisorProxy*> g_proxy{nullptr};
std::atomic<bool> g_terminate{false};

extern "C" void on_terminate(int) {
  g_terminate.store(true);
  if (auto* s = g_switch.load()) s->request_stop();
  if (auto* p = g_proxy.load()) p->request_stop();
}

void install_terminate_handler() {
  struct sigaction sa {};
  sa.sa_handler = on_terminate;
  sigemptyset(&sa.sa_mask);
  ::sigaction(SIGTERM, &sa, nullptr);
  ::sigaction(SIGINT, &sa, nullptr);
}

void write_fd(int fd, std::string_view s) {
  while (!s.empty()) {
    const ssize_t n = ::write(fd, s.data(), s.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      return;
    }
    s.remove_prefix(static_cast<std::size_t>(n));
  }
}

struct Child {
  std::string name;
  pid_t pid = -1;
  net::Fd report;  // read end of the child's report pipe
};

// Forks a component. `body` runs in the child and returns the report that is
// sent back over a pipe when it exits.
Child spawn(std::string name, const std::function<std::string()>& body,
            const std::vector<int>& close_in_child) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw ComponentLaunchFailed("pipe: " + std::string(std::strerror(errno)));
  }
  std::cout.flush();
  std::cerr.flush();
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw ComponentLaunchFailed("fork " + name + ": " + std::strerror(errno));
  }
  if (pid == 0) {
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);
    ::close(fds[0]);
    for (int fd : close_in_child) ::close(fd);
    int rc = 0;
    try {
      write_fd(fds[1], body());
    } catch (const std::exception& e) {
      spdlog::error("{}: {}", name, e.what());
      rc = 1;
    }
    ::close(fds[1]);
    ::_exit(rc);
  }
  ::close(fds[1]);
  return Child{std::move(name), pid, net::Fd(fds[0])};
}

bool exited(const Child& c) {
  int status = 0;
  return ::waitpid(c.pid, &status, WNOHANG) == c.pid;
}

// Stops a child and collects its report; SIGKILL if it does not finish in time.
std::string reap(Child& c, std::chrono::milliseconds timeout) {
  if (c.pid < 0) return {};
  ::kill(c.pid, SIGTERM);
  std::string out;
  const uint64_t deadline = monotonic_ns() + static_cast<uint64_t>(timeout.count()) * kNsPerMs;
  char buf[4096];
  while (true) {
    const uint64_t now = monotonic_ns();
    if (now >= deadline) {
      spdlog::warn("{} did not stop in time; killing it", c.name);
      ::kill(c.pid, SIGKILL);
      out.clear();
      break;
    }
    pollfd p{c.report.get(), POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>((deadline - now) / kNsPerMs) + 1) <= 0) continue;
    const ssize_t n = ::read(c.report.get(), buf, sizeof(buf));
    if (n > 0) {
      out.append(buf, static_cast<std::size_t>(n));
    } else if (n == 0 || errno != EINTR) {
      break;
    }
  }
  int status = 0;
  ::waitpid(c.pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    spdlog::warn("{} exited abnormally (status {})", c.name, status);
  }
  c.pid = -1;
  return out;
}

nlohmann::json parse_report(const std::string& s) {
  if (s.empty()) return nullptr;
  try {
    return nlohmann::json::parse(s);
  } catch (const std::exception&) {
    return nullptr;
  }
}

uint64_t plan_digest(const RatePlan& p) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (uint32_t b : p.buckets) {
    for (int i = 0; i < 4; ++i) {
      h ^= (b >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

TenantIdentity physical_identity(const VirtualMapping& m) {
  TenantIdentity id = slice_identity(m.tenant_id);
  id.mac = m.physical_mac;
  id.ip = m.physical_ip;
  return id;
}

}  // namespace

nlohmann::json describe_point(const RunPoint& p) {
  nlohmann::json j;
  j["point"] = p.to_json();
  const auto rates = split_rate(p.total_rate, p.tenants);
  const auto mappings = make_virtual_mappings(p.tenants, p.seed);
  auto& ts = j["tenants"] = nlohmann::json::array();
  for (uint16_t t = 1; t <= p.tenants; ++t) {
    const auto id = slice_identity(t);
    const auto& m = mappings[t - 1];
    const auto pl = plan(rates[t - 1], p.duration_s);
    ts.push_back({{"tenant_id", t},
                  {"rate", rates[t - 1]},
                  {"plan_total", pl.total()},
                  {"plan_digest", fmt::format("{:016x}", plan_digest(pl))},
                  {"mac", id.mac.to_string()},
                  {"ip", id.ip.to_string()},
                  {"udp_port", id.udp_port},
                  {"physical_mac", m.physical_mac.to_string()},
                  {"physical_ip", m.physical_ip.to_string()}});
  }
  j["csv_header"] = std::string(kCsvHeader);
  return j;
}

RunOutcome run_once(const RunPoint& p, uint32_t run_id, const RunOptions& opts) {
  const net::Endpoint lo{"127.0.0.1", 0};
  net::Fd sw_listen = net::tcp_listen(lo);
  net::Fd sw_data = net::udp_bind(lo);
  net::Fd dp_rx = net::udp_bind(lo);
  const net::Endpoint sw_control{"127.0.0.1", net::local_port(sw_listen.get())};
  const net::Endpoint sw_data_ep{"127.0.0.1", net::local_port(sw_data.get())};
  const net::Endpoint dp_ep{"127.0.0.1", net::local_port(dp_rx.get())};

  std::vector<TenantListener> listeners;
  std::vector<net::Endpoint> tenant_eps;
  if (!p.switch_only()) {
    for (uint16_t t = 1; t <= p.tenants; ++t) {
      TenantListener l{t, net::tcp_listen(lo)};
      tenant_eps.push_back({"127.0.0.1", net::local_port(l.fd.get())});
      listeners.push_back(std::move(l));
    }
  }
  const auto mappings = make_virtual_mappings(p.tenants, p.seed);

  SwitchConfig sc;
  sc.listen = sw_control;
  sc.data_bind = sw_data_ep;
  sc.data_peer = dp_ep;
  sc.stats_capacity = p.stats_capacity;

  std::vector<int> not_for_switch{dp_rx.get()};
  for (const auto& l : listeners) not_for_switch.push_back(l.fd.get());
  Child sw = spawn("switch", [&] {
    install_terminate_handler();
    SwitchEmulator e(sc, std::move(sw_listen), std::move(sw_data));
    g_switch.store(&e);
    if (g_terminate.load()) e.request_stop();
    e.run();
    g_switch.store(nullptr);
    return e.counters().to_json();
  }, not_for_switch);
  sw_listen.reset();
  sw_data.reset();

  Child px;
  if (!p.switch_only()) {
    ProxyConfig pc;
    pc.mode = p.hypervisor;
    pc.switch_endpoint = sw_control;
    pc.flowspace = Flowspace::by_udp_port(p.tenants);
    pc.mappings = mappings;
    pc.poll_rate = p.poll_rate;
    pc.connect_timeout = opts.connect_timeout;
    px = spawn("proxy", [&] {
      install_terminate_handler();
      HypervisorProxy proxy(pc, std::move(listeners));
      g_proxy.store(&proxy);
      if (g_terminate.load()) proxy.request_stop();
      proxy.run();
      g_proxy.store(nullptr);
      return proxy.counters().to_json();
    }, {dp_rx.get()});
    listeners.clear();
  }

  auto abort_run = [&](const std::string& why) -> ComponentLaunchFailed {
    if (px.pid > 0) reap(px, std::chrono::milliseconds(2000));
    reap(sw, std::chrono::milliseconds(2000));
    return ComponentLaunchFailed(why);
  };

  const auto rates = split_rate(p.total_rate, p.tenants);
  LedgerSet ledgers;
  std::vector<TenantConfig> tcfgs;
  for (uint16_t t = 1; t <= p.tenants; ++t) {
    const std::size_t capacity = std::size_t{rates[t - 1]} * p.duration_s + 1024;
    ledgers.add(std::make_unique<TenantLedger>(run_id, t, p.msg_type, capacity));
    TenantConfig tc;
    tc.tenant_id = t;
    tc.endpoint = p.switch_only() ? sw_control : tenant_eps[t - 1];
    tc.rate = rates[t - 1];
    tc.kind = p.msg_type;
    tc.nodelay = p.nodelay;
    tc.identity = slice_identity(t);
    tc.probe_size = p.probe_size;
    tcfgs.push_back(tc);
  }

  ControllerEmulator cp(tcfgs, ledgers, run_id, p.duration_s);
  try {
    cp.connect_all(opts.connect_timeout);
  } catch (const std::exception& e) {
    throw abort_run(std::string("controllers could not connect: ") + e.what());
  }
  if (exited(sw) || (px.pid > 0 && exited(px))) {
    throw abort_run("a component exited during startup");
  }

  std::vector<std::unique_ptr<ProbeInjector>> injectors;
  std::unique_ptr<DataReceiver> receiver;
  if (p.msg_type == MessageKind::kPacketIn) {
    for (uint16_t t = 1; t <= p.tenants; ++t) {
      InjectorConfig ic;
      ic.tenant_id = t;
      ic.rate = rates[t - 1];
      ic.identity = p.hypervisor == HypervisorMode::kOvx ? physical_identity(mappings[t - 1])
                                                         : slice_identity(t);
      ic.probe_size = p.probe_size;
      ic.target = sw_data_ep;
      injectors.push_back(
          std::make_unique<ProbeInjector>(ic, *ledgers.find(t), p.duration_s));
    }
  } else if (p.msg_type == MessageKind::kPacketOut) {
    receiver = std::make_unique<DataReceiver>(std::move(dp_rx), ledgers, run_id);
  }

  const RunClock clock(monotonic_ns() + opts.start_delay_ns);
  std::unique_ptr<CpuSampler> sampler;
  if (px.pid > 0) {
    sleep_until_ns(clock.epoch());
    sampler = std::make_unique<CpuSampler>(px.pid, p.cpu_interval_s);
    sampler->start();
  }
  if (receiver) receiver->start(clock);
  for (auto& inj : injectors) inj->start(clock);
  const uint64_t drain_ns = uint64_t{p.drain_ms} * kNsPerMs;
  cp.start(clock, drain_ns);

  cp.join();
  for (auto& inj : injectors) inj->join();
  if (receiver) {
    receiver->request_stop();
    receiver->join();
  }
  if (sampler) sampler->stop();

  const uint64_t end = clock.now();
  std::vector<uint64_t> losses;
  for (const auto& l : ledgers.ledgers()) losses.push_back(l->expire(end, 0));

  RunOutcome out;
  if (px.pid > 0) out.proxy_counters = parse_report(reap(px, std::chrono::milliseconds(5000)));
  out.switch_counters = parse_report(reap(sw, std::chrono::milliseconds(5000)));

  RunReport& r = out.report;
  r.scenario_id = p.scenario_id;
  r.run_id = run_id;
  r.scenario = p.to_json();
  r.window = trim_window(p.trim_s, p.trim_s, p.duration_s);
  for (std::size_t i = 0; i < cp.actors().size(); ++i) {
    auto& actor = *cp.actors()[i];
    TenantResult& res = actor.result();
    TenantReport tr;
    tr.tenant_id = res.tenant_id;
    tr.nodelay = res.nodelay;
    tr.counts = ledgers.ledgers()[i]->counts();
    tr.loss = losses[i];
    tr.error = res.error;
    const AchievedRate& achieved = injectors.empty() ? res.achieved : injectors[i]->achieved();
    if (!injectors.empty() && !injectors[i]->error().empty()) tr.error = injectors[i]->error();
    tr.achieved_rate = windowed_rate(achieved, r.window);
    r.tenants.push_back(tr);
    out.samples.insert(out.samples.end(), res.samples.begin(), res.samples.end());
    res.samples.clear();
    res.samples.shrink_to_fit();
  }
  if (receiver) {
    out.samples.insert(out.samples.end(), receiver->samples().begin(), receiver->samples().end());
  }
  std::sort(out.samples.begin(), out.samples.end(), [](const auto& a, const auto& b) {
    return a.tenant_id != b.tenant_id ? a.tenant_id < b.tenant_id : a.seq < b.seq;
  });
  out.trimmed = trim(out.samples, p.trim_s, p.trim_s, p.duration_s);
  fill_statistics(r, out.trimmed);

  if (sampler) {
    r.cpu = sampler->samples();
    double sum = 0;
    int n = 0;
    for (const auto& c : r.cpu) {
      if (c.t_s > p.trim_s && c.t_s <= p.duration_s - p.trim_s) {
        sum += c.percent;
        ++n;
      }
    }
    r.mean_cpu_percent = n > 0 ? sum / n : 0;
  }
  r.components = {{"switch", out.switch_counters}, {"proxy", out.proxy_counters}};
  r.notes.push_back("OpenFlow 1.0");
  r.notes.push_back("latency from probe tags (magic, tenant, seq, send time) carried in data packets");
  r.notes.push_back("single host; all timestamps from one CLOCK_MONOTONIC");
  r.notes.push_back(fmt::format("switch stats service: deterministic {:.1f} us per request",
                                1e6 / p.stats_capacity));
  if (p.hypervisor == HypervisorMode::kOvx) {
    r.notes.push_back(fmt::format("ovx stats poll rate {}/s", p.poll_rate));
  }
  for (const auto& t : r.tenants) {
    if (!t.error.empty()) r.notes.push_back(fmt::format("tenant {} failed: {}", t.tenant_id, t.error));
  }

  if (!opts.out_dir.empty()) {
    export_run(opts.out_dir / p.scenario_id / p.label() / fmt::format("run_{:02}", run_id), r,
               out.samples, out.trimmed);
  }
  return out;
}

nlohmann::json PointResult::to_json() const {
  nlohmann::json j;
  j["point"] = point.to_json();
  auto& runs = j["runs"] = nlohmann::json::array();
  double mean_of_means = 0;
  for (const auto& r : reports) {
    nlohmann::json e{{"run_id", r.run_id},
                     {"aggregate", stats_to_json(r.aggregate)},
                     {"mean_of_tenant_means_ns", r.mean_of_tenant_means_ns},
                     {"achieved_rate", r.achieved_rate},
                     {"delivered_rate", r.delivered_rate},
                     {"mean_cpu_percent", r.mean_cpu_percent}};
    if (r.fairness) {
      e["fairness"] = {{"jain", r.fairness->jain}, {"max_min_ratio", r.fairness->max_min_ratio}};
    }
    runs.push_back(e);
    mean_of_means += r.aggregate.mean_ns;
  }
  j["mean_of_run_means_ns"] = reports.empty() ? 0.0 : mean_of_means / static_cast<double>(reports.size());
  j["pooled"] = has_pooled ? stats_to_json(pooled) : nlohmann::json(nullptr);
  j["failures"] = failures;
  return j;
}

PointResult run_point(const RunPoint& p, const RunOptions& opts) {
  PointResult res;
  res.point = p;
  std::vector<uint64_t> pooled;
  for (uint32_t run = 0; run < p.runs; ++run) {
    spdlog::info("{} run {}/{}", p.label(), run + 1, p.runs);
    try {
      RunOutcome o = run_once(p, run, opts);
      for (const auto& s : o.trimmed) pooled.push_back(s.latency_ns());
      res.reports.push_back(std::move(o.report));
    } catch (const std::exception& e) {
      spdlog::error("{} run {} failed: {}", p.label(), run, e.what());
      res.failures.push_back(fmt::format("run {}: {}", run, e.what()));
    }
  }
  if (!pooled.empty()) {
    res.pooled = summarize_latencies(std::move(pooled));
    res.has_pooled = true;
  }
  if (!opts.out_dir.empty()) {
    const auto dir = opts.out_dir / p.scenario_id / p.label();
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "point.json") << res.to_json().dump(2) << '\n';
  }
  return res;
}

std::vector<PointResult> run_scenario(const Scenario& s, const RunOptions& opts) {
  const auto points = expand(s);
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir / s.id);
    std::ofstream(opts.out_dir / s.id / "scenario.json") << s.to_json().dump(2) << '\n';
  }
  std::vector<PointResult> out;
  for (const auto& p : points) out.push_back(run_point(p, opts));
  return out;
}

std::vector<PointResult> sweep(const Scenario& s, SweepAxis axis, const RunOptions& opts) {
  const auto points = sweep_points(s, axis);
  std::vector<PointResult> out;
  for (const auto& p : points) out.push_back(run_point(p, opts));
  if (!opts.out_dir.empty()) {
    nlohmann::json m;
    m["axis"] = axis == SweepAxis::kRate ? "rate" : "tenants";
    m["scenario"] = s.to_json();
    auto& cols = m["columns"] = nlohmann::json::array();
    for (const auto& r : out) {
      cols.push_back({{"value", axis == SweepAxis::kRate ? r.point.total_rate : r.point.tenants},
                      {"result", r.to_json()}});
    }
    std::filesystem::create_directories(opts.out_dir / s.id);
    std::ofstream(opts.out_dir / s.id / "matrix.json") << m.dump(2) << '\n';
  }
  return out;
}

int run_switch_process(SwitchConfig cfg) {
  install_terminate_handler();
  SwitchEmulator e(std::move(cfg));
  std::cout << "switch control port " << e.control_port() << ", data port " << e.data_port()
            << std::endl;
  g_switch.store(&e);
  if (g_terminate.load()) e.request_stop();
  e.run();
  g_switch.store(nullptr);
  std::cout << e.counters().to_json() << std::endl;
  return 0;
}

int run_proxy_process(ProxyConfig cfg, uint16_t tenants, const std::string& listen_host,
                      uint16_t listen_base_port) {
  install_terminate_handler();
  std::vector<TenantListener> listeners;
  for (uint16_t t = 1; t <= tenants; ++t) {
    const uint16_t port = listen_base_port == 0 ? 0 : static_cast<uint16_t>(listen_base_port + t - 1);
    TenantListener l{t, net::tcp_listen({listen_host, port})};
    std::cout << "tenant " << t << " listens on " << listen_host << ":"
              << net::local_port(l.fd.get()) << std::endl;
    listeners.push_back(std::move(l));
  }
  if (cfg.flowspace.rules().empty()) cfg.flowspace = Flowspace::by_udp_port(tenants);
  HypervisorProxy proxy(std::move(cfg), std::move(listeners));
  g_proxy.store(&proxy);
  if (g_terminate.load()) proxy.request_stop();
  proxy.run();
  g_proxy.store(nullptr);
  std::cout << proxy.counters().to_json() << std::endl;
  return 0;
}

}  // namespace perfbench
