#include "perfbench/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace perfbench {

namespace {

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

template <typename T, typename F>
std::vector<T> scalar_or_list(const nlohmann::json& j, F&& one) {
  std::vector<T> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(one(e));
  } else {
    out.push_back(one(j));
  }
  return out;
}

bool to_bool(const nlohmann::json& e) {
  if (e.is_boolean()) return e.get<bool>();
  if (e.is_number_integer() && (e.get<int>() == 0 || e.get<int>() == 1)) return e.get<int>() == 1;
  throw ParseError("expected a boolean or 0/1, got " + e.dump());
}

uint32_t to_u32(const nlohmann::json& e) {
  if (!e.is_number_integer() || e.get<int64_t>() < 0 || e.get<int64_t>() > 0xffffffffLL) {
    throw ParseError("expected a non-negative integer, got " + e.dump());
  }
  return e.get<uint32_t>();
}

double to_double(const nlohmann::json& e) {
  if (!e.is_number()) throw ParseError("expected a number, got " + e.dump());
  return e.get<double>();
}

}  // namespace

InvalidScenario::InvalidScenario(std::vector<std::string> problems)
    : std::runtime_error("invalid scenario: " + join(problems, "; ")),
      problems_(std::move(problems)) {}

std::vector<uint16_t> parse_tenant_range(const std::string& s) {
  std::vector<long> parts;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stol(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("tenants: bad range '" + s + "'");
    }
  }
  if (parts.empty() || parts.size() > 3) throw ParseError("tenants: bad range '" + s + "'");
  const long from = parts[0];
  const long to = parts.size() > 1 ? parts[1] : from;
  const long step = parts.size() > 2 ? parts[2] : 1;
  if (step <= 0 || from < 0 || to < from || to > 0xffff) {
    throw ParseError("tenants: bad range '" + s + "'");
  }
  std::vector<uint16_t> out;
  for (long t = from; t <= to; t += step) out.push_back(static_cast<uint16_t>(t));
  return out;
}

void Scenario::validate() const {
  std::vector<std::string> p;
  if (id.empty()) p.push_back("id: must not be empty");
  if (tenants.empty()) p.push_back("tenants: at least one value required");
  for (auto t : tenants) {
    if (t < 1) p.push_back("tenants: must be >= 1");
    if (t > kMaxTenants) p.push_back(fmt::format("tenants: at most {}", kMaxTenants));
  }
  if (total_rates.empty()) p.push_back("total_rate: at least one value required");
  for (auto r : total_rates) {
    if (r < 1) p.push_back("total_rate: must be >= 1");
  }
  for (auto r : total_rates) {
    for (auto t : tenants) {
      if (t >= 1 && r < t) {
        p.push_back(fmt::format("total_rate: {} is less than one message/s per tenant at {} tenants", r, t));
      }
    }
  }
  if (nodelay.empty()) p.push_back("nodelay: at least one value required");
  if (hypervisors.empty() && !include_baseline && !switch_only) {
    p.push_back("hypervisor: at least one value required");
  }
  if (switch_only) {
    for (auto h : hypervisors) {
      if (h != HypervisorMode::kNone) {
        p.push_back("switch_only: requires hypervisor = none");
        break;
      }
    }
  }
  if (runs < 1) p.push_back("runs: must be >= 1");
  if (duration_s < 1) p.push_back("duration: must be >= 1");
  if (trim_s < 0 || !(2 * trim_s < duration_s)) {
    p.push_back(fmt::format("trim: 2 x {} s must be shorter than the {} s duration", trim_s, duration_s));
  }
  if (!(stats_capacity > 0)) p.push_back("stats_capacity: must be > 0");
  if (poll_rate < 0) p.push_back("poll_rate: must be >= 0");
  if (probe_size < kMinProbeSize || probe_size > 1500) {
    p.push_back(fmt::format("probe_size: must be in [{}, 1500]", kMinProbeSize));
  }
  if (!(cpu_interval_s > 0)) p.push_back("cpu_interval: must be > 0");
  if (!p.empty()) throw InvalidScenario(std::move(p));
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["msg_type"] = std::string(to_string(msg_type));
  j["tenants"] = tenants;
  j["switch_only"] = switch_only;
  j["include_baseline"] = include_baseline;
  j["total_rate"] = total_rates;
  auto& nd = j["nodelay"] = nlohmann::json::array();
  for (bool b : nodelay) nd.push_back(b);
  auto& hv = j["hypervisor"] = nlohmann::json::array();
  for (auto h : hypervisors) hv.push_back(std::string(to_string(h)));
  j["runs"] = runs;
  j["duration"] = duration_s;
  j["trim"] = trim_s;
  j["seed"] = seed;
  j["stats_capacity"] = stats_capacity;
  j["poll_rate"] = poll_rate;
  j["probe_size"] = probe_size;
  j["drain_ms"] = drain_ms;
  j["cpu_interval"] = cpu_interval_s;
  return j;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("scenario must be a JSON object");
  static const std::set<std::string> known = {
      "id", "msg_type", "tenants", "switch_only", "include_baseline", "total_rate", "rate",
      "nodelay", "hypervisor", "runs", "duration", "trim", "seed", "stats_capacity",
      "poll_rate", "probe_size", "drain_ms", "cpu_interval"};
  std::vector<std::string> problems;
  for (const auto& [k, v] : j.items()) {
    if (known.count(k) == 0) problems.push_back(k + ": unknown field");
  }

  Scenario s;
  auto field = [&](const char* name, auto&& apply) {
    if (!j.contains(name)) return;
    try {
      apply(j.at(name));
    } catch (const ParseError& e) {
      problems.push_back(std::string(name) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(std::string(name) + ": " + e.what());
    }
  };

  field("id", [&](const nlohmann::json& v) { s.id = v.get<std::string>(); });
  field("msg_type", [&](const nlohmann::json& v) {
    const auto k = parse_message_kind(v.get<std::string>());
    if (!k) throw ParseError("unknown message type " + v.dump());
    s.msg_type = *k;
  });
  field("tenants", [&](const nlohmann::json& v) {
    if (v.is_string()) {
      s.tenants = parse_tenant_range(v.get<std::string>());
    } else {
      s.tenants.clear();
      for (auto x : scalar_or_list<uint32_t>(v, to_u32)) {
        if (x > 0xffff) throw ParseError("tenant count too large");
        s.tenants.push_back(static_cast<uint16_t>(x));
      }
    }
  });
  field("switch_only", [&](const nlohmann::json& v) { s.switch_only = to_bool(v); });
  field("include_baseline", [&](const nlohmann::json& v) { s.include_baseline = to_bool(v); });
  field("rate", [&](const nlohmann::json& v) { s.total_rates = scalar_or_list<uint32_t>(v, to_u32); });
  field("total_rate", [&](const nlohmann::json& v) { s.total_rates = scalar_or_list<uint32_t>(v, to_u32); });
  field("nodelay", [&](const nlohmann::json& v) { s.nodelay = scalar_or_list<bool>(v, to_bool); });
  field("hypervisor", [&](const nlohmann::json& v) {
    s.hypervisors = scalar_or_list<HypervisorMode>(v, [](const nlohmann::json& e) {
      const auto m = parse_hypervisor_mode(e.get<std::string>());
      if (!m) throw ParseError("expected none, fv or ovx, got " + e.dump());
      return *m;
    });
  });
  field("runs", [&](const nlohmann::json& v) { s.runs = to_u32(v); });
  field("duration", [&](const nlohmann::json& v) { s.duration_s = to_u32(v); });
  field("trim", [&](const nlohmann::json& v) { s.trim_s = to_double(v); });
  field("seed", [&](const nlohmann::json& v) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
      throw ParseError("expected a non-negative integer");
    }
    s.seed = v.get<uint64_t>();
  });
  field("stats_capacity", [&](const nlohmann::json& v) { s.stats_capacity = to_double(v); });
  field("poll_rate", [&](const nlohmann::json& v) { s.poll_rate = to_double(v); });
  field("probe_size", [&](const nlohmann::json& v) { s.probe_size = to_u32(v); });
  field("drain_ms", [&](const nlohmann::json& v) { s.drain_ms = to_u32(v); });
  field("cpu_interval", [&](const nlohmann::json& v) { s.cpu_interval_s = to_double(v); });

  if (s.switch_only && !j.contains("hypervisor")) s.hypervisors = {HypervisorMode::kNone};
  // Value checks run even when parsing failed so one pass reports everything;
  // fields that failed to parse still hold valid defaults.
  try {
    s.validate();
  } catch (const InvalidScenario& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  if (!problems.empty()) throw InvalidScenario(std::move(problems));
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

std::string RunPoint::label() const {
  return fmt::format("{}_{}_t{}_r{}_nd{}", to_string(hypervisor), to_string(msg_type), tenants,
                     total_rate, nodelay ? 1 : 0);
}

nlohmann::json RunPoint::to_json() const {
  return nlohmann::json{{"scenario_id", scenario_id},
                        {"msg_type", std::string(to_string(msg_type))},
                        {"tenants", tenants},
                        {"total_rate", total_rate},
                        {"nodelay", nodelay},
                        {"hypervisor", std::string(to_string(hypervisor))},
                        {"switch_only", switch_only()},
                        {"runs", runs},
                        {"duration", duration_s},
                        {"trim", trim_s},
                        {"seed", seed},
                        {"stats_capacity", stats_capacity},
                        {"poll_rate", poll_rate},
                        {"probe_size", probe_size},
                        {"drain_ms", drain_ms},
                        {"cpu_interval", cpu_interval_s},
                        {"openflow_version", "1.0"}};
}

namespace {

RunPoint base_point(const Scenario& s) {
  RunPoint p;
  p.scenario_id = s.id;
  p.msg_type = s.msg_type;
  p.runs = s.runs;
  p.duration_s = s.duration_s;
  p.trim_s = s.trim_s;
  p.seed = s.seed;
  p.stats_capacity = s.stats_capacity;
  p.poll_rate = s.poll_rate;
  p.probe_size = s.probe_size;
  p.drain_ms = s.drain_ms;
  p.cpu_interval_s = s.cpu_interval_s;
  return p;
}

std::vector<HypervisorMode> effective_hypervisors(const Scenario& s) {
  if (s.switch_only) return {HypervisorMode::kNone};
  std::vector<HypervisorMode> out;
  if (s.include_baseline) out.push_back(HypervisorMode::kNone);
  for (auto h : s.hypervisors) {
    if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
  }
  return out;
}

}  // namespace

std::vector<RunPoint> expand(const Scenario& s) {
  s.validate();
  std::vector<RunPoint> out;
  for (auto h : effective_hypervisors(s)) {
    for (bool nd : s.nodelay) {
      for (auto t : s.tenants) {
        for (auto r : s.total_rates) {
          RunPoint p = base_point(s);
          p.hypervisor = h;
          p.nodelay = nd;
          p.tenants = t;
          p.total_rate = r;
          out.push_back(p);
        }
      }
    }
  }
  return out;
}

std::optional<SweepAxis> parse_sweep_axis(std::string_view s) {
  if (s == "rate") return SweepAxis::kRate;
  if (s == "tenants") return SweepAxis::kTenants;
  return std::nullopt;
}

std::vector<RunPoint> sweep_points(const Scenario& s, SweepAxis axis) {
  s.validate();
  RunPoint pinned = base_point(s);
  pinned.hypervisor = effective_hypervisors(s).front();
  pinned.nodelay = s.nodelay.front();
  pinned.tenants = s.tenants.front();
  pinned.total_rate = s.total_rates.front();
  std::vector<RunPoint> out;
  if (axis == SweepAxis::kRate) {
    for (auto r : s.total_rates) {
      RunPoint p = pinned;
      p.total_rate = r;
      out.push_back(p);
    }
  } else {
    for (auto t : s.tenants) {
      RunPoint p = pinned;
      p.tenants = t;
      out.push_back(p);
    }
  }
  return out;
}

namespace {

Scenario table_row(std::string id, MessageKind kind, std::vector<uint16_t> tenants,
                   bool baseline, std::vector<uint32_t> rates, std::vector<bool> nodelay) {
  Scenario s;
  s.id = std::move(id);
  s.msg_type = kind;
  s.tenants = std::move(tenants);
  s.include_baseline = baseline;
  s.total_rates = std::move(rates);
  s.nodelay = std::move(nodelay);
  s.hypervisors = {HypervisorMode::kFv, HypervisorMode::kOvx};
  s.runs = 10;
  s.duration_s = 30;
  s.trim_s = 5;
  return s;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    const auto multi = parse_tenant_range("2:20:2");
    std::vector<Preset> v;
    v.push_back({"t1-pktin", "PACKET_IN, 1 tenant, 10k-40k/s, FV and OVX",
                 table_row("t1-pktin", MessageKind::kPacketIn, {1}, false,
                           {10000, 20000, 30000, 40000}, {false})});
    v.push_back({"t2-portstats", "PORT_STATS, 1 tenant, 5k-8k/s, FV and OVX",
                 table_row("t2-portstats", MessageKind::kPortStats, {1}, false,
                           {5000, 6000, 7000, 8000}, {false})});
    v.push_back({"t3-pktin-mt",
                 "PACKET_IN, 2-20 tenants, 40k/s total, nodelay 0/1, FV, OVX and switch-only",
                 table_row("t3-pktin-mt", MessageKind::kPacketIn, multi, true, {40000},
                           {false, true})});
    v.push_back({"t4-pktout", "PACKET_OUT, 2-20 tenants, 60k/s total, nodelay 0/1, FV and OVX",
                 table_row("t4-pktout", MessageKind::kPacketOut, multi, false, {60000},
                           {false, true})});
    Scenario overhead = table_row("overhead-pktin", MessageKind::kPacketIn, {1}, true, {40000},
                                  {false});
    v.push_back({"overhead-pktin", "PACKET_IN, 1 tenant, 40k/s: switch-only vs FV vs OVX",
                 overhead});
    return v;
  }();
  return all;
}

const Preset* find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

}  // namespace perfbench
