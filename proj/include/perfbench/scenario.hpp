#pragma once

// Scenario descriptions. A Scenario may list several values per axis (rates,
// tenant counts, nodelay settings, hypervisors); expand() turns it into the
// single-valued RunPoints that are actually executed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "perfbench/hypervisor.hpp"
#include "perfbench/probe.hpp"

namespace perfbench {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidScenario : public std::runtime_error {
 public:
  explicit InvalidScenario(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct Scenario {
  std::string id = "custom";
  MessageKind msg_type = MessageKind::kPacketIn;
  std::vector<uint16_t> tenants{1};
  // Run only the switch, no hypervisor.
  bool switch_only = false;
  // Additionally run a switch-only baseline next to the listed hypervisors.
  bool include_baseline = false;
  std::vector<uint32_t> total_rates{10000};
  std::vector<bool> nodelay{false};
  std::vector<HypervisorMode> hypervisors{HypervisorMode::kFv};
  uint32_t runs = 10;
  uint32_t duration_s = 30;
  double trim_s = 5;  // cut from both ends
  uint64_t seed = 1;

  double stats_capacity = 7500;
  double poll_rate = 1;
  std::size_t probe_size = kDefaultProbeSize;
  uint32_t drain_ms = 1000;
  double cpu_interval_s = 1;

  // Throws InvalidScenario listing every offending field.
  void validate() const;
  nlohmann::json to_json() const;
};

// Parses and validates. Throws ParseError or InvalidScenario.
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);

// "2:20:2" -> {2,4,...,20}; "2:20" uses step 1; "7" -> {7}.
std::vector<uint16_t> parse_tenant_range(const std::string& s);

struct RunPoint {
  std::string scenario_id;
  MessageKind msg_type = MessageKind::kPacketIn;
  uint16_t tenants = 1;
  uint32_t total_rate = 10000;
  bool nodelay = false;
  HypervisorMode hypervisor = HypervisorMode::kFv;
  uint32_t runs = 10;
  uint32_t duration_s = 30;
  double trim_s = 5;
  uint64_t seed = 1;
  double stats_capacity = 7500;
  double poll_rate = 1;
  std::size_t probe_size = kDefaultProbeSize;
  uint32_t drain_ms = 1000;
  double cpu_interval_s = 1;

  bool switch_only() const { return hypervisor == HypervisorMode::kNone; }
  // e.g. "fv_PACKET_IN_t1_r40000_nd0"
  std::string label() const;
  nlohmann::json to_json() const;
};

std::vector<RunPoint> expand(const Scenario& s);

enum class SweepAxis { kRate, kTenants };
std::optional<SweepAxis> parse_sweep_axis(std::string_view s);

// Points along one axis with every other axis pinned to its first value.
std::vector<RunPoint> sweep_points(const Scenario& s, SweepAxis axis);

struct Preset {
  std::string name;
  std::string description;
  Scenario scenario;
};

const std::vector<Preset>& presets();
const Preset* find_preset(std::string_view name);

}  // namespace perfbench
