#pragma once
// Experiment configuration: strict line-oriented `key = value` files with
// [scenario], [grids], [experiment] and [modes] sections. Unknown keys are
// errors, not warnings; every parse error names the key and line.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "harqlab/amc.hpp"
#include "harqlab/simulator.hpp"

namespace harqlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Engines { analysis, simulation, both };

inline std::string engines_label(Engines e) {
  switch (e) {
    case Engines::analysis:
      return "analysis";
    case Engines::simulation:
      return "simulation";
    default:
      return "both";
  }
}

struct ExperimentSpec {
  ScenarioConfig scenario;
  std::vector<double> snr_grid_db = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30};
  std::vector<CorrelationSetting> doppler_grid = {
      CorrelationSetting::fully_correlated(), CorrelationSetting::doppler(10.0), CorrelationSetting::doppler(30.0),
      CorrelationSetting::doppler(50.0), CorrelationSetting::independent()};
  Engines engines = Engines::both;
  std::string output_dir = "out";
  bool emit_diagnostics = false;
  double gate = 3.0;
  int replicates = 1;

  bool operator==(const ExperimentSpec&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] inline void config_fail(const std::string& key, int line, const std::string& message) {
  throw ConfigError("config error at line " + std::to_string(line) + ", key '" + key + "': " + message);
}

inline double parse_double(const std::string& key, int line, const std::string& text) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(value)) config_fail(key, line, "malformed number '" + text + "'");
    return value;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    config_fail(key, line, "malformed number '" + text + "'");
  }
}

inline long long parse_integer(const std::string& key, int line, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long value = std::stoll(text, &used);
    if (used != text.size()) config_fail(key, line, "malformed integer '" + text + "'");
    return value;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    config_fail(key, line, "malformed integer '" + text + "'");
  }
}

inline bool parse_bool(const std::string& key, int line, const std::string& text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  config_fail(key, line, "expected true/false, got '" + text + "'");
}

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string token;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      if (!token.empty()) out.push_back(token);
      token.clear();
    } else {
      token += c;
    }
  }
  if (!token.empty()) out.push_back(token);
  return out;
}

inline CorrelationSetting parse_correlation(const std::string& key, int line, const std::string& token) {
  if (token == "independent") return CorrelationSetting::independent();
  const double hz = parse_double(key, line, token);
  if (hz < 0.0) config_fail(key, line, "doppler must be >= 0 or 'independent'");
  return CorrelationSetting::doppler(hz);
}

struct PendingMode {
  int index;
  int line;
  AmcMode mode;
};

}  // namespace detail

/// Parses a configuration from text. Empty input yields the full defaults.
inline ExperimentSpec parse_config_text(const std::string& text) {
  ExperimentSpec spec;
  std::vector<detail::PendingMode> pending_modes;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string stripped = raw;
    const std::size_t hash = stripped.find('#');
    if (hash != std::string::npos) stripped.erase(hash);
    stripped = detail::trim(stripped);
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') detail::config_fail(stripped, line, "unterminated section header");
      section = detail::trim(stripped.substr(1, stripped.size() - 2));
      if (section != "scenario" && section != "grids" && section != "experiment" && section != "modes") {
        detail::config_fail(section, line, "unknown section");
      }
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) detail::config_fail(stripped, line, "expected 'key = value'");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty()) detail::config_fail(stripped, line, "empty key");
    if (value.empty()) detail::config_fail(key, line, "empty value");

    if (section == "scenario") {
      if (key == "topology") {
        if (value == "noncoop") {
          spec.scenario.topology = Topology::noncoop;
        } else if (value == "coop") {
          spec.scenario.topology = Topology::coop;
        } else {
          detail::config_fail(key, line, "expected noncoop or coop");
        }
      } else if (key == "mean_snr_sd_db") {
        spec.scenario.mean_snr_sd_db = detail::parse_double(key, line, value);
      } else if (key == "relay_gain") {
        spec.scenario.relay_gain = detail::parse_double(key, line, value);
        if (spec.scenario.relay_gain < 0.0) detail::config_fail(key, line, "relay_gain must be >= 0");
      } else if (key == "doppler") {
        spec.scenario.correlation = detail::parse_correlation(key, line, value);
      } else if (key == "rtt_ms") {
        const double ms = detail::parse_double(key, line, value);
        if (!(ms > 0.0)) detail::config_fail(key, line, "rtt_ms must be positive");
        spec.scenario.rtt_s = ms * 1e-3;
      } else if (key == "base_packet_ms") {
        const double ms = detail::parse_double(key, line, value);
        if (!(ms > 0.0)) detail::config_fail(key, line, "base_packet_ms must be positive");
        spec.scenario.base_packet_s = ms * 1e-3;
      } else if (key == "per_target") {
        const double p = detail::parse_double(key, line, value);
        if (!(p > 0.0) || !(p < 1.0)) detail::config_fail(key, line, "per_target must lie strictly inside (0,1)");
        spec.scenario.per_target = p;
      } else if (key == "n_retx_max") {
        const long long n = detail::parse_integer(key, line, value);
        if (n < 1) detail::config_fail(key, line, "n_retx_max must be >= 1");
        spec.scenario.n_retx_max = static_cast<int>(n);
      } else if (key == "n_packets") {
        const long long n = detail::parse_integer(key, line, value);
        if (n < 1) detail::config_fail(key, line, "n_packets must be >= 1");
        spec.scenario.n_packets = n;
      } else if (key == "seed") {
        spec.scenario.seed = static_cast<std::uint64_t>(detail::parse_integer(key, line, value));
      } else if (key == "correlated_new_packet") {
        spec.scenario.correlated_new_packet = detail::parse_bool(key, line, value);
      } else {
        detail::config_fail(key, line, "unknown key in [scenario]");
      }
    } else if (section == "grids") {
      if (key == "snr_db") {
        spec.snr_grid_db.clear();
        for (const std::string& token : detail::split_tokens(value)) {
          spec.snr_grid_db.push_back(detail::parse_double(key, line, token));
        }
        if (spec.snr_grid_db.empty()) detail::config_fail(key, line, "snr grid must be nonempty");
      } else if (key == "doppler") {
        spec.doppler_grid.clear();
        for (const std::string& token : detail::split_tokens(value)) {
          spec.doppler_grid.push_back(detail::parse_correlation(key, line, token));
        }
        if (spec.doppler_grid.empty()) detail::config_fail(key, line, "doppler grid must be nonempty");
      } else {
        detail::config_fail(key, line, "unknown key in [grids]");
      }
    } else if (section == "experiment") {
      if (key == "engines") {
        if (value == "analysis") {
          spec.engines = Engines::analysis;
        } else if (value == "simulation") {
          spec.engines = Engines::simulation;
        } else if (value == "both") {
          spec.engines = Engines::both;
        } else {
          detail::config_fail(key, line, "expected analysis, simulation or both");
        }
      } else if (key == "output_dir") {
        spec.output_dir = value;
      } else if (key == "emit_diagnostics") {
        spec.emit_diagnostics = detail::parse_bool(key, line, value);
      } else if (key == "gate") {
        spec.gate = detail::parse_double(key, line, value);
        if (!(spec.gate > 0.0)) detail::config_fail(key, line, "gate must be positive");
      } else if (key == "replicates") {
        const long long n = detail::parse_integer(key, line, value);
        if (n < 1) detail::config_fail(key, line, "replicates must be >= 1");
        spec.replicates = static_cast<int>(n);
      } else {
        detail::config_fail(key, line, "unknown key in [experiment]");
      }
    } else if (section == "modes") {
      if (key.rfind("mode.", 0) != 0) detail::config_fail(key, line, "expected keys of the form mode.<index>");
      const long long index = detail::parse_integer(key, line, key.substr(5));
      if (index < 1 || index > 64) detail::config_fail(key, line, "mode index out of range");
      const std::vector<std::string> fields = detail::split_tokens(value);
      if (fields.size() != 6) {
        detail::config_fail(key, line, "expected 6 fields: modulation code-rate rate a g gamma_p_db");
      }
      detail::PendingMode pending;
      pending.index = static_cast<int>(index);
      pending.line = line;
      pending.mode.index = static_cast<int>(index);
      pending.mode.modulation = fields[0];
      pending.mode.code_rate = fields[1];
      pending.mode.rate_bps = detail::parse_double(key, line, fields[2]);
      pending.mode.a = detail::parse_double(key, line, fields[3]);
      pending.mode.g = detail::parse_double(key, line, fields[4]);
      pending.mode.gamma_p = db_to_linear(detail::parse_double(key, line, fields[5]));
      pending_modes.push_back(pending);
    } else {
      detail::config_fail(key, line, "key appears before any [section] header");
    }
  }

  if (!pending_modes.empty()) {
    ModeTable table;
    table.per_target = spec.scenario.per_target;
    table.modes.resize(pending_modes.size());
    std::vector<bool> seen(pending_modes.size(), false);
    for (const auto& pending : pending_modes) {
      if (pending.index > static_cast<int>(pending_modes.size()) || seen[static_cast<std::size_t>(pending.index) - 1]) {
        detail::config_fail("mode." + std::to_string(pending.index), pending.line,
                            "mode indices must be 1..N, each exactly once");
      }
      seen[static_cast<std::size_t>(pending.index) - 1] = true;
      table.modes[static_cast<std::size_t>(pending.index) - 1] = pending.mode;
    }
    try {
      table.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config error in [modes]: ") + e.what());
    }
    spec.scenario.modes = table;
  }
  spec.scenario.modes.per_target = spec.scenario.per_target;
  try {
    spec.scenario.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config error: ") + e.what());
  }
  return spec;
}

/// Parses a configuration file from disk.
inline ExperimentSpec parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config error: cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

/// The canonical default configuration; parsing it reproduces the built-in
/// defaults exactly.
inline std::string default_config_text() {
  return R"(# harq-lab experiment configuration.
# Every key shown here is at its built-in default; unknown keys are errors.

[scenario]
topology = coop                # used by single-cell runs; sweeps always run both
mean_snr_sd_db = 10            # source-destination mean SNR for single-cell runs
relay_gain = 4                 # SR and RD mean SNR as a multiple of SD's
doppler = 10                   # Hz; 0 = fully correlated, or 'independent'
rtt_ms = 2
base_packet_ms = 1             # slowest mode's packet duration
per_target = 1e-4
n_retx_max = 1                 # the analysis engine supports 1 only
n_packets = 100000
seed = 1
correlated_new_packet = false  # keep the fading path alive across packets

[grids]
snr_db = 0 2 4 6 8 10 12 14 16 18 20 22 24 26 28 30
doppler = 0 10 30 50 independent

[experiment]
engines = both                 # analysis, simulation or both
output_dir = out
emit_diagnostics = false       # adds diagnostics.csv with formula variants
gate = 3                       # |z| threshold for the cross-engine exit gate
replicates = 1

[modes]
# mode.<index> = <modulation> <code-rate> <rate-bps> <a> <g> <gamma_p-dB>
# Uncomment and list every mode to replace the built-in six-mode table:
# mode.1 = BPSK 1/2 0.50 274.7229 7.9932 -1.5331
)";
}

}  // namespace harqlab
