#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tdsim {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitState = 4;

// Command-line policy: "name" or "name:key=value[;key=value]", e.g.
// "confidence:tau=0.7".
struct PolicySpec {
  std::string name;
  std::map<std::string, double> params;
};

PolicySpec parse_policy_spec(const std::string& text);

// Entry point of the tdsim binary; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tdsim
