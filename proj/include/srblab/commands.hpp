#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srblab/error.hpp"
#include "srblab/scenario.hpp"

namespace srblab {

/// Command-line harness commands. Each one reads a JSON config, writes its outputs
/// plus the resolved config into out_dir, and returns a JSON summary.
struct CommandOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  std::string base_dir = ".";  // relative paths in the config resolve against this
};

struct CommandResult {
  std::string summary;  // JSON object
  std::vector<std::string> outputs;
  bool fell = false;  // rollout-style commands: the character fell before the end
};

/// Thrown for invalid configs and missing inputs; everything else is a runtime failure.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorCode::Parse, message) {}
};

const std::vector<std::string>& command_names();
CommandResult run_command(const std::string& name, const std::string& config_json, const CommandOptions& options);

struct DeltaPipelineOptions {
  int cycles = 4;
  int warmup_cycles = 1;
  std::uint64_t seed = 0;
};

struct DeltaPipelineResult {
  DeltaTables deltas;
  BaselineMotion baseline;  // aligned
  std::vector<SRBState> trajectory;
};

/// Rolls the controller out on its reference, keeps the cycles after the warm-up,
/// aligns them and computes the tables against the full-body reference.
DeltaPipelineResult generate_deltas(const Controller& controller, const Skeleton& skeleton,
                                    const FullBodyMotion& reference, const DeltaPipelineOptions& options);

}  // namespace srblab
