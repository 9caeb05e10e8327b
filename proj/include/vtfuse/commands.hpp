#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "vtfuse/config.hpp"

namespace vtfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;  // bad flags, config keys or values
inline constexpr int kExitIo = 2;     // unreadable, unwritable or malformed files

struct Command {
  std::string name;
  std::string summary;
  std::vector<KeySpec> keys;
  std::function<void(const RunConfig&, std::ostream&)> run;
};

// gen-data, gen-pairs, train, eval, ablate, train-gan, eval-gan, policy-demo.
const std::vector<Command>& commands();

// Parses `args` (without the program name), runs one command and maps
// failures to exit codes.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vtfuse
