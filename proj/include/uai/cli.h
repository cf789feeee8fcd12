#ifndef UAI_CLI_H_
#define UAI_CLI_H_

#include <iosfwd>

namespace uai {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;   // bad flags, config or input files
inline constexpr int kExitRuntime = 3;  // training or I/O failure mid-run

// Subcommands: run, synthesize, stats, evaluate, serve. `--help` on any of
// them prints its flags.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uai

#endif  // UAI_CLI_H_
