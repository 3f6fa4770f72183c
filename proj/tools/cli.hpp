#pragma once

namespace vrt_cli {

inline constexpr const char* kToolVersion = "vla-redteam 0.1.0";

// Full command-line entry point (parse + dispatch). Returns the process exit
// code; never throws.
int cli_main(int argc, const char* const* argv);

}  // namespace vrt_cli
