#pragma once

#include <string>
#include <vector>

namespace pcam {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the pcam executable; args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace pcam
