#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <string>

namespace hspk::testing {

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

// Runs the hspk binary with a shell-quoted argument string.
inline CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(HSPK_CLI) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) r.output += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace hspk::testing
