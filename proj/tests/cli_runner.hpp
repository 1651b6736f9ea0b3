#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef BIP_CLI_PATH
#error "BIP_CLI_PATH must name the bip executable"
#endif

namespace cli {

namespace fs = std::filesystem;

/// Runs the CLI with `args`, stdout/stderr discarded, and returns its exit status.
inline int run(const std::string& args) {
  const std::string cmd = std::string("\"") + BIP_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// True when both paths hold the same regular files with identical bytes.
inline bool same_tree(const fs::path& a, const fs::path& b) {
  if (fs::is_regular_file(a)) return fs::is_regular_file(b) && slurp(a) == slurp(b);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++n;
    if (!same_tree(e.path(), b / e.path().filename())) return false;
  }
  std::size_t m = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++m;
  return n == m;
}

}  // namespace cli
