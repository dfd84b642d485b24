#include <string>
#include <vector>

#include "himap/harness/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return himap::harness::cli_run(args);
}
