#include <string>
#include <vector>

#include "rahfl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rahfl::run_cli(std::move(args));
}
