#include <iostream>

#include "fbd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fbd::run_cli(args, std::cout, std::cerr);
}
