// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return timepro::cli::run(args, std::cout, std::cerr);
}
