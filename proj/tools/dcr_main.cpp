// SPDX-License-Identifier: Apache-2.0
#include "dcr/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dcr::cli::run_cli(args, std::cout, std::cerr);
}
