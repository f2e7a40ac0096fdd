#include <iostream>
#include <string>
#include <vector>

#include "anatomap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return anatomap::cli::run(args, std::cout, std::cerr);
}
