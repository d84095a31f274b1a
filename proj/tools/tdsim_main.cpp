#include <iostream>
#include <string>
#include <vector>

#include "tdsim/cli.hpp"

int main(int argc, char** argv) {
  return tdsim::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
