#include <iostream>
#include <string>
#include <vector>

#include "vtfuse/commands.hpp"

int main(int argc, char** argv) {
  return vtfuse::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
