#include <iostream>

#include "uptb/cli.hpp"

int main(int argc, char** argv) {
  return uptb::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
