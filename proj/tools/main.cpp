#include "dif/cli.hpp"
#include "dif/runtime.hpp"

#include <iostream>

int main(int argc, char** argv) {
  dif::configure_allocator();
  return dif::run_cli(argc, argv, std::cout, std::cerr);
}
