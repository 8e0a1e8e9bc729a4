#include <iostream>

#include "daempc/cli.h"

int main(int argc, char** argv) {
  return daempc::RunCli(argc, argv, std::cout, std::cerr);
}
