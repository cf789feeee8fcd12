#include <iostream>

#include "uai/cli.h"

int main(int argc, char** argv) { return uai::run_cli(argc, argv, std::cout, std::cerr); }
