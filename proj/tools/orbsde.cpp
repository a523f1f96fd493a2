#include <iostream>

#include "orbsde/cli.hpp"

int main(int argc, char** argv) { return orbsde::run_cli(argc, argv, std::cout, std::cerr); }
