#include <iostream>

#include "misd/cli.hpp"

int main(int argc, char** argv) { return misd::run_cli(argc, argv, std::cout, std::cerr); }
