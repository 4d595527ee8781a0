#include <iostream>

#include "hybridseg/cli.hpp"

int main(int argc, char** argv) { return hybridseg::cli::run(argc, argv, std::cout, std::cerr); }
