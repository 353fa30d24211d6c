#include <iostream>

#include "multitab/cli/cli.hpp"

int main(int argc, char** argv) { return multitab::cli::run(argc, argv, std::cout, std::cerr); }
