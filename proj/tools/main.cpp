#include <iostream>

#include "prf/cli.hpp"

int main(int argc, char** argv) { return prf::cli::run(argc, argv, std::cout, std::cerr); }
