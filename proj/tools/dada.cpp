#include <iostream>

#include "dada/cli.hpp"

int main(int argc, char** argv) { return dada::cli::run(argc, argv, std::cout, std::cerr); }
