#include <iostream>

#include "tfbest/cli.hpp"

int main(int argc, char** argv) { return tfbest::cli::run(argc, argv, std::cout, std::cerr); }
