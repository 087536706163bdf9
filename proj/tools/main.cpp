#include <iostream>

#include "dclseg/cli.hpp"

int main(int argc, char** argv) { return dclseg::cli::run(argc, argv, std::cout, std::cerr); }
