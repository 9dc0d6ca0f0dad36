#include <iostream>

#include "patternid/cli.hpp"

int main(int argc, char** argv) { return patternid::run_cli(argc, argv, std::cout, std::cerr); }
