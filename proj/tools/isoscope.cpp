#include <iostream>

#include "isoscope/cli.hpp"

int main(int argc, char** argv) { return isoscope::cli_main(argc, argv, std::cout, std::cerr); }
