#include <iostream>

#include "tinyode/cli.hpp"

int main(int argc, char** argv) { return tinyode::cli::run(argc, argv, std::cout, std::cerr); }
