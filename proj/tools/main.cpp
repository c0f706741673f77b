#include "lissm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return lissm::cli::run(argc, argv, std::cout, std::cerr); }
