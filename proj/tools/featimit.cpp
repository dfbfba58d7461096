#include <iostream>

#include "featimit/commands.hpp"

int main(int argc, char** argv) { return featimit::run_cli(argc, argv, std::cout, std::cerr); }
