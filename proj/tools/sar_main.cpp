#include <iostream>

#include "sar/cli.hpp"

int main(int argc, char** argv) { return sar::cli::main_entry(argc, argv, std::cout, std::cerr); }
