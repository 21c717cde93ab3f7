#include <iostream>

#include "intake/commands.hpp"

int main(int argc, char** argv) { return intake::run_cli(argc, argv, std::cout, std::cerr); }
