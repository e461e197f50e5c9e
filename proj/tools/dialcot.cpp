#include <iostream>

#include "dialcot/commands.hpp"

int main(int argc, char** argv) { return dialcot::run_cli(argc, argv, std::cout, std::cerr); }
