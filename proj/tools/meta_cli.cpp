#include <iostream>

#include "meta/cli.hpp"

int main(int argc, char** argv) { return meta::run_cli(argc, argv, std::cout, std::cerr); }
