#include <iostream>

#include "obsmult/cli.hpp"

int main(int argc, char** argv) { return obsmult::cli::dispatch(argc, argv, std::cout, std::cerr); }
