#include "slipnet/harness.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return slipnet::harness::run_cli(argc, argv, std::cout, std::cerr);
}
