// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "tyler/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tyler::run_cli(args, std::cout, std::cerr);
}
