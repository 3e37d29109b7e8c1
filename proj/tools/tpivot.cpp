#include <iostream>
#include <string>
#include <vector>

#include "tpivot/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return tpivot::run_cli(args, std::cout, std::cerr);
}
