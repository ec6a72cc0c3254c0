#include <iostream>
#include <string>
#include <vector>

#include "isvqa/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return isvqa::cli::run(args, std::cout, std::cerr);
}
