#include <iostream>
#include <string>
#include <vector>

#include "verdict/cli.hpp"

int main(int argc, char** argv) {
    return verdict::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
