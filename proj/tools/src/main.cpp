#include <iostream>

#include "acmseg/runtime.hpp"
#include "cli.hpp"

int main(int argc, char** argv) {
    acmseg::tune_allocator();
    return acmseg::cli::run(argc, argv, std::cout, std::cerr);
}
