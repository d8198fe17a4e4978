#include <iostream>

#include "roughwave/cli.hpp"

int main(int argc, char** argv)
{
    return roughwave::cli_main(argc, argv, std::cout, std::cerr);
}
