#include "sfpnet/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return sfpnet::run_cli(argc, argv, std::cout, std::cerr);
}
