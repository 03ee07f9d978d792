#include <iostream>

#include "mbpep/cli.hpp"

int main(int argc, char** argv)
{
    return mbpep::cli::run(argc, argv, std::cout, std::cerr);
}
