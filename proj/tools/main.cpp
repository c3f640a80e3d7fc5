#include "idstego/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return idstego::cli::run(argc, argv, std::cout, std::cerr);
}
