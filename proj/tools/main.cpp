#include <iostream>
#include <string>
#include <vector>

#include "bnnvc/cli.hpp"

int main(int argc, char** argv)
{
    return bnnvc::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
