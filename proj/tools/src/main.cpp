// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include "commands.hpp"

#include <iostream>

int main(int argc, char **argv) {
    return splatprior::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
