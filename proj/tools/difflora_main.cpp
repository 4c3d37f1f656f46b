// SPDX-License-Identifier: Apache-2.0
#include "difflora/cli.hpp"

int main(int argc, char** argv) { return difflora::run_cli(argc, argv); }
