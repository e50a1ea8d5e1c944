// SPDX-License-Identifier: Apache-2.0
#include "ltn/cli.hpp"

int main(int argc, char** argv) { return ltn::run_cli(argc, argv); }
