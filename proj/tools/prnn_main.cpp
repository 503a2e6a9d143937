// SPDX-License-Identifier: Apache-2.0

#include "prnn/cli.hpp"

int main(int argc, char** argv) { return prnn::run_cli(argc, argv); }
