// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. A thin shell over the harness: parses flags and
// key=value config files, runs the requested subcommand and maps failures to
// exit codes (0 success, 1 configuration error, 2 runtime abort).

#pragma once

namespace prnn {

int run_cli(int argc, const char* const* argv);

}  // namespace prnn
