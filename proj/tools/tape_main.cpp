// Copyright (c) 2026 the tape authors
// SPDX-License-Identifier: Apache-2.0
//
// `tape` command-line entry point.  Subcommands are registered as the
// corresponding library modules land; unknown commands exit with status 2.
#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "tape: no subcommands registered yet\n");
  return 2;
}
