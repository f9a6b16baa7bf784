// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "vertenet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vertenet::cli_dispatch(args);
}
