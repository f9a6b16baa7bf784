// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace vertenet {

// Batch command-line surface. args excludes the program name. Returns the
// process exit code: 0 success, 2 validation/usage error, 1 runtime failure.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace vertenet
