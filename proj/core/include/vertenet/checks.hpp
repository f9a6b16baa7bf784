// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vertenet {

struct BlockCheck {
  std::string name;
  double max_rel_err = 0.0;
};

// Finite-difference gradient checks over every learnable block: DRSA, DRCA,
// CSA, GDFN, self/cross transformer blocks, a full MCFB and a tiny
// end-to-end model. Each check perturbs all parameters and (for the
// sub-model blocks) the inputs.
std::vector<BlockCheck> run_block_gradchecks(std::uint64_t seed,
                                             double eps = 1e-5);

}  // namespace vertenet
