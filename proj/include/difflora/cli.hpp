// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace difflora {

// Command-line front end (gen-data / train / grad-check / eval / attn-report).
// Returns the process exit code: 0 success, 2 configuration or input errors,
// 3 numeric divergence, 4 gradient check over tolerance.
int run_cli(int argc, char** argv);

}  // namespace difflora
