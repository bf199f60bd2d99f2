// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace splatprior::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kInvalid = 2, kMissingArtifact = 3, kNumerical = 4 };

/// Runs one command line (args[0] is the program name) and returns the exit code.
/// Diagnostics go to `err`, summaries to `out`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace splatprior::cli
