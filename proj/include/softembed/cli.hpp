// Copyright 2026 The softembed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace softembed {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,        ///< unknown subcommand or flag, bad flag value
  kExitConfig = 3,       ///< unreadable or invalid config / manifest
  kExitMissingFile = 4,  ///< an input path does not exist
  kExitData = 5,         ///< malformed dataset or data/stage mismatch
  kExitNumerical = 6,    ///< non-finite loss or failed gradient check
  kExitCheckpoint = 7,   ///< unreadable or incompatible checkpoint
};

/// Runs one subcommand (train, gen-clr, eval, mask-demo, grad-check).
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace softembed
