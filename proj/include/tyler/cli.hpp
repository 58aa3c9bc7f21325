// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tyler {

/// Runs one CLI command. Returns 0 on success, 1 on a usage error, 2 on a
/// data or format error and 3 on a numeric error. Results go to `out`,
/// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tyler
