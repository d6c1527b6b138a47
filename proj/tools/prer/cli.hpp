#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prer::cli {

enum ExitCode : int { ok = 0, config_error = 1, data_error = 2, numeric_error = 3 };

/// Entry point shared by the binary and the tests. `args` excludes argv[0].
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single run
};

Summary summarize(const std::vector<double>& values);

}  // namespace prer::cli
