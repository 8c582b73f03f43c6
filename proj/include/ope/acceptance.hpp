#pragma once

#include <string>
#include <vector>

namespace ope {

struct CriterionResult {
    std::string suite;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::vector<std::string> acceptance_suite_names();

struct AcceptanceOptions {
    int threads = 0;
    // Optional LIBSVM files for the table-pattern suite; deterministic
    // stand-in datasets are generated when empty.
    std::vector<std::string> dataset_paths;
};

// Runs one named property suite with fixed seeds. Unknown names throw with
// the suite list in the message.
CriterionResult run_acceptance(const std::string& name, const AcceptanceOptions& opts = {});

}  // namespace ope
