// verify.hpp - named invariant suites run by `polynet verify`.

#ifndef POLYNET_VERIFY_HPP
#define POLYNET_VERIFY_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace polynet {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;  // residual, error or failure count
    double bound = 0.0;     // pass threshold on `measured`
    std::string detail;
};

// degree, oracle, grad, se-identity, fold, tensor, autodiff, netzoo; "all"
// runs every one of them.
const std::vector<std::string>& suite_names();

// Throws std::invalid_argument for an unknown suite.
std::vector<CheckResult> run_suite(const std::string& suite, std::uint64_t seed);

// Degree certification over `count` seeds starting at `first_seed`: one
// check per block configuration, measured = number of wrong degrees.
std::vector<CheckResult> degree_suite(std::uint64_t first_seed, std::size_t count);

}  // namespace polynet

#endif  // POLYNET_VERIFY_HPP
