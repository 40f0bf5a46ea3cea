#pragma once

#include <stdexcept>
#include <string>

namespace verdict {

/// Input that violates a documented contract (bad shapes, missing files, out-of-range
/// options). The CLI maps it to exit status 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace verdict
