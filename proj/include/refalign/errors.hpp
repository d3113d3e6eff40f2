#pragma once

#include <stdexcept>
#include <string>

namespace refalign {

// Invalid or inconsistent input data (files, records, cross-references).
// The CLI maps this to exit code 2; everything else unexpected maps to 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace refalign
