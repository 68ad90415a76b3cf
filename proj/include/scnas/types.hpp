#pragma once

#include "scnas/ops.hpp"
#include "scnas/tensor.hpp"

namespace scnas {

// Double precision everywhere: the gradient-check tolerances need it, and at
// desk scale there is no reason to drop to single.
using Real = double;
using Tensor = TensorT<Real>;

// Raised by config parsing/validation; mapped to exit code 2 by the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace scnas
