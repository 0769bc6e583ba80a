#pragma once

#include <stdexcept>
#include <string>

namespace eul {

// Base for everything thrown by the toolkit.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between operands.
struct shape_error : error {
  using error::error;
};

// Out-of-range index, class label, or layer slot.
struct index_error : error {
  using error::error;
};

// Caller violated an operation precondition.
struct contract_error : error {
  using error::error;
};

// Invalid user-facing configuration. CLI exit code 2.
struct config_error : error {
  using error::error;
};

// File format or filesystem problem. CLI exit code 2.
struct io_error : error {
  using error::error;
};

// Non-finite values or failed numerics. CLI exit code 3.
struct numeric_error : error {
  using error::error;
};

// SPD solve failed even after ridge regularization. CLI exit code 3.
struct singular_system_error : numeric_error {
  using numeric_error::numeric_error;
};

// Too few samples to run a statistical procedure.
struct insufficient_data_error : contract_error {
  using contract_error::contract_error;
};

}  // namespace eul
