#pragma once

#include <stdexcept>
#include <string>

namespace batchrl {

// Caller violated a precondition (bad shapes, empty inputs, unknown names).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A training step produced non-finite values and was rolled back.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An environment broke its own contract (e.g. a dialog turn without a user reply).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed batch, checkpoint, config or environment file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace batchrl
