#pragma once

#include <stdexcept>
#include <string>

namespace adcsl {

/// Shapes that do not fit together (matmul inner dims, concat widths, ...).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed frame on the wire: truncation, bad version, CRC mismatch.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Socket or queue failure; the message carries the pending iteration when known.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a charge would push the ledger past the budget.
class BudgetExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace adcsl
