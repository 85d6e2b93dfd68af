#pragma once

#include <stdexcept>
#include <string>

namespace langadapt {

/// Base class for every recoverable failure raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (vocab, packed dataset, checkpoint, task data, config).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training (non-finite loss or gradient).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace langadapt
