#pragma once

#include <stdexcept>
#include <string>

namespace nedcal {

// Base for all recoverable library errors. The CLI maps each subclass to a
// distinct exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input: bad file, dimension mismatch, non-finite value, bad config.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Temperature tuning cannot run on the given data (e.g. a singleton class
// under leave-one-out).
class TuningPreconditionError : public Error {
public:
    using Error::Error;
};

// A label that is not part of the expected label space.
class LabelSpaceMismatch : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace nedcal
