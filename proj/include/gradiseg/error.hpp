#pragma once

#include <stdexcept>
#include <string>

namespace gradiseg {

/// Base for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented invariant or precondition (bad file contents,
/// out-of-range values, malformed flags). The CLI maps this to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace gradiseg
