#pragma once

#include <stdexcept>
#include <string>

namespace dclseg {

// Bad arguments, shapes or configuration values.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wrong magic, unsupported version, unknown dtype.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dclseg
