#pragma once

#include <stdexcept>
#include <string>

namespace mebnn {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed structured-text document (unknown key, wrong type, bad syntax).
class ParseError : public Error {
public:
    using Error::Error;
};

// Inconsistent tensor or layer shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A precondition on an operation's arguments was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Missing or unreadable file.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mebnn
