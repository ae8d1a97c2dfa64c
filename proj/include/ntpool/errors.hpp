#pragma once

#include <stdexcept>
#include <string>

namespace ntpool {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wire-format violations: bad field ranges, truncated packets.
class WireError : public Error {
public:
    using Error::Error;
};

// Malformed text inputs (fixture files, CSV rows, addresses).
class ParseError : public Error {
public:
    using Error::Error;
};

// Inputs that parse but violate a semantic precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Unexpected response shape from a peer that did answer.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Transport failures after retries are exhausted.
class NetworkError : public Error {
public:
    using Error::Error;
};

} // namespace ntpool
