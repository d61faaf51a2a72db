// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mm3d {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (PLY, JSON). Carries the 1-based line when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what),
          line_(line) {}
    explicit ParseError(const std::string& what)
        : Error(what) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_ = 0;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Too few points for the requested geometric operation.
class DegenerateSceneError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Violated precondition of an API call.
class ContractError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

} // namespace mm3d
