// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace graphormer {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Out-of-range ids (embedding lookups, node indices).
class IndexError : public Error {
public:
    using Error::Error;
};

// NaN/Inf detected at an op boundary.
class NumericError : public Error {
public:
    using Error::Error;
};

// API misuse: wrong mode, non-scalar loss, tape mismatch.
class ContractError : public Error {
public:
    using Error::Error;
};

// Degenerate geometry: singular cells, coincident atoms.
class GeometryError : public Error {
public:
    using Error::Error;
};

// Dataset / checkpoint content problems.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed files; message carries line number and field path.
class ParseError : public DataError {
public:
    using DataError::DataError;
};

} // namespace graphormer
