#pragma once

#include <stdexcept>
#include <string>

namespace modcon {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad caller-supplied arguments (sizes, ranges, empty inputs).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Impossible or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Geometry that does not fit the canvas.
class BoundsError : public Error {
public:
    using Error::Error;
};

// Records inconsistent with declared dump metadata.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Missing or malformed data (missing cells, missing samples, NaN inputs).
class DataError : public Error {
public:
    using Error::Error;
};

// Solver could not be run on the given problem (e.g. single-class labels).
class TrainingError : public Error {
public:
    using Error::Error;
};

// Base of the distinct failures raised while reading a dump.
class DumpError : public DataError {
public:
    using DataError::DataError;
};

class CorruptIndexError : public DumpError {
public:
    using DumpError::DumpError;
};

class TruncatedBlobError : public DumpError {
public:
    using DumpError::DumpError;
};

class NonFiniteError : public DumpError {
public:
    using DumpError::DumpError;
};

}  // namespace modcon
