#pragma once

#include <stdexcept>
#include <string>

namespace aircorrect {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A required column is missing from a CSV header, or an unknown column is present.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A cell or timestamp could not be parsed; the message carries the file line.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Too much of a column is absent, or timestamps are inconsistent.
class DataQualityError : public Error {
public:
    using Error::Error;
};

/// A feature has min == max and cannot be min-max scaled.
class DegenerateFeatureError : public Error {
public:
    using Error::Error;
};

/// Not enough rows to build a single supervised sample.
class EmptyDatasetError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration (unknown key, bad horizon, bad fraction, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch between parameters and inputs.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Two values that must agree by construction do not (e.g. dataset/table alignment).
class InternalConsistencyError : public Error {
public:
    using Error::Error;
};

/// Training loss became non-finite; the message names the epoch and batch.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// A serialized bundle is malformed.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A serialized bundle carries a version this build does not read.
class UnsupportedVersionError : public Error {
public:
    using Error::Error;
};

/// r-squared requested on a constant truth vector.
class UndefinedVarianceError : public Error {
public:
    using Error::Error;
};

/// Accuracy improvement requested with a zero baseline loss.
class UndefinedBaselineError : public Error {
public:
    using Error::Error;
};

/// File could not be opened or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace aircorrect
