#pragma once

#include <stdexcept>
#include <string>

namespace vgan {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Data errors (loading, pairing, array geometry).
class DataError : public Error {
public:
    using Error::Error;
};
class MissingPairError : public DataError {
public:
    explicit MissingPairError(const std::string& msg) : DataError("MissingPairError: " + msg) {}
};
class ShapeMismatchError : public DataError {
public:
    explicit ShapeMismatchError(const std::string& msg) : DataError("ShapeMismatchError: " + msg) {}
};
class InsufficientDataError : public DataError {
public:
    explicit InsufficientDataError(const std::string& msg) : DataError("InsufficientDataError: " + msg) {}
};

// Configuration errors (specs, modes, CLI options).
class ConfigError : public Error {
public:
    using Error::Error;
};
class SpecError : public ConfigError {
public:
    explicit SpecError(const std::string& msg) : ConfigError("SpecError: " + msg) {}
};
class ModeError : public ConfigError {
public:
    explicit ModeError(const std::string& msg) : ConfigError("ModeError: " + msg) {}
};

// Numeric domain errors.
class DomainError : public Error {
public:
    using Error::Error;
};
class StructureMismatchError : public DomainError {
public:
    explicit StructureMismatchError(const std::string& msg) : DomainError("StructureMismatchError: " + msg) {}
};
class DegenerateInputError : public DomainError {
public:
    explicit DegenerateInputError(const std::string& msg) : DomainError("DegenerateInputError: " + msg) {}
};
class SingleClassError : public DomainError {
public:
    explicit SingleClassError(const std::string& msg) : DomainError("SingleClassError: " + msg) {}
};
class NoPositiveError : public DomainError {
public:
    explicit NoPositiveError(const std::string& msg) : DomainError("NoPositiveError: " + msg) {}
};
class NonFiniteLossError : public DomainError {
public:
    explicit NonFiniteLossError(const std::string& msg) : DomainError("NonFiniteLossError: " + msg) {}
};

// Serialized-artifact errors (checkpoints, weight containers).
class FormatError : public Error {
public:
    using Error::Error;
};
class WeightsFormatError : public FormatError {
public:
    explicit WeightsFormatError(const std::string& msg) : FormatError("WeightsFormatError: " + msg) {}
};
class ChecksumError : public FormatError {
public:
    explicit ChecksumError(const std::string& msg) : FormatError("ChecksumError: " + msg) {}
};

}  // namespace vgan
