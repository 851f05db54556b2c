#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace photostat {

/// Base of all errors raised by this library.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration or request (CLI exit code 1).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Malformed, truncated or out-of-contract data (CLI exit code 2).
class DataError : public Error {
  public:
    using Error::Error;
};

class BadMagic : public DataError {
  public:
    explicit BadMagic(std::size_t offset)
        : DataError("bad magic at byte offset " + std::to_string(offset)),
          offset(offset) {}
    std::size_t offset;
};

class UnsupportedVersion : public DataError {
  public:
    UnsupportedVersion(unsigned version, std::size_t offset)
        : DataError("unsupported format version " + std::to_string(version) +
                    " at byte offset " + std::to_string(offset)),
          version(version), offset(offset) {}
    unsigned version;
    std::size_t offset;
};

class TruncatedRecord : public DataError {
  public:
    explicit TruncatedRecord(std::size_t offset)
        : DataError("truncated record at byte offset " + std::to_string(offset)),
          offset(offset) {}
    std::size_t offset;
};

class TruncatedFrame : public DataError {
  public:
    explicit TruncatedFrame(std::size_t offset)
        : DataError("truncated frame data at byte offset " + std::to_string(offset)),
          offset(offset) {}
    std::size_t offset;
};

class CountOverLimit : public DataError {
  public:
    CountOverLimit(unsigned count, std::size_t offset)
        : DataError("photon count " + std::to_string(count) +
                    " exceeds detector ceiling at byte offset " + std::to_string(offset)),
          count(count), offset(offset) {}
    unsigned count;
    std::size_t offset;
};

class HitOutOfBounds : public DataError {
  public:
    HitOutOfBounds(unsigned x, unsigned y, unsigned width, unsigned height)
        : DataError("hit (" + std::to_string(x) + "," + std::to_string(y) +
                    ") outside sensor " + std::to_string(width) + "x" +
                    std::to_string(height)) {}
};

class MalformedRow : public DataError {
  public:
    MalformedRow(std::size_t line, const std::string& detail)
        : DataError("malformed row at line " + std::to_string(line) + ": " + detail),
          line(line) {}
    std::size_t line;
};

class InsufficientData : public DataError {
  public:
    using DataError::DataError;
};

class OverlappingROIs : public ConfigError {
  public:
    OverlappingROIs(const std::string& a, const std::string& b)
        : ConfigError("channel ROIs '" + a + "' and '" + b + "' overlap") {}
};

class FoldOutOfRange : public ConfigError {
  public:
    explicit FoldOutOfRange(const std::string& what) : ConfigError(what) {}
};

class ZeroSingles : public DataError {
  public:
    explicit ZeroSingles(const std::string& channel)
        : DataError("channel '" + channel + "' has no counts after background subtraction") {}
};

class DegenerateDistribution : public DataError {
  public:
    using DataError::DataError;
};

class EmptyHistogram : public DataError {
  public:
    using DataError::DataError;
};

class ConfigInvalid : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

} // namespace photostat
