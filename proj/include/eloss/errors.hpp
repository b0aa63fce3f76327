#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eloss {

// Every failure raised by the library derives from Error so the CLI can map
// categories onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed ELFT data; `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A k-th neighbour distance of exactly zero makes log r undefined.
/// Carries the offending rows and, once propagated through the regularizer,
/// the block/layer the samples came from (-1 when unknown).
class DegenerateSampleError : public Error {
 public:
  DegenerateSampleError(std::vector<std::size_t> rows, int block = -1,
                        int layer = -1)
      : Error(describe(rows, block, layer)),
        rows_(std::move(rows)),
        block_(block),
        layer_(layer) {}

  const std::vector<std::size_t>& rows() const noexcept { return rows_; }
  int block() const noexcept { return block_; }
  int layer() const noexcept { return layer_; }

  DegenerateSampleError at(int block, int layer) const {
    return DegenerateSampleError(rows_, block, layer);
  }

 private:
  static std::string describe(const std::vector<std::size_t>& rows, int block,
                              int layer) {
    std::string msg = "degenerate samples: zero k-th neighbour distance at rows [";
    for (std::size_t i = 0; i < rows.size() && i < 16; ++i) {
      if (i) msg += ", ";
      msg += std::to_string(rows[i]);
    }
    if (rows.size() > 16) msg += ", ...";
    msg += "]";
    if (block >= 0) msg += " in block " + std::to_string(block);
    if (layer >= 0) msg += " layer " + std::to_string(layer);
    return msg;
  }

  std::vector<std::size_t> rows_;
  int block_;
  int layer_;
};

}  // namespace eloss
