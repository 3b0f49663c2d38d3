#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jepa {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Patch coordinate on the token grid.
struct Pos {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pos&, const Pos&) = default;
  friend auto operator<=>(const Pos&, const Pos&) = default;
};

/// Sample ids start at 1; 0 marks a padding slot.
using SampleId = std::int64_t;
inline constexpr SampleId kPaddingId = 0;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Image too small to yield a single patch after scaling.
class RejectedSample : public Error {
 public:
  using Error::Error;
};

class OversizeError : public Error {
 public:
  OversizeError(SampleId id, const std::string& what) : Error(what), sample_id(id) {}
  SampleId sample_id;
};

/// Non-finite activation, loss or parameter.
class NumericFault : public Error {
 public:
  NumericFault(int layer, const std::string& what) : Error(what), layer(layer) {}
  int layer;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace jepa
