#pragma once

#include <stdexcept>
#include <string>

namespace dreamnet {

/// Base class of every error thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& w) : Error(w) {}
};
struct NotSpd : Error {
  explicit NotSpd(const std::string& w) : Error(w) {}
};
// Covariance regularizer vanished (all frames identical); output would not
// be SPD.
struct DegenerateSet : Error {
  explicit DegenerateSet(const std::string& w) : Error(w) {}
};
struct ConvergenceFailure : Error {
  explicit ConvergenceFailure(const std::string& w) : Error(w) {}
};
struct BadLabel : Error {
  explicit BadLabel(const std::string& w) : Error(w) {}
};
struct BadConfig : Error {
  explicit BadConfig(const std::string& w) : Error(w) {}
};
struct BadShape : Error {
  explicit BadShape(const std::string& w) : Error(w) {}
};
struct RankDeficient : Error {
  explicit RankDeficient(const std::string& w) : Error(w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(w) {}
};
struct TooFew : Error {
  explicit TooFew(const std::string& w) : Error(w) {}
};
struct NonFinite : Error {
  explicit NonFinite(const std::string& w) : Error(w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(w) {}
};

}  // namespace dreamnet
