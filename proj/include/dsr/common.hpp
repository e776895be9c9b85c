#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dsr {

/// Per-bin pseudo-count added to both state-space histograms by default.
inline constexpr double kDefaultPseudoCount = 0.01;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMatrix = Eigen::MatrixXd;

/// Argument outside an operation's domain (shape mismatch, bad sizes, bad parameters).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data with a zero-variance dimension or an otherwise unusable series.
class DegenerateData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical trajectory left the finite range. `last_valid` is the index of the
/// last finite row that was produced.
class Diverged : public std::runtime_error {
public:
    Diverged(const std::string& what, long last_valid)
      : std::runtime_error(what), last_valid_(last_valid)
    {}
    long last_valid() const noexcept { return last_valid_; }

private:
    long last_valid_;
};

/// Non-finite loss or gradient during optimization.
class TrainingFailure : public std::runtime_error {
public:
    TrainingFailure(const std::string& what, long epoch, long step)
      : std::runtime_error(what), epoch_(epoch), step_(step)
    {}
    long epoch() const noexcept { return epoch_; }
    long step() const noexcept { return step_; }

private:
    long epoch_;
    long step_;
};

/// Malformed input file or configuration.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Derive a component seed from a master seed and a stable tag.
/// FNV-1a over the tag, mixed with splitmix64.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index);

}  // namespace dsr
