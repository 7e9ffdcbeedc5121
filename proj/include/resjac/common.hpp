#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace resjac {

using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input, bad configuration, broken file. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Solver failure or a result that violates a numerical contract. CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Seeded generator with portable uniform/normal/shuffle draws.
///
/// std::mt19937_64 output is fixed by the standard; the distributions built on
/// top of it are not, so they are implemented here to keep results identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// splitmix64-based mixing of a base seed with task coordinates.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

Matrix gaussian_matrix(int rows, int cols, Rng& rng);

/// Worker count: RESJAC_THREADS if set, else hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Exceptions are rethrown from the lowest index
/// that failed, so error reporting does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

void log_warning(std::string_view message);
void set_warnings_enabled(bool enabled);

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_double(double value);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Median and interquartile range with linear interpolation between order statistics.
struct QuantileSummary {
  double median = 0.0;
  double iqr = 0.0;
};
QuantileSummary quantile_summary(std::vector<double> values);

}  // namespace resjac
