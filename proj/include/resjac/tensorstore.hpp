#pragma once

// On-disk dump format shared by the extractor and every analysis stage.
//
// Layout (all integers little-endian):
//   bytes 0..3    magic "RSJD"
//   bytes 4..7    u32 format version (1)
//   bytes 8..15   u64 length of the JSON manifest in bytes
//   next          UTF-8 JSON manifest
//   next          data section: raw little-endian row-major tensors
//
// Tensor byte_offset values are relative to the start of the data section.
// The file must end exactly at the end of the last tensor.

#include "resjac/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace resjac {

inline constexpr char kDumpMagic[4] = {'R', 'S', 'J', 'D'};
inline constexpr std::uint32_t kDumpVersion = 1;

enum class DType { f32, f64 };
enum class TensorKind { jacobian_mean, jacobian_sample, activations };

std::size_t dtype_size(DType dtype);
std::string to_string(DType dtype);
std::string to_string(TensorKind kind);

struct TensorEntry {
  std::string name;
  TensorKind kind = TensorKind::jacobian_mean;
  std::optional<int> layer;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

struct Manifest {
  std::string model_id;
  std::string checkpoint_id;
  int d = 0;          // residual width
  int L = 0;          // layer count
  int S = 0;          // sub-layer snapshot count
  int n_samples = 0;  // samples behind the mean Jacobian, or activation rows
  DType dtype = DType::f64;
  bool quantized = false;  // values were rounded from f64 to f32 on write
  std::vector<std::string> snapshot_labels;
  std::vector<TensorEntry> tensor_index;
};

struct JacobianSet {
  Manifest manifest;
  std::vector<Matrix> mean_jacobians;                 // L matrices, d×d
  std::vector<std::vector<Matrix>> sample_jacobians;  // [sample][layer], may be empty

  int d() const { return manifest.d; }
  int L() const { return manifest.L; }
  bool has_samples() const { return !sample_jacobians.empty(); }

  /// Builds a set with a consistent manifest from mean Jacobians alone.
  static JacobianSet from_means(std::vector<Matrix> means, std::string model_id = "synthetic",
                                std::string checkpoint_id = "none", int n_samples = 1);
};

/// Last-token activations, row-major (sample, snapshot, unit).
struct ActivationTensor {
  Manifest manifest;
  std::vector<double> values;

  int n_samples() const { return manifest.n_samples; }
  int S() const { return manifest.S; }
  int d() const { return manifest.d; }
  double at(int sample, int snapshot, int unit) const {
    return values[(static_cast<std::size_t>(sample) * S() + snapshot) * d() + unit];
  }
  /// n_samples × d matrix for one snapshot.
  Matrix snapshot(int index) const;

  static ActivationTensor from_snapshots(const std::vector<Matrix>& snapshots,
                                         std::vector<std::string> labels,
                                         std::string model_id = "synthetic",
                                         std::string checkpoint_id = "none");
};

using Dump = std::variant<JacobianSet, ActivationTensor>;

/// Checks shape and finiteness invariants; throws ValidationError.
void validate(const JacobianSet& set);
void validate(const ActivationTensor& tensor);

/// Encodes to the byte layout above. The manifest's tensor_index and
/// quantized flag are regenerated from the data.
std::string encode_dump(const JacobianSet& set);
std::string encode_dump(const ActivationTensor& tensor);
Dump decode_dump(std::string_view bytes);

void write_dump(const std::filesystem::path& path, const JacobianSet& set);
void write_dump(const std::filesystem::path& path, const ActivationTensor& tensor);
Dump read_dump(const std::filesystem::path& path);

JacobianSet read_jacobians(const std::filesystem::path& path);
ActivationTensor read_activations(const std::filesystem::path& path);

}  // namespace resjac
