// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdm/bundle.hpp"
#include "lrdm/matrix.hpp"

namespace lrdm {

enum class Split { Train, Heldout };

struct MixtureSpec {
  std::size_t n = 4096;
  int modes = 8;
  double radius = 2.0;
  double std = 0.1;
  std::uint64_t seed = 0;
  bool labeled = false;
};

struct Dataset {
  Matrix points;               // N x D
  std::vector<int> labels;     // empty, or one per row
  Split split = Split::Train;
  std::string provenance;      // generator spec + seed, or source path

  std::size_t size() const { return points.rows; }
  std::size_t dim() const { return points.cols; }
  bool labeled() const { return !labels.empty(); }
  /// max label + 1 (0 when unlabeled).
  int num_classes() const;
  /// Throws on non-finite entries, label count mismatch or negative labels.
  void validate() const;
};

/// Centers of the equal-weight mixture: radius * (cos 2 pi k / M, sin 2 pi k / M).
Matrix mixture_centers(int modes, double radius);

/// Gaussians of isotropic `std` around the mixture centers, mode drawn
/// uniformly per point. A pure function of the spec.
Dataset make_mixture(const MixtureSpec& spec, Split split = Split::Train);

/// Raised for malformed CSV input; the message names the 1-based row.
class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t row, const std::string& what);
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

Dataset load_csv_dataset(const std::filesystem::path& path, bool has_labels);
/// Full-precision (round-trip) CSV, label as the last column when present.
void save_csv_dataset(const std::filesystem::path& path, const Dataset& d);
void write_matrix_csv(std::ostream& os, const Matrix& m, const std::string& header = {});

// ------------------------------------------------------------- checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {  // bad magic / header
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr int kCheckpointVersion = 1;

/// Layout: "LRDM1\n", one line of JSON header, an empty line, then the
/// blobs. Each blob is a little-endian uint64 element count followed by that
/// many little-endian IEEE doubles. Blob order: live parameters in
/// `all_params()` order, EMA shadows in `ema_tracked()` order, then Adam
/// first and second moments in `trainable()` order.
/// `extra` (a JSON object, usually the run config) is stored verbatim.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle,
                     const std::string& extra_json = "{}");
ModelBundle load_checkpoint(const std::filesystem::path& path);
/// The header's "extra" object, serialized.
std::string checkpoint_extra(const std::filesystem::path& path);

}  // namespace lrdm
