#pragma once

// Binary run format. All fields little-endian:
//
//   off  size  field
//     0     4  magic "MZOT"
//     4     1  version (1)
//     5     1  gradient precision (0 bf16, 1 f32, 2 f64)
//     6     1  optimizer (0 sgd, 1 momentum, 2 adam)
//     7     1  z distribution (0 gaussian, 1 sphere)
//     8     8  master seed
//    16     4  T, number of steps
//    20     2  n (initial probes per step)
//    22     2  reserved, 0
//    24     8  epsilon
//    32     8  eta0
//    40     1  learning-rate schedule (0 constant, 1 linear_decay)
//    41     1  n schedule (0 constant, 1 linear_increase)
//    42     2  final n of a linear increase
//    44     1  flags: bit 0 couple lr to n, bit 1 reconstruct history,
//              bits 2-3 scale source, bit 4 f32 parameter storage
//    45     2  history window K (0 for dense or sgd)
//    47     1  estimator kind
//    48     8  weight decay
//    56     8  beta1 (momentum coefficient for momentum)
//    64     8  beta2
//    72     8  eps_adam
//    80     8  layout hash of the groups and stage plan
//    88     4  CRC32 of bytes 0..87
//    92        payload: one scalar per probe, step-major, probe-minor
//
// The payload is not covered by the checksum so files can be streamed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zoforge/errors.hpp"
#include "zoforge/estimators.hpp"
#include "zoforge/optimizer.hpp"

namespace zoforge {

inline constexpr std::size_t kTrajectoryHeaderSize = 92;
inline constexpr std::uint8_t kTrajectoryVersion = 1;

struct TrajectoryHeader {
  GradPrecision precision = GradPrecision::f64;
  Algo algo = Algo::sgd;
  ZDist z_dist = ZDist::gaussian;
  Seed master{0};
  std::uint32_t steps = 0;
  std::uint16_t n = 1;
  double epsilon = 1e-3;
  double eta0 = 1e-3;
  LrScheduleKind lr_schedule = LrScheduleKind::constant;
  NScheduleKind n_schedule = NScheduleKind::constant;
  std::uint16_t n_final = 1;
  bool couple_lr_to_n = false;
  HistoryMode history = HistoryMode::dense;
  ScaleSource scale_source = ScaleSource::ones;
  StoragePrecision storage = StoragePrecision::f64;
  std::uint16_t history_window = 0;
  EstimatorKind estimator = EstimatorKind::spsa;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t layout_hash = 0;

  friend bool operator==(const TrajectoryHeader&, const TrajectoryHeader&) = default;

  /// Optimizer settings implied by the header, horizons set to T.
  OptimizerConfig optimizer() const;
  /// Probes recorded at step t.
  std::size_t probes_at(std::uint64_t t) const;
  /// Total payload scalars.
  std::size_t payload_scalars() const;
};

struct Trajectory {
  TrajectoryHeader header;
  std::vector<GradRecord> records;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Decode failures, one type per cause.
class TrajectoryError : public Error {
 public:
  using Error::Error;
};
class BadMagic : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class VersionMismatch : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class CrcMismatch : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class TruncatedTrajectory : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class TrailingBytes : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};

/// Raised by replay when the parameter layout differs from the recorded one.
class LayoutMismatch : public Error {
 public:
  LayoutMismatch(std::uint64_t expected, std::uint64_t actual);
  std::uint64_t expected() const noexcept { return expected_; }
  std::uint64_t actual() const noexcept { return actual_; }

 private:
  std::uint64_t expected_;
  std::uint64_t actual_;
};

/// Serializes the header and every projected gradient at the header's
/// precision. Throws InvalidArgument when the records disagree with the
/// header (count, probes per step, step indices, seeds or values that do
/// not survive the precision).
std::vector<std::uint8_t> encode(const Trajectory& trajectory);

/// Inverse of encode. Seeds are re-derived from the master seed.
Trajectory decode(std::span<const std::uint8_t> bytes);

/// Header bytes 0..87 with the CRC appended, for a given header.
std::vector<std::uint8_t> encode_header(const TrajectoryHeader& header);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

void write_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);
Trajectory read_trajectory(const std::filesystem::path& path);

/// Header fields one per line as `name=value`, then `step,probe,pg` rows.
std::string inspect(const Trajectory& trajectory);

struct ReplayOptions {
  /// Stages of the original run. Empty means one stage over every
  /// trainable group.
  std::vector<Stage> stages;
  /// Per-group scale for runs that used the external scale source.
  std::vector<double> external_scale;
};

/// Re-executes the probe round trips and the update arithmetic of every step
/// from theta0 without any objective evaluation. Throws LayoutMismatch when
/// theta0 and the stage plan hash differently from the recording, and
/// InvalidArgument for runs whose scale vector needs loss evaluations.
ParamStore replay(const Trajectory& trajectory, const ParamStore& theta0, const ReplayOptions& options = {});

}  // namespace zoforge
