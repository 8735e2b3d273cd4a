#include "zoforge/trajectory.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "bytes.hpp"

namespace zoforge {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'Z', 'O', 'T'};
constexpr std::size_t kCrcOffset = 88;

constexpr std::uint8_t kFlagCouple = 1u << 0;
constexpr std::uint8_t kFlagReconstruct = 1u << 1;
constexpr unsigned kScaleShift = 2;
constexpr std::uint8_t kScaleMask = 0x3u << kScaleShift;
constexpr std::uint8_t kFlagF32Storage = 1u << 4;
constexpr std::uint8_t kKnownFlags = kFlagCouple | kFlagReconstruct | kScaleMask | kFlagF32Storage;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename E>
E checked_enum(std::uint8_t raw, std::uint8_t max, const char* field) {
  if (raw > max) throw TrajectoryError(std::string("invalid ") + field + " code " + std::to_string(raw));
  return static_cast<E>(raw);
}

void put_grad(std::vector<std::uint8_t>& out, double v, GradPrecision precision) {
  switch (precision) {
    case GradPrecision::bf16:
      detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)) >> 16));
      break;
    case GradPrecision::f32:
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      break;
    case GradPrecision::f64:
      detail::put_f64(out, v);
      break;
  }
}

double get_grad(std::span<const std::uint8_t> in, std::size_t offset, GradPrecision precision) {
  switch (precision) {
    case GradPrecision::bf16: {
      const std::uint32_t bits = static_cast<std::uint32_t>(detail::get_le<std::uint16_t>(in, offset)) << 16;
      return static_cast<double>(std::bit_cast<float>(bits));
    }
    case GradPrecision::f32:
      return static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(in, offset)));
    case GradPrecision::f64:
      return detail::get_f64(in, offset);
  }
  return 0.0;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

LayoutMismatch::LayoutMismatch(std::uint64_t expected, std::uint64_t actual)
    : Error("parameter layout hash mismatch: trajectory has " + hex64(expected) + ", parameters have " + hex64(actual)),
      expected_(expected),
      actual_(actual) {}

OptimizerConfig TrajectoryHeader::optimizer() const {
  OptimizerConfig c;
  c.algo = algo;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.eps_adam = eps_adam;
  c.lr = {lr_schedule, eta0, steps};
  c.weight_decay = weight_decay;
  c.n_schedule = {n_schedule, n, n_final, steps};
  c.couple_lr_to_n = couple_lr_to_n;
  c.history = history;
  c.history_window = history_window;
  return c;
}

std::size_t TrajectoryHeader::probes_at(std::uint64_t t) const {
  return n_at(NSchedule{n_schedule, n, n_final, steps}, t);
}

std::size_t TrajectoryHeader::payload_scalars() const {
  if (n_schedule == NScheduleKind::constant) return static_cast<std::size_t>(steps) * n;
  std::size_t total = 0;
  for (std::uint64_t t = 0; t < steps; ++t) total += probes_at(t);
  return total;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_header(const TrajectoryHeader& h) {
  std::vector<std::uint8_t> out;
  out.reserve(kTrajectoryHeaderSize);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kTrajectoryVersion);
  out.push_back(static_cast<std::uint8_t>(h.precision));
  out.push_back(static_cast<std::uint8_t>(h.algo));
  out.push_back(static_cast<std::uint8_t>(h.z_dist));
  detail::put_le<std::uint64_t>(out, h.master.value);
  detail::put_le<std::uint32_t>(out, h.steps);
  detail::put_le<std::uint16_t>(out, h.n);
  detail::put_le<std::uint16_t>(out, 0);
  detail::put_f64(out, h.epsilon);
  detail::put_f64(out, h.eta0);
  out.push_back(static_cast<std::uint8_t>(h.lr_schedule));
  out.push_back(static_cast<std::uint8_t>(h.n_schedule));
  detail::put_le<std::uint16_t>(out, h.n_final);
  std::uint8_t flags = 0;
  if (h.couple_lr_to_n) flags |= kFlagCouple;
  if (h.history == HistoryMode::reconstruct) flags |= kFlagReconstruct;
  flags |= static_cast<std::uint8_t>(static_cast<std::uint8_t>(h.scale_source) << kScaleShift);
  if (h.storage == StoragePrecision::f32) flags |= kFlagF32Storage;
  out.push_back(flags);
  detail::put_le<std::uint16_t>(out, h.history_window);
  out.push_back(static_cast<std::uint8_t>(h.estimator));
  detail::put_f64(out, h.weight_decay);
  detail::put_f64(out, h.beta1);
  detail::put_f64(out, h.beta2);
  detail::put_f64(out, h.eps_adam);
  detail::put_le<std::uint64_t>(out, h.layout_hash);
  detail::put_le<std::uint32_t>(out, crc32(out));
  return out;
}

std::vector<std::uint8_t> encode(const Trajectory& trajectory) {
  const auto& h = trajectory.header;
  if (trajectory.records.size() != h.steps) {
    throw InvalidArgument("trajectory holds " + std::to_string(trajectory.records.size()) + " records for " +
                          std::to_string(h.steps) + " steps");
  }
  std::vector<std::uint8_t> out = encode_header(h);
  out.reserve(kTrajectoryHeaderSize + h.payload_scalars() * grad_width(h.precision));
  for (std::uint64_t t = 0; t < h.steps; ++t) {
    const auto& rec = trajectory.records[t];
    if (rec.step != t) throw InvalidArgument("record " + std::to_string(t) + " carries step " + std::to_string(rec.step));
    const std::size_t probes = h.probes_at(t);
    if (rec.projected_grads.size() != probes || rec.seeds.size() != probes) {
      throw InvalidArgument("record " + std::to_string(t) + " has the wrong probe count");
    }
    if (!same_bits(rec.epsilon, h.epsilon)) throw InvalidArgument("record " + std::to_string(t) + " epsilon differs from header");
    for (std::size_t j = 0; j < probes; ++j) {
      if (rec.seeds[j] != probe_seed(h.master, t, j)) {
        throw InvalidArgument("record " + std::to_string(t) + " seed is not derived from the master seed");
      }
      const double pg = rec.projected_grads[j];
      if (!same_bits(quantize_grad(pg, h.precision), pg)) {
        throw InvalidArgument("record " + std::to_string(t) + " gradient is not representable at the stored precision");
      }
      put_grad(out, pg, h.precision);
    }
  }
  return out;
}

Trajectory decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    if (bytes.size() < 4) throw TruncatedTrajectory("trajectory is " + std::to_string(bytes.size()) + " bytes, header needs 92");
    throw BadMagic("not a trajectory file (bad magic)");
  }
  if (bytes.size() < kTrajectoryHeaderSize) {
    throw TruncatedTrajectory("trajectory is " + std::to_string(bytes.size()) + " bytes, header needs 92");
  }
  if (bytes[4] != kTrajectoryVersion) {
    throw VersionMismatch("trajectory version " + std::to_string(bytes[4]) + " is not supported (expected 1)");
  }
  const std::uint32_t stored_crc = detail::get_le<std::uint32_t>(bytes, kCrcOffset);
  const std::uint32_t actual_crc = crc32(bytes.first(kCrcOffset));
  if (stored_crc != actual_crc) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "header CRC mismatch: stored 0x%08x, computed 0x%08x", stored_crc, actual_crc);
    throw CrcMismatch(buf);
  }

  Trajectory traj;
  auto& h = traj.header;
  h.precision = checked_enum<GradPrecision>(bytes[5], 2, "gradient precision");
  h.algo = checked_enum<Algo>(bytes[6], 2, "optimizer");
  h.z_dist = checked_enum<ZDist>(bytes[7], 1, "z distribution");
  h.master = Seed{detail::get_le<std::uint64_t>(bytes, 8)};
  h.steps = detail::get_le<std::uint32_t>(bytes, 16);
  h.n = detail::get_le<std::uint16_t>(bytes, 20);
  if (detail::get_le<std::uint16_t>(bytes, 22) != 0) throw TrajectoryError("reserved header bytes are not zero");
  h.epsilon = detail::get_f64(bytes, 24);
  h.eta0 = detail::get_f64(bytes, 32);
  h.lr_schedule = checked_enum<LrScheduleKind>(bytes[40], 1, "learning-rate schedule");
  h.n_schedule = checked_enum<NScheduleKind>(bytes[41], 1, "n schedule");
  h.n_final = detail::get_le<std::uint16_t>(bytes, 42);
  const std::uint8_t flags = bytes[44];
  if ((flags & ~kKnownFlags) != 0) throw TrajectoryError("unknown header flags");
  h.couple_lr_to_n = (flags & kFlagCouple) != 0;
  h.history = (flags & kFlagReconstruct) != 0 ? HistoryMode::reconstruct : HistoryMode::dense;
  h.scale_source = static_cast<ScaleSource>((flags & kScaleMask) >> kScaleShift);
  h.storage = (flags & kFlagF32Storage) != 0 ? StoragePrecision::f32 : StoragePrecision::f64;
  h.history_window = detail::get_le<std::uint16_t>(bytes, 45);
  h.estimator = checked_enum<EstimatorKind>(bytes[47], 3, "estimator");
  h.weight_decay = detail::get_f64(bytes, 48);
  h.beta1 = detail::get_f64(bytes, 56);
  h.beta2 = detail::get_f64(bytes, 64);
  h.eps_adam = detail::get_f64(bytes, 72);
  h.layout_hash = detail::get_le<std::uint64_t>(bytes, 80);
  if (h.steps > 0 && (h.n == 0 || h.n_final == 0)) throw TrajectoryError("header declares zero probes per step");

  const std::size_t width = grad_width(h.precision);
  const std::size_t expected = kTrajectoryHeaderSize + h.payload_scalars() * width;
  if (bytes.size() < expected) {
    throw TruncatedTrajectory("payload truncated: " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw TrailingBytes("trajectory has " + std::to_string(bytes.size() - expected) + " bytes past the payload");
  }

  traj.records.reserve(h.steps);
  std::size_t offset = kTrajectoryHeaderSize;
  for (std::uint64_t t = 0; t < h.steps; ++t) {
    GradRecord rec;
    rec.step = t;
    rec.epsilon = h.epsilon;
    const std::size_t probes = h.probes_at(t);
    rec.seeds.reserve(probes);
    rec.projected_grads.reserve(probes);
    for (std::size_t j = 0; j < probes; ++j) {
      rec.seeds.push_back(probe_seed(h.master, t, j));
      rec.projected_grads.push_back(get_grad(bytes, offset, h.precision));
      offset += width;
    }
    traj.records.push_back(std::move(rec));
  }
  return traj;
}

void write_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
  const auto bytes = encode(trajectory);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trajectory '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

std::string inspect(const Trajectory& trajectory) {
  const auto& h = trajectory.header;
  std::ostringstream out;
  out << "magic=MZOT\n";
  out << "version=" << static_cast<int>(kTrajectoryVersion) << '\n';
  out << "grad_precision=" << to_string(h.precision) << '\n';
  out << "optimizer=" << to_string(h.algo) << '\n';
  out << "z_dist=" << to_string(h.z_dist) << '\n';
  out << "master_seed=" << h.master.value << '\n';
  out << "steps=" << h.steps << '\n';
  out << "n=" << h.n << '\n';
  out << "epsilon=" << g17(h.epsilon) << '\n';
  out << "eta0=" << g17(h.eta0) << '\n';
  out << "lr_schedule=" << to_string(h.lr_schedule) << '\n';
  out << "n_schedule=" << to_string(h.n_schedule) << '\n';
  out << "n_final=" << h.n_final << '\n';
  out << "couple_lr_to_n=" << (h.couple_lr_to_n ? "true" : "false") << '\n';
  out << "history=" << to_string(h.history) << '\n';
  out << "scale_source=" << to_string(h.scale_source) << '\n';
  out << "storage=" << (h.storage == StoragePrecision::f32 ? "f32" : "f64") << '\n';
  out << "history_window=" << h.history_window << '\n';
  out << "estimator=" << to_string(h.estimator) << '\n';
  out << "weight_decay=" << g17(h.weight_decay) << '\n';
  out << "beta1=" << g17(h.beta1) << '\n';
  out << "beta2=" << g17(h.beta2) << '\n';
  out << "eps_adam=" << g17(h.eps_adam) << '\n';
  out << "layout_hash=" << hex64(h.layout_hash) << '\n';
  out << "header_crc=";
  {
    const auto header = encode_header(h);
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", detail::get_le<std::uint32_t>(header, kCrcOffset));
    out << buf << '\n';
  }
  out << "step,probe,pg\n";
  for (const auto& rec : trajectory.records) {
    for (std::size_t j = 0; j < rec.projected_grads.size(); ++j) {
      out << rec.step << ',' << j << ',' << g17(rec.projected_grads[j]) << '\n';
    }
  }
  return out.str();
}

}  // namespace zoforge
