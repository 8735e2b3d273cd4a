#include <cmath>
#include <string>

#include "zoforge/errors.hpp"
#include "zoforge/optimizer.hpp"

namespace zoforge {

std::string_view to_string(LrScheduleKind kind) noexcept {
  return kind == LrScheduleKind::constant ? "constant" : "linear_decay";
}

LrScheduleKind parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrScheduleKind::constant;
  if (text == "linear_decay") return LrScheduleKind::linear_decay;
  throw InvalidArgument("unknown learning-rate schedule '" + std::string(text) + "' (expected constant or linear_decay)");
}

std::string_view to_string(NScheduleKind kind) noexcept {
  return kind == NScheduleKind::constant ? "constant" : "linear_increase";
}

NScheduleKind parse_n_schedule(std::string_view text) {
  if (text == "constant") return NScheduleKind::constant;
  if (text == "linear_increase") return NScheduleKind::linear_increase;
  throw InvalidArgument("unknown n schedule '" + std::string(text) + "' (expected constant or linear_increase)");
}

namespace {

void check_range(std::uint64_t t, std::uint64_t total) {
  if (total == 0 || t >= total) {
    throw InvalidArgument("step " + std::to_string(t) + " outside schedule horizon [0, " + std::to_string(total) + ")");
  }
}

}  // namespace

double lr_at(const LrSchedule& schedule, std::uint64_t t) {
  check_range(t, schedule.total_steps);
  if (schedule.kind == LrScheduleKind::constant) return schedule.eta0;
  return schedule.eta0 * (1.0 - static_cast<double>(t) / static_cast<double>(schedule.total_steps));
}

std::size_t n_at(const NSchedule& schedule, std::uint64_t t) {
  check_range(t, schedule.total_steps);
  if (schedule.kind == NScheduleKind::constant || schedule.total_steps == 1) return schedule.n0;
  const double n0 = static_cast<double>(schedule.n0);
  const double n1 = static_cast<double>(schedule.n1);
  const double frac = static_cast<double>(t) / static_cast<double>(schedule.total_steps - 1);
  const double value = std::round(n0 + (n1 - n0) * frac);
  return value < 1.0 ? 1 : static_cast<std::size_t>(value);
}

}  // namespace zoforge
