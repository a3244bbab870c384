#pragma once

// Shared vocabulary: phases, per-unit bases, error types.

#include <array>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gridvolt {

using Complex = std::complex<double>;
using BusId = std::int64_t;

enum class Phase : std::uint8_t { A = 0, B = 1, C = 2 };

inline constexpr std::array<Phase, 3> kAllPhases{Phase::A, Phase::B, Phase::C};

constexpr int index(Phase p) noexcept { return static_cast<int>(p); }

constexpr char phase_letter(Phase p) noexcept { return "ABC"[index(p)]; }

/// Nominal angle of a phase in the Cartesian frame, radians (A 0, B -120 deg, C +120 deg).
inline double phase_angle(Phase p) noexcept {
  constexpr double k120 = 2.0 * std::numbers::pi / 3.0;
  switch (p) {
    case Phase::A: return 0.0;
    case Phase::B: return -k120;
    case Phase::C: return k120;
  }
  return 0.0;
}

inline Complex phase_rotor(Phase p) { return std::polar(1.0, phase_angle(p)); }

/// Subset of {A,B,C} as a 3-bit mask.
class PhaseSet {
 public:
  constexpr PhaseSet() = default;
  constexpr explicit PhaseSet(std::uint8_t bits) : bits_(bits & 0x7u) {}
  static constexpr PhaseSet all() { return PhaseSet(0x7u); }
  static constexpr PhaseSet single(Phase p) { return PhaseSet(static_cast<std::uint8_t>(1u << index(p))); }

  constexpr bool contains(Phase p) const noexcept { return (bits_ >> index(p)) & 1u; }
  constexpr bool contains(PhaseSet other) const noexcept { return (bits_ & other.bits_) == other.bits_; }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr int size() const noexcept { return ((bits_ >> 0) & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1); }
  constexpr std::uint8_t bits() const noexcept { return bits_; }
  constexpr bool operator==(const PhaseSet&) const = default;

  std::string to_string() const {
    std::string s;
    for (Phase p : kAllPhases)
      if (contains(p)) s.push_back(phase_letter(p));
    return s;
  }

 private:
  std::uint8_t bits_{0};
};

/// Per-unit system. Voltages are line-to-neutral; power base is per phase.
struct PerUnitBase {
  double voltage_v{230.0};
  double power_kva{100.0};

  double impedance_ohm() const { return voltage_v * voltage_v / (power_kva * 1e3); }
  double current_a() const { return power_kva * 1e3 / voltage_v; }
};

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: files, configuration, arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during a simulation (non-convergence, singular system).
class SimulationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridvolt
