#pragma once

#include <numbers>

namespace levsq::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double hbar = 1.054571817e-34;       // J s
inline constexpr double k_boltzmann = 1.380649e-23;   // J/K
inline constexpr double speed_of_light = 299792458.0; // m/s
inline constexpr double epsilon0 = 8.8541878128e-12;  // F/m
inline constexpr double atomic_mass = 1.66053906660e-27; // kg

// Mean molecular mass of dry air.
inline constexpr double air_molecule_mass = 28.97 * atomic_mass;

inline constexpr double two_pi = 2.0 * pi;

} // namespace levsq::constants
