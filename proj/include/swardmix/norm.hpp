#pragma once

namespace swardmix {

/// Min-max statistics of the training split, used to map herbage mass
/// (kg DM/ha) and height (cm) into [0, 1] and back.
struct NormStats {
  double mass_min = 0.0;
  double mass_max = 1.0;
  double height_min = 0.0;
  double height_max = 1.0;

  double normalize_mass(double kg) const { return (kg - mass_min) / (mass_max - mass_min); }
  double normalize_height(double cm) const { return (cm - height_min) / (height_max - height_min); }
  double denormalize_mass(double x) const { return x * (mass_max - mass_min) + mass_min; }
  double denormalize_height(double x) const { return x * (height_max - height_min) + height_min; }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

}  // namespace swardmix
