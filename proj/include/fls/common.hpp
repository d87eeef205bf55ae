#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace fls {

using Vec3 = Eigen::Vector3d;

/// Raised when an input violates a documented precondition.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

enum class Arm { Left = 0, Right = 1 };

inline constexpr std::size_t armIndex(Arm a) { return static_cast<std::size_t>(a); }
inline constexpr Arm otherArm(Arm a) { return a == Arm::Left ? Arm::Right : Arm::Left; }
inline const char* armName(Arm a) { return a == Arm::Left ? "left" : "right"; }
Arm parseArm(const std::string& s);

bool allFinite(const Vec3& v);

/// Shortest decimal text that parses back to the same double.
std::string formatDouble(double v);

}  // namespace fls
