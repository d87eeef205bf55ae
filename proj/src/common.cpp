#include "fls/common.hpp"

#include <charconv>

namespace fls {

Arm parseArm(const std::string& s) {
  if (s == "left") return Arm::Left;
  if (s == "right") return Arm::Right;
  throw DomainError("unknown arm '" + s + "'");
}

bool allFinite(const Vec3& v) { return v.allFinite(); }

std::string formatDouble(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

}  // namespace fls
