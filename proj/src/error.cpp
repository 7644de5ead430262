#include "riskpia/error.hpp"

#include <cstdio>

namespace riskpia {

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SyntaxError::SyntaxError(std::size_t position, const std::string& expected, const std::string& found)
    : Error("syntax error at position " + std::to_string(position) + ": expected " + expected +
            ", found " + found),
      position_(position),
      expected_(expected) {}

NonConvergence::NonConvergence(std::size_t iterations, double last_gap)
    : Error("eigensolver did not converge after " + std::to_string(iterations) +
            " iterations (last Collatz-Wielandt gap " + fmt_g(last_gap) + ")"),
      iterations_(iterations),
      last_gap_(last_gap) {}

GuardFailed::GuardFailed(double lambda0, double boundary_proxy)
    : Error("maximization guard failed: lambda(v0) = " + fmt_g(lambda0) +
            " does not exceed boundary cost proxy " + fmt_g(boundary_proxy)),
      lambda0_(lambda0),
      proxy_(boundary_proxy) {}

TooLarge::TooLarge(double count)
    : Error("policy enumeration too large: " + fmt_g(count) + " policies"), count_(count) {}

}  // namespace riskpia
