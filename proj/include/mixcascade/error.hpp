#ifndef MIXCASCADE_ERROR_HPP
#define MIXCASCADE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mixcascade {

enum class Errc {
  BadInput,
  ZeroNormalization,
  WrongDirection,
  NegativeCoefficient,
  WindowTooSmall,
  AssumptionFail,
  LiftNotFound,
  DownhillNotDown,
  ParallelVectors,
  DegenerateSpacing,
  NoContraction,
  Stage1Fail,
  WaitTimeout,
  NoPush,
  LeakExceeded,
  BlowUp,
  ZeroMass,
  InsufficientData,
  ResidualTooLarge,
};

inline const char* errc_name(Errc e) {
  switch (e) {
    case Errc::BadInput: return "BadInput";
    case Errc::ZeroNormalization: return "ZeroNormalization";
    case Errc::WrongDirection: return "WrongDirection";
    case Errc::NegativeCoefficient: return "NegativeCoefficient";
    case Errc::WindowTooSmall: return "WindowTooSmall";
    case Errc::AssumptionFail: return "AssumptionFail";
    case Errc::LiftNotFound: return "LiftNotFound";
    case Errc::DownhillNotDown: return "DownhillNotDown";
    case Errc::ParallelVectors: return "ParallelVectors";
    case Errc::DegenerateSpacing: return "DegenerateSpacing";
    case Errc::NoContraction: return "NoContraction";
    case Errc::Stage1Fail: return "Stage1Fail";
    case Errc::WaitTimeout: return "WaitTimeout";
    case Errc::NoPush: return "NoPush";
    case Errc::LeakExceeded: return "LeakExceeded";
    case Errc::BlowUp: return "BlowUp";
    case Errc::ZeroMass: return "ZeroMass";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::ResidualTooLarge: return "ResidualTooLarge";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code and, for cascade runs, the
/// index of the step that raised it (-1 when not applicable).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, int step = -1)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        step_(step) {}

  Errc code() const noexcept { return code_; }
  int step() const noexcept { return step_; }

  Error with_step(int step) const {
    Error e(*this);
    e.step_ = step;
    return e;
  }

 private:
  Errc code_;
  int step_;
};

}  // namespace mixcascade

#endif
