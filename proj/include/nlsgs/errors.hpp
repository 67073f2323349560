#pragma once

#include <stdexcept>
#include <string>

namespace nlsgs {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidExponent : Error { using Error::Error; };
struct OneBoundStateRequired : Error { using Error::Error; };
struct NearSingularResolvent : Error { using Error::Error; };
struct InvalidProfile : Error { using Error::Error; };
struct BranchDiverged : Error { using Error::Error; };
struct InsufficientSamples : Error { using Error::Error; };
struct DecompositionFailed : Error { using Error::Error; };
struct Psi0InHa : Error { using Error::Error; };
struct JacobiDegenerate : Error { using Error::Error; };
struct WindowNotFound : Error { using Error::Error; };
struct ConfigInvalid : Error { using Error::Error; };

}  // namespace nlsgs
