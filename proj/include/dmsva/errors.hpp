#pragma once

#include <stdexcept>
#include <string>

namespace dmsva {

/// Base for every error raised by the library. The concrete types below carry
/// no extra state; the message says what went wrong and where.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DMSVA_DECLARE_ERROR(Name)                                          \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

DMSVA_DECLARE_ERROR(ZeroNormVector);
DMSVA_DECLARE_ERROR(DimensionMismatch);
DMSVA_DECLARE_ERROR(EmptyTape);
DMSVA_DECLARE_ERROR(PrototypeCollapse);
DMSVA_DECLARE_ERROR(InvalidProportions);
DMSVA_DECLARE_ERROR(NonFiniteLoss);
DMSVA_DECLARE_ERROR(VersionMismatch);
DMSVA_DECLARE_ERROR(CorruptFile);
DMSVA_DECLARE_ERROR(TooFewPairs);
DMSVA_DECLARE_ERROR(ConfigError);
DMSVA_DECLARE_ERROR(FormatError);

#undef DMSVA_DECLARE_ERROR

} // namespace dmsva
