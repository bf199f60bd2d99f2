// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace splatprior {

/// Base of every error raised by the library. Each subclass maps to one
/// failure category so callers (and the CLI exit-code map) can dispatch on type.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define SPLATPRIOR_DEFINE_ERROR(Name)                                                              \
    class Name : public Error {                                                                    \
      public:                                                                                      \
        explicit Name(const std::string &what) : Error(std::string(#Name ": ") + what) {}         \
    }

SPLATPRIOR_DEFINE_ERROR(MissingAsset);
SPLATPRIOR_DEFINE_ERROR(ParseError);
SPLATPRIOR_DEFINE_ERROR(ValidationError);
SPLATPRIOR_DEFINE_ERROR(IoError);
SPLATPRIOR_DEFINE_ERROR(EmptyInput);
SPLATPRIOR_DEFINE_ERROR(ShapeError);
SPLATPRIOR_DEFINE_ERROR(StaleCache);
SPLATPRIOR_DEFINE_ERROR(BudgetExceeded);
SPLATPRIOR_DEFINE_ERROR(UsedTape);
SPLATPRIOR_DEFINE_ERROR(KeyError);
SPLATPRIOR_DEFINE_ERROR(MissingGroundTruth);
SPLATPRIOR_DEFINE_ERROR(CheckpointMismatch);
SPLATPRIOR_DEFINE_ERROR(NumericalError);

#undef SPLATPRIOR_DEFINE_ERROR

/// Rethrows the library error being handled with `context` prepended to its
/// message, keeping its dynamic type. Call only inside a catch block.
[[noreturn]] inline void rethrow_with_context(const std::string &context) {
    auto detail = [](const std::exception &e, const char *name) {
        const std::string w = e.what(), prefix = std::string(name) + ": ";
        return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
    };
    try {
        throw;
    }
#define SPLATPRIOR_RETHROW(Name)                                                                   \
    catch (const Name &e) {                                                                        \
        throw Name(context + ": " + detail(e, #Name));                                             \
    }
    SPLATPRIOR_RETHROW(MissingAsset)
    SPLATPRIOR_RETHROW(ParseError)
    SPLATPRIOR_RETHROW(ValidationError)
    SPLATPRIOR_RETHROW(IoError)
    SPLATPRIOR_RETHROW(EmptyInput)
    SPLATPRIOR_RETHROW(ShapeError)
    SPLATPRIOR_RETHROW(StaleCache)
    SPLATPRIOR_RETHROW(BudgetExceeded)
    SPLATPRIOR_RETHROW(UsedTape)
    SPLATPRIOR_RETHROW(KeyError)
    SPLATPRIOR_RETHROW(MissingGroundTruth)
    SPLATPRIOR_RETHROW(CheckpointMismatch)
    SPLATPRIOR_RETHROW(NumericalError)
#undef SPLATPRIOR_RETHROW
    catch (const Error &e) {
        throw Error(context + ": " + e.what());
    }
}

} // namespace splatprior
