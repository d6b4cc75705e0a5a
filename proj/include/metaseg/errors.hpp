// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace metaseg {

// Base of every library error. `kind()` is stable and machine-parsable;
// `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};
struct NumericsError : Error {
    explicit NumericsError(const std::string& m) : Error("NumericsError", m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error("ContractError", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("DataError", m) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("FormatError", m) {}
};
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& m) : Error("DegenerateInputError", m) {}
};
struct EmptyMaskError : Error {
    explicit EmptyMaskError(const std::string& m) : Error("EmptyMaskError", m) {}
};
struct IOError : Error {
    explicit IOError(const std::string& m) : Error("IOError", m) {}
};

} // namespace metaseg
