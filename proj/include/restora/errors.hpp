// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RESTORA_ERRORS_HPP_
#define RESTORA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace restora {

// Shape/axis violations (bad extents, invalid axis, indivisible dims).
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid knob values (groups not dividing channels, quality out of range, ...).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API contract violations (non-scalar loss, mismatched metric inputs, ...).
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed files (PPM headers, checkpoint corruption).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-bounds requests (crop windows outside the image).
class RangeError : public std::out_of_range {
public:
    explicit RangeError(const std::string& msg) : std::out_of_range(msg) {}
};

} // namespace restora

#endif // RESTORA_ERRORS_HPP_
