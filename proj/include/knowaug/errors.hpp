#pragma once

#include <stdexcept>
#include <string>

namespace knowaug {

// Error taxonomy mirrored by the CLI exit codes: config 2, data 3, numeric 4.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes not conformable for an op.
class shape_error : public numeric_error {
public:
    explicit shape_error(const std::string& msg) : numeric_error(msg) {}
};

// Caller violated a documented precondition; a bug, not an input problem.
class contract_error : public std::logic_error {
public:
    explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace knowaug
