#pragma once

#include <stdexcept>
#include <string>

namespace prcg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid dimensions, out-of-range hyperparameters, unresolvable names.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Reset requested to a state that is not feasible.
class ResetError : public Error {
public:
    using Error::Error;
};

/// API called in the wrong order or with arguments violating a precondition.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Non-finite gradient or loss encountered during optimization.
class OptimizerError : public Error {
public:
    using Error::Error;
};

/// Wraps an error raised while training one model of a set.
class ModelError : public Error {
public:
    ModelError(std::size_t model_index, const std::string& what)
        : Error("model " + std::to_string(model_index) + ": " + what), model_index_(model_index) {}

    std::size_t model_index() const noexcept { return model_index_; }

private:
    std::size_t model_index_;
};

}  // namespace prcg
