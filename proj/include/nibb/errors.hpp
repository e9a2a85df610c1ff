#pragma once

#include <stdexcept>
#include <string>

namespace nibb {

// Exit-code class of a failure: bad input vs. a numerical breakdown.
enum class ErrorKind { validation, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string category, const std::string& what)
        : std::runtime_error(what), kind_(kind), category_(std::move(category)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& category() const noexcept { return category_; }

private:
    ErrorKind kind_;
    std::string category_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorKind::validation, "validation", w) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorKind::validation, "domain", w) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& w) : Error(ErrorKind::validation, "usage", w) {}
};

struct ConditioningError : Error {
    explicit ConditioningError(const std::string& w) : Error(ErrorKind::numerical, "conditioning", w) {}
};

struct IntegrationError : Error {
    explicit IntegrationError(const std::string& w) : Error(ErrorKind::numerical, "integration", w) {}
};

struct SolverError : Error {
    SolverError(const std::string& w, double mismatch)
        : Error(ErrorKind::numerical, "solver", w), final_mismatch(mismatch) {}
    double final_mismatch;
};

struct TopologyError : Error {
    explicit TopologyError(const std::string& w) : Error(ErrorKind::numerical, "unsupported_topology", w) {}
};

struct FitError : Error {
    explicit FitError(const std::string& w) : Error(ErrorKind::numerical, "fit", w) {}
};

struct OracleError : Error {
    explicit OracleError(const std::string& w) : Error(ErrorKind::numerical, "oracle", w) {}
};

}  // namespace nibb
