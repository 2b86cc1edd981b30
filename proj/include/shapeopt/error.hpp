#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace shapeopt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Element with a non-positive Jacobian determinant.
class InvalidElementError : public Error {
public:
    InvalidElementError(int element, const std::string& what)
        : Error("element " + std::to_string(element) + ": " + what), element_(element) {}
    int element() const { return element_; }

private:
    int element_;
};

/// Iterative solver failed to meet its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals = {})
        : Error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const { return residuals_; }

private:
    std::vector<double> residuals_;
};

/// Mesh quality could not be restored after a design update.
class MeshQualityError : public Error {
public:
    MeshQualityError(const std::string& what, std::vector<int> worst_elements)
        : Error(what), worst_(std::move(worst_elements)) {}
    const std::vector<int>& worst_elements() const { return worst_; }

private:
    std::vector<int> worst_;
};

}  // namespace shapeopt
