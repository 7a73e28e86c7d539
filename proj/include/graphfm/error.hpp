#pragma once

#include <stdexcept>
#include <string>

namespace graphfm {

// Shape disagreement between operands (wrong rank or extent).
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse: non-scalar loss, backward twice on one tape, empty neighborhood, ...
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid configuration value (m_k > n, heads not dividing dim, unknown key, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file or field value.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset-level problem: empty input, split smaller than its partitions, ...
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric undefined on the given inputs (e.g. AUC with a single class).
struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training blew up: non-finite loss or gradient.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace graphfm
