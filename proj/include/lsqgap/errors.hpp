#pragma once

#include <stdexcept>
#include <string>

namespace lsqgap {

struct SingularSystem : std::runtime_error {
    explicit SingularSystem(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateDowndate : std::runtime_error {
    explicit DegenerateDowndate(const std::string& what) : std::runtime_error(what) {}
};

struct NonZeroResponses : std::runtime_error {
    explicit NonZeroResponses(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidSpec : std::runtime_error {
    explicit InvalidSpec(const std::string& what) : std::runtime_error(what) {}
};

// Carries the offending field path, e.g. "grid[2].d".
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_path(field) {}
    std::string field_path;
};

struct InsufficientData : std::runtime_error {
    explicit InsufficientData(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lsqgap
