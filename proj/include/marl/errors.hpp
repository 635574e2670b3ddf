#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace marl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};
struct NonFinite : Error {
    using Error::Error;
};
struct NotScalar : Error {
    using Error::Error;
};
struct DetachedRoot : Error {
    using Error::Error;
};
struct EmptySupport : Error {
    using Error::Error;
};
struct NoAvailableAction : Error {
    using Error::Error;
};
struct UnavailableAction : Error {
    using Error::Error;
};
struct EpisodeFinished : Error {
    using Error::Error;
};
struct InvalidConfig : Error {
    using Error::Error;
};
struct EmptyBatch : Error {
    using Error::Error;
};
struct InsufficientData : Error {
    using Error::Error;
};
struct CheckpointMismatch : Error {
    using Error::Error;
};
struct FileNotFound : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};

// Carries every offending field so the caller can report them all at once.
struct ValidationError : Error {
    explicit ValidationError(std::vector<std::string> problems)
        : Error(join(problems)), fields(std::move(problems)) {}
    std::vector<std::string> fields;

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid config:";
        for (const auto& f : v) s += " [" + f + "]";
        return s;
    }
};

}  // namespace marl
