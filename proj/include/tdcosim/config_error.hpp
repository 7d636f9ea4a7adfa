#pragma once

#include <stdexcept>
#include <string>

namespace tdcosim
{
    /// Schema or validation failure in an input file. The message carries "path:line: ...".
    class ConfigError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };
} // namespace tdcosim
