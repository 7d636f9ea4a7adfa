#pragma once

#include "tdcosim/config_error.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <string>
#include <string_view>

namespace tdcosim::detail
{
    /// A YAML node paired with the file it came from, for line-level diagnostics.
    struct Doc
    {
        std::string file;

        [[noreturn]] void fail(const YAML::Node &node, std::string_view message) const
        {
            const auto mark = node.Mark();
            if (mark.line >= 0)
            {
                throw ConfigError(fmt::format("{}:{}: {}", file, mark.line + 1, message));
            }
            throw ConfigError(fmt::format("{}: {}", file, message));
        }

        template <typename T>
        T as(const YAML::Node &node, std::string_view what) const
        {
            try
            {
                return node.as<T>();
            }
            catch (const YAML::Exception &)
            {
                fail(node, fmt::format("'{}' has the wrong type", what));
            }
        }

        template <typename T>
        T required(const YAML::Node &parent, const char *key) const
        {
            const YAML::Node node = parent[key];
            if (!node || node.IsNull())
            {
                fail(parent, fmt::format("missing required key '{}'", key));
            }
            return as<T>(node, key);
        }

        template <typename T>
        T optional(const YAML::Node &parent, const char *key, T fallback) const
        {
            const YAML::Node node = parent[key];
            if (!node || node.IsNull())
            {
                return fallback;
            }
            return as<T>(node, key);
        }

        YAML::Node sequence(const YAML::Node &parent, const char *key, bool required_key = true) const
        {
            const YAML::Node node = parent[key];
            if (!node || node.IsNull())
            {
                if (required_key)
                {
                    fail(parent, fmt::format("missing required list '{}'", key));
                }
                return YAML::Node(YAML::NodeType::Sequence);
            }
            if (!node.IsSequence())
            {
                fail(node, fmt::format("'{}' must be a list", key));
            }
            return node;
        }
    };

    inline YAML::Node load_yaml(const std::filesystem::path &path, Doc &doc)
    {
        doc.file = path.string();
        if (!std::filesystem::exists(path))
        {
            throw ConfigError(fmt::format("{}: file not found", doc.file));
        }
        try
        {
            return YAML::LoadFile(path.string());
        }
        catch (const YAML::ParserException &e)
        {
            throw ConfigError(fmt::format("{}:{}: {}", doc.file, e.mark.line + 1, e.msg));
        }
    }
} // namespace tdcosim::detail
