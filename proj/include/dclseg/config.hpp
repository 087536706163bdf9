#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dclseg {

/// Flat `section.key = value` settings. Only known keys are accepted; every
/// key has a default so dump() lists the complete effective configuration.
class Config {
public:
    static Config defaults();

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    // "none" maps to nullopt.
    std::optional<std::size_t> get_optional_size(const std::string& key) const;
    // Comma-separated list of sizes.
    std::vector<std::size_t> get_size_list(const std::string& key) const;

    // '#' starts a comment; blank lines are skipped.
    void load_text(const std::string& text, const std::string& source = "<config>");
    void load_file(const std::filesystem::path& path);
    // Applies known keys from a map and ignores the rest.
    void merge_known(const std::map<std::string, std::string>& values);

    std::string dump() const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    friend bool operator==(const Config&, const Config&) = default;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace dclseg
