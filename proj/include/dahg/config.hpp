#pragma once

// Flat key=value configuration files. Blank lines and lines starting with '#'
// are ignored; keys are unique.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace dahg {

class Config {
  public:
    static Config parse(std::string_view text);
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }

    // Typed reads; throw naming the key on malformed values.
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // key=value lines in key order; parse(to_string()) round-trips.
    std::string to_string() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace dahg
