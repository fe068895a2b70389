#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace codriver {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// 64-bit FNV-1a. Fixed across platforms; used for embeddings, ids and cache keys.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 1469598103934665603ULL);

std::string to_hex(std::uint64_t value);

// Fixed two-decimal rendering ("8.06").
std::string format2(double value);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
bool contains(std::string_view haystack, std::string_view needle);
bool iequals(std::string_view a, std::string_view b);

// Natural ordering on ids: "veh2" < "veh10".
bool natural_less(std::string_view a, std::string_view b);

struct NaturalLess {
    bool operator()(const std::string& a, const std::string& b) const { return natural_less(a, b); }
};

// Replaces every "{name}" with vars[name]. Unknown placeholders are left untouched.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view contents);

// Root of the shipped resources (templates, scripts, seed memories, scenarios).
// CODRIVER_RESOURCES in the environment overrides the compiled-in location.
std::string resource_dir();

}  // namespace codriver
