/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_KVFILE_HPP
#define CELLFUSE_KVFILE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cellfuse {

/// Flat "key = value" text file. Lines starting with '#' and blank lines are
/// ignored. Keys are unique; duplicate keys are a ValidationError, as are
/// unparseable values when read through the typed getters.
class KvFile {
public:
    KvFile() = default;

    static KvFile load(const std::string& path);
    static KvFile parse(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated list of doubles.
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, std::int64_t value);

    void save(const std::string& path) const;
    std::string serialize() const;

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Keys present in the file but never read. Used to reject typos in
    /// configs where every key must be meaningful.
    std::vector<std::string> unread_keys() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> read_;
    std::string origin_;
};

}  // namespace cellfuse

#endif
