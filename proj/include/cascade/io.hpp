#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace cascade::io {

/// Formats a double with 17 significant digits ("%.17g").
[[nodiscard]] std::string format_double(double value);

/// Writes through `writer` into a temporary sibling file, then renames it over
/// `path`. Either the whole file appears or nothing does.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

}  // namespace cascade::io
