#ifndef TRIGGERS_IO_HPP
#define TRIGGERS_IO_HPP

#include <cstdint>
#include <string>

namespace triggers {

/// Write `content` to `path` via a temp file in the same directory plus rename,
/// so readers never observe a partially written file.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

/// FNV-1a 64-bit over raw bytes. Stable across runs and platforms.
std::uint64_t fnv1a64(const std::string& bytes);

/// fnv1a64 formatted as 16 lowercase hex digits.
std::string fnv1a64_hex(const std::string& bytes);

} // namespace triggers

#endif
