#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace anatomap {

inline constexpr const char* kVersion = "anatomap 0.1.0";

/// SplitMix64 finaliser; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Work items must be
/// independent; callers that need deterministic reductions write into
/// per-index slots and reduce afterwards in index order.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

/// Shortest round-trip decimal form of a double, used for stable text output.
std::string format_double(double v);

}  // namespace anatomap
