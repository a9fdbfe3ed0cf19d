#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tdf {

inline constexpr const char* kEngineVersion = "0.1.0";

using TimePoint = std::chrono::system_clock::time_point;

// --- hashing / encoding ---

std::string sha256_hex(std::string_view bytes);
std::optional<std::string> sha256_file_hex(const std::filesystem::path& file);

std::string base64_encode(std::string_view bytes);
std::optional<std::string> base64_decode(std::string_view text);

// Replaces ill-formed UTF-8 sequences with U+FFFD so arbitrary bytes can be
// carried in JSON string fields.
std::string lossy_utf8(std::string_view bytes);

// --- time ---

int64_t unix_millis(TimePoint tp);
TimePoint from_unix_millis(int64_t ms);
TimePoint now_utc();

// UTC, millisecond precision, trailing 'Z'.
std::string format_rfc3339_ms(TimePoint tp);
// Local time, second precision, no zone designator (trash-spec DeletionDate form).
std::string format_local_seconds(TimePoint tp);

// Accepts RFC 3339 (offset or 'Z', optional fraction), the zone-less local
// form above, and bare epoch seconds/milliseconds.
std::optional<TimePoint> parse_timestamp(std::string_view text);

// --- filesystem ---

std::optional<std::string> read_file(const std::filesystem::path& p);
bool write_file(const std::filesystem::path& p, std::string_view content);
// Write-then-rename; partial writes never land under the final name.
bool atomic_write_file(const std::filesystem::path& p, std::string_view content);

// Content manifest hash of a directory tree: relative paths, file types,
// sizes and content digests. Access times are not part of the manifest.
std::string hash_tree(const std::filesystem::path& root);

void copy_tree(const std::filesystem::path& from, const std::filesystem::path& to);

// Normalizes (resolving symlinks on the existing prefix) and checks that p
// stays under root. The root itself counts as inside.
bool path_within(const std::filesystem::path& root, const std::filesystem::path& p);

std::filesystem::path make_temp_dir(const std::string& prefix);

// --- subprocess ---

struct ProcessResult {
    int exit_code = -1;
    std::string stdout_data;
    std::string stderr_data;
    bool stdout_truncated = false;
    bool stderr_truncated = false;
    bool spawn_failed = false;
    std::string spawn_error;
};

struct ProcessOptions {
    std::filesystem::path working_dir;
    std::map<std::string, std::string> env;  // exact child environment unless inherit_env
    bool inherit_env = false;
    size_t output_cap = 1 << 20;
};

ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& opts);
ProcessResult run_shell(const std::string& command, const ProcessOptions& opts);

// Whitespace split honoring single/double quotes, for shell=false commands.
std::vector<std::string> split_command(std::string_view command);

}  // namespace tdf
