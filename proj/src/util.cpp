#include "tdf/util.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tdf {

namespace fs = std::filesystem;

// --- hashing / encoding ---

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::optional<std::string> sha256_file_hex(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return std::nullopt;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::array<char, 65536> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

static const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(std::string_view bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) | (static_cast<uint8_t>(bytes[i + 1]) << 8) |
                     static_cast<uint8_t>(bytes[i + 2]);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back(kB64Alphabet[v & 63]);
        i += 3;
    }
    size_t rest = bytes.size() - i;
    if (rest == 1) {
        uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rest == 2) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) | (static_cast<uint8_t>(bytes[i + 1]) << 8);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::optional<std::string> base64_decode(std::string_view text) {
    static std::array<int8_t, 256> rev = [] {
        std::array<int8_t, 256> t{};
        t.fill(-1);
        for (int i = 0; i < 64; ++i) t[static_cast<uint8_t>(kB64Alphabet[i])] = static_cast<int8_t>(i);
        return t;
    }();
    std::string out;
    out.reserve(text.size() / 4 * 3);
    uint32_t acc = 0;
    int bits = 0;
    size_t pad = 0;
    for (char c : text) {
        if (c == '=') {
            ++pad;
            continue;
        }
        if (c == '\n' || c == '\r') continue;
        int8_t v = rev[static_cast<uint8_t>(c)];
        if (v < 0 || pad > 0) return std::nullopt;
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xff));
        }
    }
    if (pad > 2) return std::nullopt;
    return out;
}

std::string lossy_utf8(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    size_t i = 0;
    const size_t n = bytes.size();
    auto cont = [&](size_t k) {
        return i + k < n && (static_cast<uint8_t>(bytes[i + k]) & 0xc0) == 0x80;
    };
    while (i < n) {
        uint8_t c = static_cast<uint8_t>(bytes[i]);
        size_t len = 0;
        if (c < 0x80) {
            len = 1;
        } else if ((c & 0xe0) == 0xc0 && c >= 0xc2 && cont(1)) {
            len = 2;
        } else if ((c & 0xf0) == 0xe0 && cont(1) && cont(2)) {
            uint8_t c1 = static_cast<uint8_t>(bytes[i + 1]);
            bool ok = !(c == 0xe0 && c1 < 0xa0) && !(c == 0xed && c1 > 0x9f);
            if (ok) len = 3;
        } else if ((c & 0xf8) == 0xf0 && c <= 0xf4 && cont(1) && cont(2) && cont(3)) {
            uint8_t c1 = static_cast<uint8_t>(bytes[i + 1]);
            bool ok = !(c == 0xf0 && c1 < 0x90) && !(c == 0xf4 && c1 > 0x8f);
            if (ok) len = 4;
        }
        if (len == 0) {
            out += "\xef\xbf\xbd";
            ++i;
        } else {
            out.append(bytes.substr(i, len));
            i += len;
        }
    }
    return out;
}

// --- time ---

int64_t unix_millis(TimePoint tp) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()).count();
}

TimePoint from_unix_millis(int64_t ms) {
    return TimePoint(std::chrono::milliseconds(ms));
}

TimePoint now_utc() {
    return std::chrono::system_clock::now();
}

std::string format_rfc3339_ms(TimePoint tp) {
    int64_t ms = unix_millis(tp);
    int64_t frac = ms % 1000;
    time_t secs = static_cast<time_t>(ms / 1000);
    if (frac < 0) {
        frac += 1000;
        secs -= 1;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(frac));
    return buf;
}

std::string format_local_seconds(TimePoint tp) {
    time_t secs = static_cast<time_t>(unix_millis(tp) / 1000);
    std::tm tm{};
    localtime_r(&secs, &tm);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

namespace {

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Parses "YYYY-MM-DDThh:mm:ss" (also accepts ' ' as separator) into tm; returns
// the index just past the seconds field, or npos.
size_t parse_datetime_prefix(std::string_view s, std::tm& tm) {
    if (s.size() < 19) return std::string_view::npos;
    auto num = [&](size_t pos, size_t n, int& out) {
        out = 0;
        for (size_t i = pos; i < pos + n; ++i) {
            if (s[i] < '0' || s[i] > '9') return false;
            out = out * 10 + (s[i] - '0');
        }
        return true;
    };
    int year, mon, day, hour, min, sec;
    if (!num(0, 4, year) || s[4] != '-' || !num(5, 2, mon) || s[7] != '-' || !num(8, 2, day)) {
        return std::string_view::npos;
    }
    if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return std::string_view::npos;
    if (!num(11, 2, hour) || s[13] != ':' || !num(14, 2, min) || s[16] != ':' || !num(17, 2, sec)) {
        return std::string_view::npos;
    }
    if (mon < 1 || mon > 12 || day < 1 || day > 31 || hour > 23 || min > 59 || sec > 60) {
        return std::string_view::npos;
    }
    tm = {};
    tm.tm_year = year - 1900;
    tm.tm_mon = mon - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = min;
    tm.tm_sec = sec;
    tm.tm_isdst = -1;
    return 19;
}

}  // namespace

std::optional<TimePoint> parse_timestamp(std::string_view text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text.empty()) return std::nullopt;

    if (all_digits(text) || (text.front() == '-' && all_digits(text.substr(1)))) {
        errno = 0;
        int64_t v = std::strtoll(std::string(text).c_str(), nullptr, 10);
        if (errno != 0) return std::nullopt;
        // Epoch values this large are only plausible as milliseconds.
        if (v >= 100000000000LL || v <= -100000000000LL) return from_unix_millis(v);
        return from_unix_millis(v * 1000);
    }

    std::tm tm{};
    size_t pos = parse_datetime_prefix(text, tm);
    if (pos == std::string_view::npos) return std::nullopt;

    int64_t frac_ms = 0;
    if (pos < text.size() && text[pos] == '.') {
        size_t start = ++pos;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
        if (pos == start) return std::nullopt;
        std::string digits(text.substr(start, std::min<size_t>(pos - start, 3)));
        while (digits.size() < 3) digits.push_back('0');
        frac_ms = std::strtoll(digits.c_str(), nullptr, 10);
    }

    std::string_view zone = text.substr(pos);
    if (zone.empty()) {
        // Zone-less local form.
        time_t local = mktime(&tm);
        if (local == static_cast<time_t>(-1)) return std::nullopt;
        return from_unix_millis(static_cast<int64_t>(local) * 1000 + frac_ms);
    }
    if (zone == "Z" || zone == "z") {
        time_t utc = timegm(&tm);
        return from_unix_millis(static_cast<int64_t>(utc) * 1000 + frac_ms);
    }
    if ((zone.front() == '+' || zone.front() == '-') && zone.size() == 6 && zone[3] == ':') {
        int oh = (zone[1] - '0') * 10 + (zone[2] - '0');
        int om = (zone[4] - '0') * 10 + (zone[5] - '0');
        if (zone[1] < '0' || zone[1] > '9' || zone[2] < '0' || zone[2] > '9' || zone[4] < '0' || zone[4] > '9' ||
            zone[5] < '0' || zone[5] > '9' || oh > 23 || om > 59) {
            return std::nullopt;
        }
        int64_t offset_s = oh * 3600 + om * 60;
        if (zone.front() == '-') offset_s = -offset_s;
        time_t utc = timegm(&tm);
        return from_unix_millis((static_cast<int64_t>(utc) - offset_s) * 1000 + frac_ms);
    }
    return std::nullopt;
}

// --- filesystem ---

std::optional<std::string> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) return std::nullopt;
    return ss.str();
}

bool write_file(const fs::path& p, std::string_view content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    return static_cast<bool>(out);
}

bool atomic_write_file(const fs::path& p, std::string_view content) {
    std::error_code ec;
    fs::path dir = p.parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir, ec);
    fs::path tmp = dir / (p.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) return false;
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            return false;
        }
    }
    fs::rename(tmp, p, ec);
    if (ec) {
        fs::remove(tmp, ec);
        return false;
    }
    return true;
}

std::string hash_tree(const fs::path& root) {
    std::vector<std::string> entries;
    std::error_code ec;
    if (fs::exists(root, ec)) {
        for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
             it != fs::recursive_directory_iterator(); ++it) {
            const fs::path& p = it->path();
            std::string rel = fs::relative(p, root, ec).generic_string();
            std::string line = rel;
            if (it->is_symlink(ec)) {
                line += "|link|" + fs::read_symlink(p, ec).generic_string();
            } else if (it->is_directory(ec)) {
                line += "|dir";
            } else if (it->is_regular_file(ec)) {
                auto digest = sha256_file_hex(p);
                line += "|file|" + std::to_string(fs::file_size(p, ec)) + "|" + digest.value_or("unreadable");
            } else {
                line += "|other";
            }
            entries.push_back(std::move(line));
        }
    }
    std::sort(entries.begin(), entries.end());
    std::string manifest;
    for (auto& e : entries) {
        manifest += e;
        manifest += '\n';
    }
    return sha256_hex(manifest);
}

void copy_tree(const fs::path& from, const fs::path& to) {
    fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::copy_symlinks);
}

bool path_within(const fs::path& root, const fs::path& p) {
    std::error_code ec;
    fs::path canon_root = fs::weakly_canonical(root, ec);
    if (ec) return false;
    fs::path canon_p = fs::weakly_canonical(p, ec);
    if (ec) return false;
    auto rit = canon_root.begin();
    auto pit = canon_p.begin();
    for (; rit != canon_root.end(); ++rit, ++pit) {
        if (rit->empty()) continue;  // trailing slash artifact
        if (pit == canon_p.end() || *pit != *rit) return false;
    }
    return true;
}

fs::path make_temp_dir(const std::string& prefix) {
    static std::mt19937_64 rng(std::random_device{}());
    fs::path base = fs::temp_directory_path();
    for (int attempt = 0; attempt < 64; ++attempt) {
        fs::path candidate = base / (prefix + std::to_string(rng() % 100000000));
        std::error_code ec;
        if (fs::create_directories(candidate, ec) && !ec) return candidate;
    }
    throw std::runtime_error("make_temp_dir: exhausted attempts under " + base.string());
}

// --- subprocess ---

namespace {

ProcessResult run_child(const std::vector<std::string>& argv, const ProcessOptions& opts) {
    ProcessResult result;
    int out_pipe[2], err_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0) {
        result.spawn_failed = true;
        result.spawn_error = "pipe failed";
        return result;
    }

    std::vector<std::string> env_strings;
    for (const auto& [k, v] : opts.env) env_strings.push_back(k + "=" + v);

    pid_t pid = fork();
    if (pid < 0) {
        result.spawn_failed = true;
        result.spawn_error = "fork failed";
        return result;
    }
    if (pid == 0) {
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        if (!opts.working_dir.empty()) {
            if (chdir(opts.working_dir.c_str()) != 0) _exit(127);
        }
        std::vector<char*> cargv;
        for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);
        if (opts.inherit_env) {
            execvp(cargv[0], cargv.data());
        } else {
            std::vector<char*> cenv;
            for (auto& e : env_strings) cenv.push_back(e.data());
            cenv.push_back(nullptr);
            execvpe(cargv[0], cargv.data(), cenv.data());
        }
        _exit(127);
    }

    close(out_pipe[1]);
    close(err_pipe[1]);

    struct Stream {
        int fd;
        std::string* data;
        bool* truncated;
        bool open = true;
    };
    Stream streams[2] = {{out_pipe[0], &result.stdout_data, &result.stdout_truncated},
                         {err_pipe[0], &result.stderr_data, &result.stderr_truncated}};
    char buf[65536];
    while (streams[0].open || streams[1].open) {
        pollfd fds[2];
        nfds_t n = 0;
        for (auto& s : streams) {
            if (s.open) fds[n++] = {s.fd, POLLIN, 0};
        }
        if (poll(fds, n, -1) < 0) {
            if (errno == EINTR) continue;
            break;
        }
        nfds_t fi = 0;
        for (auto& s : streams) {
            if (!s.open) continue;
            pollfd& pf = fds[fi++];
            if (!(pf.revents & (POLLIN | POLLHUP | POLLERR))) continue;
            ssize_t got = read(s.fd, buf, sizeof(buf));
            if (got <= 0) {
                close(s.fd);
                s.open = false;
                continue;
            }
            size_t room = opts.output_cap > s.data->size() ? opts.output_cap - s.data->size() : 0;
            size_t take = std::min(room, static_cast<size_t>(got));
            s.data->append(buf, take);
            if (take < static_cast<size_t>(got)) *s.truncated = true;
        }
    }

    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.exit_code = 128 + WTERMSIG(status);
    }
    if (result.exit_code == 127 && result.stdout_data.empty() && result.stderr_data.empty()) {
        result.spawn_failed = true;
        result.spawn_error = "command not found or not executable: " + argv[0];
    }
    return result;
}

}  // namespace

ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& opts) {
    if (argv.empty()) {
        ProcessResult r;
        r.spawn_failed = true;
        r.spawn_error = "empty command";
        return r;
    }
    return run_child(argv, opts);
}

ProcessResult run_shell(const std::string& command, const ProcessOptions& opts) {
    return run_child({"/bin/sh", "-c", command}, opts);
}

std::vector<std::string> split_command(std::string_view command) {
    std::vector<std::string> out;
    std::string cur;
    bool in_token = false;
    char quote = 0;
    for (char c : command) {
        if (quote) {
            if (c == quote) {
                quote = 0;
            } else {
                cur.push_back(c);
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            in_token = true;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (in_token) {
                out.push_back(cur);
                cur.clear();
                in_token = false;
            }
            continue;
        }
        cur.push_back(c);
        in_token = true;
    }
    if (in_token) out.push_back(cur);
    return out;
}

}  // namespace tdf
