#pragma once

// Subcommands behind tools/forgetlab. Each returns a process exit code and
// reports progress and errors on `log`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace forgetlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

enum class EvalMode { Flat, Dist, Ewc };
std::string_view eval_mode_name(EvalMode m);
EvalMode parse_eval_mode(std::string_view text);

/// Exclusive ownership of an output directory through `.forgetlab.lock`.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

struct CommonOptions {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::size_t> workers;
};

/// Worker count: --workers, else FORGETLAB_WORKERS, else the config value.
std::size_t resolve_workers(std::optional<std::size_t> flag, std::size_t config_value);

/// Writes trials_<pair>.jsonl and best_<pair>.csv for every configured pair.
int cmd_search(const std::filesystem::path& config, const CommonOptions& opts, std::ostream& log);

/// Rank-weighted combination per log, then the cross-pair geometric mean, into
/// <out>/combined.csv.
int cmd_combine(const std::vector<std::filesystem::path>& logs, std::optional<double> b,
                std::optional<std::size_t> top_k, const std::filesystem::path& out_dir, std::ostream& log);

/// Runs the protocol on every pair and appends rows to <out>/results.csv.
int cmd_evaluate(const std::filesystem::path& config, const std::optional<std::filesystem::path>& dist,
                 EvalMode mode, const CommonOptions& opts, std::ostream& log);

/// Prints distribution CSVs as tables and trial logs as summaries.
int cmd_report(const std::vector<std::filesystem::path>& files, std::ostream& out, std::ostream& log);

} // namespace forgetlab
