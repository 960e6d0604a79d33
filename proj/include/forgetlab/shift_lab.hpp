#pragma once

// Datasets, synthetic task families and the three kinds of task shift.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forgetlab/model.hpp"
#include "forgetlab/tensor.hpp"

namespace forgetlab {

struct Example {
    std::vector<int> tokens;
    int label = 0;
    friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
    std::string name;
    std::size_t n_classes = 2;
    std::vector<Example> examples;

    std::size_t size() const noexcept { return examples.size(); }
    bool empty() const noexcept { return examples.empty(); }
    /// Labels < n_classes, sequences nonempty, ids in [1, vocab_size).
    void validate(std::size_t vocab_size) const;
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DataSplit {
    Dataset train;
    Dataset test;
};

enum class ShiftKind { DatasetPair, SentenceLength, Artificial };

std::string_view shift_kind_name(ShiftKind kind);
ShiftKind parse_shift_kind(std::string_view text);

struct ShiftSpec {
    std::string name;
    ShiftKind kind = ShiftKind::DatasetPair;
    std::vector<std::string> sources;
    std::uint64_t seed = 999;
};

/// Ordered (D_o, D_s) pair with train/test splits.
struct TaskPair {
    std::string name;
    DataSplit original;
    DataSplit shifted;
};

// Marker token sets shared by every synthetic family.
inline constexpr int kMarkerSFirst = 1, kMarkerSLast = 6;
inline constexpr int kMarkerTFirst = 7, kMarkerTLast = 12;
inline constexpr int kFillerFirst = 13;

inline bool is_s_token(int t) { return t >= kMarkerSFirst && t <= kMarkerSLast; }
inline bool is_t_token(int t) { return t >= kMarkerTFirst && t <= kMarkerTLast; }

struct SynthOptions {
    std::size_t size = 2500; // split 80/20 into 2000 train / 500 test by make_pair
    std::size_t min_len = 15;
    std::size_t max_len = 15;
    std::size_t vocab_size = 64;
    std::size_t max_s_count = 3; // parity/conflict draw #S uniformly from 0..max_s_count
};

/// Families: "parity" (alias "A"), "precedence" ("B"), "conflict" ("C").
///  parity     label = (#S tokens) mod 2; half the sequences also carry T tokens
///  precedence label = first S token comes before the first T token
///  conflict   parity inputs, label flipped when any T token is present
Dataset synth_task(std::string_view family, std::uint64_t seed, const SynthOptions& opts = {});

/// Unshuffled partition at the mean length: D_o strictly shorter, D_s the rest.
std::pair<Dataset, Dataset> split_by_length(const Dataset& d);

/// K = 2 clustering of embedding rows. Cluster 0 is D_o: the larger cluster,
/// or on a tie the one containing row 0.
std::vector<int> artificial_split(const Tensor& embeddings, std::uint64_t seed);

/// Deterministic shuffle then `train_fraction` / rest split.
DataSplit train_test_split(const Dataset& d, std::uint64_t seed, double train_fraction = 0.8);

using DatasetRegistry = std::map<std::string, Dataset>;
using Embedder = std::function<Tensor(const TokenBatch&)>;

/// Builds the ordered pair for a shift. Artificial shifts embed the source
/// with `embedder`, which must then be set.
TaskPair make_task_pair(const ShiftSpec& spec, const DatasetRegistry& datasets, const Embedder& embedder = {});

/// TSV with a header naming `tokens` (space-separated ids) and `label`.
Dataset load_tsv(std::istream& is, std::string name, std::size_t vocab_size);
Dataset load_tsv(const std::filesystem::path& path, std::size_t vocab_size);
void write_tsv(std::ostream& os, const Dataset& d);

} // namespace forgetlab
