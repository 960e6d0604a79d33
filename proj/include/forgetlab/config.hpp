#pragma once

// Experiment configuration: an INI-style text file.
//
//   seed = 999
//   out = runs/conflict
//
//   [model]       vocab_size, max_seq_len, d_model, n_heads, n_layers, d_ff, n_classes
//   [protocol]    epochs_o, epochs_s, batch_size, warmup_fraction, flat_lr,
//                 phase1_lr, ewc_lambda, fisher_samples, retain_moments
//   [search]      max_resource, eta, phase2_only, record_wall_time, workers,
//                 low, high
//   [combine]     b, top_k
//   [dataset A]   source = synth | tsv, family, path, size, min_len, max_len,
//                 max_s_count, seed
//   [pair conf]   kind = dataset-pair | sentence-length | artificial,
//                 sources = A, C
//
// '#' and ';' start comments. Every reported error names file and line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "forgetlab/combiner.hpp"
#include "forgetlab/hpo.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/protocol.hpp"
#include "forgetlab/shift_lab.hpp"

namespace forgetlab {

struct DatasetSource {
    std::string name;
    enum class Kind { Synth, Tsv } kind = Kind::Synth;
    std::string family;         // synth
    std::filesystem::path path; // tsv, resolved against the config directory
    SynthOptions synth;
    std::optional<std::uint64_t> seed;
};

struct ExperimentConfig {
    std::uint64_t seed = 999;
    std::filesystem::path out_dir = "forgetlab-out";
    ModelConfig model;
    ProtocolConfig protocol;
    double flat_lr = kDefaultFlatLr;
    std::size_t max_resource = 27;
    std::size_t eta = 3;
    bool phase2_only = false;
    bool record_wall_time = false;
    std::size_t workers = 1;
    SearchSpace space;
    CombineParams combine;
    std::vector<DatasetSource> datasets;
    std::vector<ShiftSpec> pairs;

    /// Re-seeds model, protocol, datasets without their own seed, and pairs.
    void set_seed(std::uint64_t s);
    /// Cross-checks names and numeric ranges; throws ConfigError.
    void validate() const;
};

ExperimentConfig parse_config(std::istream& is, const std::string& source = "<config>",
                              const std::filesystem::path& base_dir = {});
/// Throws ConfigError naming the path when it cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Materializes every configured dataset.
DatasetRegistry build_datasets(const ExperimentConfig& cfg);
/// Builds the pair `spec`, embedding with a freshly initialized model for
/// artificial shifts.
TaskPair build_pair(const ExperimentConfig& cfg, const ShiftSpec& spec, const DatasetRegistry& datasets);

SearchOptions search_options(const ExperimentConfig& cfg);

} // namespace forgetlab
