#pragma once

// Post-norm transformer encoder classifier at desk scale.
//
// Token id 0 is reserved for [CLS]; the forward pass prepends it to every
// sequence and the classification head reads only that position. Parameter
// names are group-qualified: "embed.*", "layer<i>.*" (1-based) and "head.*".

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "forgetlab/autodiff.hpp"
#include "forgetlab/tensor.hpp"

namespace forgetlab {

inline constexpr int kClsToken = 0;

struct ModelConfig {
    std::size_t vocab_size = 64;
    /// Longest input sequence, not counting the prepended [CLS].
    std::size_t max_seq_len = 16;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t n_layers = 12;
    std::size_t d_ff = 64;
    std::size_t n_classes = 2;
    std::uint64_t seed = 999;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
    std::string name;
    Tensor value;
};

/// Sequences of token ids (without [CLS]); lengths may differ.
using TokenBatch = std::vector<std::vector<int>>;

/// Leaf ids of every parameter inside one graph, in Model::params() order.
struct BoundParams {
    std::vector<NodeId> ids;
};

class Model {
public:
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<Parameter>& params() const noexcept { return params_; }
    std::vector<Parameter>& params() noexcept { return params_; }
    std::size_t param_count() const;
    std::size_t index_of(const std::string& name) const;
    const Tensor& param(const std::string& name) const { return params_[index_of(name)].value; }

    /// Group of a parameter name: the part before the first '.'.
    static std::string group_of(const std::string& name);

    /// Adds every parameter to `g` as a leaf.
    BoundParams bind(Graph& g, bool requires_grad = true) const;

    /// Final-layer hidden states [b, T+1, d] for a validated batch.
    NodeId encode(Graph& g, const BoundParams& p, const TokenBatch& batch) const;
    /// Hidden state at [CLS], [b, d].
    NodeId cls(Graph& g, const BoundParams& p, const TokenBatch& batch) const;
    /// Classification logits, [b, n_classes].
    NodeId logits(Graph& g, const BoundParams& p, const TokenBatch& batch) const;

    Tensor forward_classify(const TokenBatch& batch) const;
    Tensor extract_cls_embedding(const TokenBatch& batch) const;

    /// Throws InvalidArgument naming the sequence and position of the first
    /// out-of-range id, or an over-long sequence.
    void validate_batch(const TokenBatch& batch) const;

    /// Redraws the classification head from `seed`.
    void reset_head(std::uint64_t seed);
    std::vector<Tensor> head() const;
    void set_head(const std::vector<Tensor>& head);

    /// Checkpoint: text header then, per parameter in order,
    /// "<name> <rank> <dims...>" followed by one line of values (%.17g).
    void save(std::ostream& os) const;
    static Model load(std::istream& is);

private:
    ModelConfig config_;
    std::vector<Parameter> params_;
};

/// Analytic parameter count for a configuration.
std::size_t expected_param_count(const ModelConfig& c);

} // namespace forgetlab
