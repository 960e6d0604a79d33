#pragma once

// The ten learning-rate choices: 0 = embeddings, 1..8 = encoder layer
// groups, 9 = classification head.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace forgetlab {

inline constexpr std::size_t kNumChoices = 10;
inline constexpr std::size_t kEmbeddingChoice = 0;
inline constexpr std::size_t kHeadChoice = 9;

class LrDistribution {
public:
    LrDistribution() { rates_.fill(1.0); }
    /// Throws InvalidArgument unless every rate is positive and finite.
    explicit LrDistribution(std::array<double, kNumChoices> rates);

    static LrDistribution flat(double lr);
    /// Parses 10 comma-separated reals.
    static LrDistribution parse(std::string_view text);
    /// 10 comma-separated reals, printed with 17 significant digits.
    std::string to_string() const;

    double operator[](std::size_t choice) const { return rates_.at(choice); }
    const std::array<double, kNumChoices>& rates() const noexcept { return rates_; }

    friend bool operator==(const LrDistribution&, const LrDistribution&) = default;

private:
    std::array<double, kNumChoices> rates_;
};

class GroupMapping {
public:
    /// Encoder layers (1-based) governed by each choice; empty for 0 and 9.
    const std::vector<std::size_t>& layers(std::size_t choice) const { return layers_.at(choice); }
    /// Group names governed by a choice: "embed", "layer<i>" or "head".
    std::vector<std::string> groups(std::size_t choice) const;
    /// Choice governing a parameter group (the name prefix before '.').
    std::size_t choice_of_group(std::string_view group) const;
    std::size_t n_layers() const noexcept { return n_layers_; }

private:
    friend GroupMapping map_choices_to_layers(std::size_t n_layers);
    std::array<std::vector<std::size_t>, kNumChoices> layers_;
    std::vector<std::size_t> layer_choice_; // index l-1 -> choice
    std::size_t n_layers_ = 0;
};

/// Splits `n_layers` encoder layers contiguously over choices 1..8. Each gets
/// n/8 layers; the n%8 leftovers go one each to choices 2,4,6,8 then 1,3,5,7.
GroupMapping map_choices_to_layers(std::size_t n_layers);

} // namespace forgetlab
