#include "forgetlab/lr_groups.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "forgetlab/error.hpp"

namespace forgetlab {

LrDistribution::LrDistribution(std::array<double, kNumChoices> rates) : rates_(rates) {
    for (std::size_t i = 0; i < kNumChoices; ++i)
        if (!(rates_[i] > 0.0) || !std::isfinite(rates_[i]))
            throw InvalidArgument("learning rate for choice " + std::to_string(i) + " must be positive and finite");
}

LrDistribution LrDistribution::flat(double lr) {
    if (!(lr > 0.0)) throw InvalidArgument("flat learning rate must be positive");
    std::array<double, kNumChoices> r;
    r.fill(lr);
    return LrDistribution(r);
}

LrDistribution LrDistribution::parse(std::string_view text) {
    std::array<double, kNumChoices> r{};
    std::size_t n = 0;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = text.find(',', pos);
        std::string field(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        const auto first = field.find_first_not_of(" \t");
        const auto last = field.find_last_not_of(" \t\r\n");
        if (first == std::string::npos) throw InvalidArgument("learning-rate list has an empty field");
        field = field.substr(first, last - first + 1);
        if (n == kNumChoices) throw InvalidArgument("learning-rate list has more than 10 values");
        double v = 0.0;
        const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (res.ec != std::errc() || res.ptr != field.data() + field.size())
            throw InvalidArgument("learning-rate list: cannot parse '" + field + "'");
        r[n++] = v;
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    if (n != kNumChoices)
        throw InvalidArgument("learning-rate list has " + std::to_string(n) + " values, expected 10");
    return LrDistribution(r);
}

std::string LrDistribution::to_string() const {
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < kNumChoices; ++i) {
        std::snprintf(buf, sizeof buf, "%.16e", rates_[i]);
        if (i) out += ',';
        out += buf;
    }
    return out;
}

std::vector<std::string> GroupMapping::groups(std::size_t choice) const {
    if (choice >= kNumChoices) throw InvalidArgument("choice " + std::to_string(choice) + " out of range");
    if (choice == kEmbeddingChoice) return {"embed"};
    if (choice == kHeadChoice) return {"head"};
    std::vector<std::string> out;
    for (auto l : layers_[choice]) out.push_back("layer" + std::to_string(l));
    return out;
}

std::size_t GroupMapping::choice_of_group(std::string_view group) const {
    if (group == "embed") return kEmbeddingChoice;
    if (group == "head") return kHeadChoice;
    if (group.starts_with("layer")) {
        std::size_t l = 0;
        const auto digits = group.substr(5);
        const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), l);
        if (res.ec == std::errc() && res.ptr == digits.data() + digits.size() && l >= 1 && l <= n_layers_)
            return layer_choice_[l - 1];
    }
    throw InvalidArgument("parameter group '" + std::string(group) + "' is not governed by any choice");
}

GroupMapping map_choices_to_layers(std::size_t n_layers) {
    if (n_layers < 1) throw InvalidArgument("map_choices_to_layers: n_layers must be >= 1");
    constexpr std::array<std::size_t, 8> extra_order{2, 4, 6, 8, 1, 3, 5, 7};
    std::array<std::size_t, kNumChoices> count{};
    for (std::size_t c = 1; c <= 8; ++c) count[c] = n_layers / 8;
    for (std::size_t e = 0; e < n_layers % 8; ++e) ++count[extra_order[e]];

    GroupMapping m;
    m.n_layers_ = n_layers;
    m.layer_choice_.resize(n_layers);
    std::size_t layer = 1;
    for (std::size_t c = 1; c <= 8; ++c)
        for (std::size_t i = 0; i < count[c]; ++i, ++layer) {
            m.layers_[c].push_back(layer);
            m.layer_choice_[layer - 1] = c;
        }
    return m;
}

} // namespace forgetlab
