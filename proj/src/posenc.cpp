#include "flowalign/posenc.hpp"

#include <cmath>

#include "flowalign/errors.hpp"

namespace flowalign::posenc {

void validate(const RotaryConfig& cfg) {
    if (cfg.pairs_m < 0 || cfg.pairs_y < 0 || cfg.pairs_x < 0) {
        throw ConfigError("rotary: negative pair counts");
    }
    if (2 * (cfg.pairs_m + cfg.pairs_y + cfg.pairs_x) != cfg.head_dim) {
        throw ConfigError("rotary: channel pairs must cover head_dim exactly");
    }
    if (!(cfg.base > 1.0)) {
        throw ConfigError("rotary: base must exceed 1");
    }
}

RotaryConfig make_rotary_config(int head_dim, double base) {
    if (head_dim < 2 || head_dim % 2 != 0) {
        throw ConfigError("rotary: head_dim must be even and >= 2");
    }
    RotaryConfig cfg;
    cfg.head_dim = head_dim;
    cfg.base = base;
    const int pairs = head_dim / 2;
    cfg.pairs_m = pairs / 4;
    cfg.pairs_y = pairs / 4;
    cfg.pairs_x = pairs - cfg.pairs_m - cfg.pairs_y;
    return cfg;
}

namespace {

void rotate_block(std::span<double> v, size_t pair_offset, int pairs, long coord, double base) {
    for (int k = 0; k < pairs; ++k) {
        const double theta = std::pow(base, -static_cast<double>(k) / pairs);
        const double angle = static_cast<double>(coord) * theta;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const size_t i = 2 * (pair_offset + static_cast<size_t>(k));
        const double a = v[i];
        const double b = v[i + 1];
        v[i] = a * c - b * s;
        v[i + 1] = a * s + b * c;
    }
}

}  // namespace

Vec rotate(std::span<const double> v, const Position3& pos, const RotaryConfig& cfg) {
    validate(cfg);
    if (static_cast<int>(v.size()) != cfg.head_dim) {
        throw ContractError("rotate: vector does not match head_dim");
    }
    Vec out(v.begin(), v.end());
    size_t offset = 0;
    rotate_block(out, offset, cfg.pairs_m, pos.m, cfg.base);
    offset += static_cast<size_t>(cfg.pairs_m);
    rotate_block(out, offset, cfg.pairs_y, pos.y, cfg.base);
    offset += static_cast<size_t>(cfg.pairs_y);
    rotate_block(out, offset, cfg.pairs_x, pos.x, cfg.base);
    return out;
}

std::vector<Position3> positions_for_sequence(int text_len, std::pair<int, int> image_hw,
                                              std::optional<std::pair<int, int>> reference_hw) {
    if (text_len < 0 || image_hw.first < 0 || image_hw.second < 0) {
        throw ContractError("positions_for_sequence: negative dimensions");
    }
    std::vector<Position3> positions;
    for (int i = 0; i < text_len; ++i) {
        positions.push_back({kModalityText, i, i});
    }
    for (int r = 0; r < image_hw.first; ++r) {
        for (int c = 0; c < image_hw.second; ++c) {
            positions.push_back({kModalityNoise, r, c});
        }
    }
    if (reference_hw) {
        for (int r = 0; r < reference_hw->first; ++r) {
            for (int c = 0; c < reference_hw->second; ++c) {
                positions.push_back({kModalityReference, r, c});
            }
        }
    }
    return positions;
}

}  // namespace flowalign::posenc
