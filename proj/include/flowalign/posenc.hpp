#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flowalign/vecmath.hpp"

namespace flowalign::posenc {

// 3D rotary position: a modality axis plus 2D spatial coordinates. Text
// tokens put the same value on both spatial axes, like 1D RoPE.
struct Position3 {
    long m = 0;
    long y = 0;
    long x = 0;
};

inline constexpr long kModalityText = 0;
inline constexpr long kModalityNoise = 1;
inline constexpr long kModalityReference = 2;

// Head channels are consumed as consecutive (even, odd) pairs: the first
// pairs_m pairs rotate by the modality coordinate, the next pairs_y by y and
// the last pairs_x by x, each with frequencies theta_k = base^(-k/pairs_axis).
struct RotaryConfig {
    int head_dim = 16;
    int pairs_m = 2;
    int pairs_y = 2;
    int pairs_x = 4;
    double base = 10000.0;
};

void validate(const RotaryConfig& cfg);

// Split proportional to (1, 1, 2): a quarter of the pairs each for modality
// and y, the remainder for x.
RotaryConfig make_rotary_config(int head_dim, double base = 10000.0);

// Norm-preserving rotation of a head vector by the position's per-axis angles.
Vec rotate(std::span<const double> v, const Position3& pos, const RotaryConfig& cfg);

// Positions for a text block followed by the noise-image grid and an optional
// reference-image grid (row-major). Text token i sits at (text, i, i); image
// token (r, c) at (modality, r, c).
std::vector<Position3> positions_for_sequence(int text_len, std::pair<int, int> image_hw,
                                              std::optional<std::pair<int, int>> reference_hw = {});

}  // namespace flowalign::posenc
