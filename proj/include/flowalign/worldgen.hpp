#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <variant>
#include <vector>

#include "flowalign/mixture.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/vecmath.hpp"

namespace flowalign::worldgen {

// Two interleaved half-circles with Gaussian jitter.
struct TwoMoons {
    double radius = 1.0;
    double noise = 0.1;
};

using Target = std::variant<GaussianMixture, TwoMoons>;

// A discrete condition id with its target distribution: the toy analogue of a
// prompt category.
struct ConditionSpec {
    int id = 0;
    Target target;
    std::string category;
};

void validate(const ConditionSpec& spec);

std::vector<Vec> sample_data(const ConditionSpec& spec, int n, Rng& rng);

// ---- deterministic curation rules ----

struct MetadataRecord {
    int width = 0;
    int height = 0;
    double aspect_ratio = 0.0;  // width / height
    double aesthetic = 0.0;
    bool watermark = false;
    bool aigc = false;
    std::string category;
    std::string style;
};

struct FilterThresholds {
    int min_edge = 384;
    double min_aspect = 0.25;
    double max_aspect = 4.0;
    double min_aesthetic = 4.5;
};

enum class FilterReason { kept, resolution, aspect, aesthetic, watermark, aigc };

const char* to_string(FilterReason reason);

// Rejects when the shortest edge is under min_edge, the aspect ratio leaves
// [min_aspect, max_aspect], the aesthetic score is under min_aesthetic, or a
// watermark/aigc flag is set. The reason names the first failed rule in that
// fixed order.
FilterReason filter_record(const MetadataRecord& rec, const FilterThresholds& thresholds);

// JSON-lines input, one record per line.
std::vector<MetadataRecord> read_records(std::istream& in);
std::vector<MetadataRecord> read_records_file(const std::filesystem::path& path);

struct FilterReport {
    long kept = 0;
    long rejected_resolution = 0;
    long rejected_aspect = 0;
    long rejected_aesthetic = 0;
    long rejected_watermark = 0;
    long rejected_aigc = 0;
};

FilterReport run_filter(const std::vector<MetadataRecord>& records,
                        const FilterThresholds& thresholds);

// CSV with a header row: reason,count
void write_filter_report(const std::filesystem::path& path, const FilterReport& report);

// ---- caption granularity mixing ----

enum class CaptionLevel { entity, phrase, composition, photographic };

const char* to_string(CaptionLevel level);

// Fixed sampling probabilities over the four granularity levels.
inline constexpr double kCaptionLevelProbs[4] = {0.05, 0.1, 0.2, 0.65};

// Cumulative lookup on a uniform variate; exposed for forced-draw checks.
CaptionLevel caption_level_from_uniform(double u);
CaptionLevel caption_level_pick(Rng& rng);

// ---- dynamic character sampling ----

struct CharStats {
    std::vector<std::string> symbols;
    std::vector<double> accuracy;  // per symbol, in [0, 1]
    std::vector<long> count;
};

struct CharWeights {
    std::vector<double> weights;  // normalized sampling distribution
    double synthetic_ratio = 0.0;
};

// weight_i proportional to (1 - acc_i)^p. Synthetic exposure phases out
// entirely once every symbol clears phase_out_threshold; otherwise it is
// base_ratio scaled by the mean error.
CharWeights dynamic_char_weights(const CharStats& stats, double p, double phase_out_threshold,
                                 double base_ratio = 0.5);

}  // namespace flowalign::worldgen
