#include "flowalign/worldgen.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "flowalign/errors.hpp"
#include "flowalign/jsonio.hpp"

namespace flowalign::worldgen {

void validate(const ConditionSpec& spec) {
    if (spec.id < 0) {
        throw ConfigError("condition: id must be >= 0");
    }
    if (const auto* mix = std::get_if<GaussianMixture>(&spec.target)) {
        flowalign::validate(*mix);
    } else {
        const auto& moons = std::get<TwoMoons>(spec.target);
        if (!(moons.radius > 0.0) || moons.noise < 0.0) {
            throw ConfigError("condition: bad two-moons parameters");
        }
    }
}

namespace {

Vec sample_two_moons(const TwoMoons& moons, Rng& rng) {
    const double angle = rng.uniform() * std::numbers::pi;
    Vec x(2);
    if (rng.uniform() < 0.5) {
        x[0] = moons.radius * std::cos(angle);
        x[1] = moons.radius * std::sin(angle);
    } else {
        x[0] = moons.radius * (1.0 - std::cos(angle));
        x[1] = moons.radius * (0.5 - std::sin(angle));
    }
    x[0] += moons.noise * rng.normal();
    x[1] += moons.noise * rng.normal();
    return x;
}

}  // namespace

std::vector<Vec> sample_data(const ConditionSpec& spec, int n, Rng& rng) {
    if (n < 1) {
        throw ContractError("sample_data: n must be >= 1");
    }
    std::vector<Vec> out;
    out.reserve(static_cast<size_t>(n));
    if (const auto* mix = std::get_if<GaussianMixture>(&spec.target)) {
        for (int i = 0; i < n; ++i) {
            out.push_back(sample(*mix, rng));
        }
    } else {
        const auto& moons = std::get<TwoMoons>(spec.target);
        for (int i = 0; i < n; ++i) {
            out.push_back(sample_two_moons(moons, rng));
        }
    }
    return out;
}

const char* to_string(FilterReason reason) {
    switch (reason) {
        case FilterReason::kept: return "kept";
        case FilterReason::resolution: return "resolution";
        case FilterReason::aspect: return "aspect";
        case FilterReason::aesthetic: return "aesthetic";
        case FilterReason::watermark: return "watermark";
        case FilterReason::aigc: return "aigc";
    }
    return "unknown";
}

FilterReason filter_record(const MetadataRecord& rec, const FilterThresholds& thresholds) {
    if (std::min(rec.width, rec.height) < thresholds.min_edge) {
        return FilterReason::resolution;
    }
    if (rec.aspect_ratio < thresholds.min_aspect || rec.aspect_ratio > thresholds.max_aspect) {
        return FilterReason::aspect;
    }
    if (rec.aesthetic < thresholds.min_aesthetic) {
        return FilterReason::aesthetic;
    }
    if (rec.watermark) {
        return FilterReason::watermark;
    }
    if (rec.aigc) {
        return FilterReason::aigc;
    }
    return FilterReason::kept;
}

std::vector<MetadataRecord> read_records(std::istream& in) {
    std::vector<MetadataRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            MetadataRecord rec;
            rec.width = j.at("width").get<int>();
            rec.height = j.at("height").get<int>();
            if (rec.width <= 0 || rec.height <= 0) {
                throw ConfigError("record line " + std::to_string(line_no) +
                                  ": width and height must be positive");
            }
            rec.aspect_ratio = static_cast<double>(rec.width) / rec.height;
            rec.aesthetic = j.at("aesthetic").get<double>();
            rec.watermark = j.value("watermark", false);
            rec.aigc = j.value("aigc", false);
            rec.category = j.value("category", std::string{});
            rec.style = j.value("style", std::string{});
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad metadata record at line " + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return records;
}

std::vector<MetadataRecord> read_records_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DependencyError("missing records file: " + path.string());
    }
    return read_records(in);
}

FilterReport run_filter(const std::vector<MetadataRecord>& records,
                        const FilterThresholds& thresholds) {
    FilterReport report;
    for (const MetadataRecord& rec : records) {
        switch (filter_record(rec, thresholds)) {
            case FilterReason::kept: ++report.kept; break;
            case FilterReason::resolution: ++report.rejected_resolution; break;
            case FilterReason::aspect: ++report.rejected_aspect; break;
            case FilterReason::aesthetic: ++report.rejected_aesthetic; break;
            case FilterReason::watermark: ++report.rejected_watermark; break;
            case FilterReason::aigc: ++report.rejected_aigc; break;
        }
    }
    return report;
}

void write_filter_report(const std::filesystem::path& path, const FilterReport& report) {
    std::string csv = "reason,count\n";
    csv += "kept," + std::to_string(report.kept) + "\n";
    csv += "resolution," + std::to_string(report.rejected_resolution) + "\n";
    csv += "aspect," + std::to_string(report.rejected_aspect) + "\n";
    csv += "aesthetic," + std::to_string(report.rejected_aesthetic) + "\n";
    csv += "watermark," + std::to_string(report.rejected_watermark) + "\n";
    csv += "aigc," + std::to_string(report.rejected_aigc) + "\n";
    atomic_write_text(path, csv);
}

const char* to_string(CaptionLevel level) {
    switch (level) {
        case CaptionLevel::entity: return "entity";
        case CaptionLevel::phrase: return "phrase";
        case CaptionLevel::composition: return "composition";
        case CaptionLevel::photographic: return "photographic";
    }
    return "unknown";
}

CaptionLevel caption_level_from_uniform(double u) {
    double cum = 0.0;
    for (int k = 0; k < 3; ++k) {
        cum += kCaptionLevelProbs[k];
        if (u < cum) {
            return static_cast<CaptionLevel>(k);
        }
    }
    return CaptionLevel::photographic;
}

CaptionLevel caption_level_pick(Rng& rng) { return caption_level_from_uniform(rng.uniform()); }

CharWeights dynamic_char_weights(const CharStats& stats, double p, double phase_out_threshold,
                                 double base_ratio) {
    const size_t n = stats.symbols.size();
    if (n == 0 || stats.accuracy.size() != n) {
        throw ContractError("dynamic_char_weights: need at least one symbol with accuracy");
    }
    CharWeights out;
    out.weights.resize(n);
    double total = 0.0;
    double min_acc = 1.0;
    double error_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double acc = stats.accuracy[i];
        if (acc < 0.0 || acc > 1.0) {
            throw ContractError("dynamic_char_weights: accuracy outside [0, 1]");
        }
        out.weights[i] = std::pow(1.0 - acc, p);
        total += out.weights[i];
        min_acc = std::min(min_acc, acc);
        error_sum += 1.0 - acc;
    }
    if (total > 0.0) {
        for (double& w : out.weights) {
            w /= total;
        }
    } else {
        // every symbol fully learned: keep exposure uniform
        std::fill(out.weights.begin(), out.weights.end(), 1.0 / static_cast<double>(n));
    }
    out.synthetic_ratio =
        min_acc >= phase_out_threshold ? 0.0 : base_ratio * (error_sum / static_cast<double>(n));
    return out;
}

}  // namespace flowalign::worldgen
