#include <doctest.h>

#include <cmath>
#include <sstream>

#include "flowalign/errors.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/worldgen.hpp"

using namespace flowalign;
using namespace flowalign::worldgen;

namespace {

ConditionSpec gaussian_condition(Vec mean, double sigma) {
    GaussianMixture mix;
    const double v = sigma * sigma;
    mix.components.push_back({std::move(mean), {v, 0.0, 0.0, v}});
    mix.weights = {1.0};
    return {0, mix, "unimodal"};
}

ConditionSpec bimodal_condition(double sep, double sigma) {
    GaussianMixture mix;
    const double v = sigma * sigma;
    mix.components.push_back({Vec{-sep, 0.0}, {v, 0.0, 0.0, v}});
    mix.components.push_back({Vec{sep, 0.0}, {v, 0.0, 0.0, v}});
    mix.weights = {0.5, 0.5};
    return {0, mix, "bimodal"};
}

MetadataRecord good_record() {
    MetadataRecord rec;
    rec.width = 1024;
    rec.height = 768;
    rec.aspect_ratio = 1024.0 / 768.0;
    rec.aesthetic = 5.5;
    return rec;
}

}  // namespace

TEST_CASE("sample_data: law of large numbers on a standard Gaussian") {
    const ConditionSpec spec = gaussian_condition(Vec{0.0, 0.0}, 1.0);
    validate(spec);
    Rng rng(1);
    const auto points = sample_data(spec, 100000, rng);
    double mx = 0.0, my = 0.0;
    for (const Vec& p : points) {
        mx += p[0];
        my += p[1];
    }
    mx /= points.size();
    my /= points.size();
    CHECK(std::abs(mx) < 0.02);
    CHECK(std::abs(my) < 0.02);
}

TEST_CASE("sample_data: two equal modes split evenly") {
    const ConditionSpec spec = bimodal_condition(2.0, 0.3);
    Rng rng(2);
    const auto points = sample_data(spec, 100000, rng);
    long right = 0;
    for (const Vec& p : points) right += (p[0] > 0.0);
    CHECK(static_cast<double>(right) / points.size() == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(static_cast<double>(right) / points.size() - 0.5) < 0.02);
}

TEST_CASE("sample_data: empirical covariance within 5% of the spec") {
    GaussianMixture mix;
    mix.components.push_back({Vec{1.0, -1.0}, {0.8, 0.3, 0.3, 0.5}});
    mix.weights = {1.0};
    const ConditionSpec spec{0, mix, "skewed"};
    Rng rng(3);
    const auto points = sample_data(spec, 100000, rng);
    double mx = 0.0, my = 0.0;
    for (const Vec& p : points) {
        mx += p[0];
        my += p[1];
    }
    mx /= points.size();
    my /= points.size();
    double cxx = 0.0, cxy = 0.0, cyy = 0.0;
    for (const Vec& p : points) {
        cxx += (p[0] - mx) * (p[0] - mx);
        cxy += (p[0] - mx) * (p[1] - my);
        cyy += (p[1] - my) * (p[1] - my);
    }
    cxx /= points.size();
    cxy /= points.size();
    cyy /= points.size();
    CHECK(cxx == doctest::Approx(0.8).epsilon(0.05));
    CHECK(cxy == doctest::Approx(0.3).epsilon(0.05));
    CHECK(cyy == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("two-moons target produces points near the two arcs") {
    ConditionSpec spec{1, TwoMoons{1.0, 0.05}, "moons"};
    validate(spec);
    Rng rng(4);
    const auto points = sample_data(spec, 5000, rng);
    long upper = 0;
    for (const Vec& p : points) {
        const double d_upper = std::abs(std::hypot(p[0], p[1]) - 1.0);
        const double d_lower = std::abs(std::hypot(p[0] - 1.0, p[1] - 0.5) - 1.0);
        CHECK(std::min(d_upper, d_lower) < 0.5);
        upper += (p[1] > 0.25);
    }
    CHECK(static_cast<double>(upper) / points.size() == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("filter_record: threshold examples from the curation rules") {
    const FilterThresholds th;

    MetadataRecord rec = good_record();
    rec.width = 383;  // shortest edge below 384
    CHECK(filter_record(rec, th) == FilterReason::resolution);

    rec = good_record();
    rec.width = 1800;
    rec.height = 400;
    rec.aspect_ratio = 4.5;
    CHECK(filter_record(rec, th) == FilterReason::aspect);

    rec = good_record();
    rec.aesthetic = 4.4;
    CHECK(filter_record(rec, th) == FilterReason::aesthetic);

    rec = good_record();
    rec.watermark = true;
    CHECK(filter_record(rec, th) == FilterReason::watermark);

    rec = good_record();
    rec.aigc = true;
    CHECK(filter_record(rec, th) == FilterReason::aigc);

    CHECK(filter_record(good_record(), th) == FilterReason::kept);
}

TEST_CASE("filter_record: reason order is fixed") {
    const FilterThresholds th;
    MetadataRecord rec = good_record();
    rec.width = 100;       // fails resolution
    rec.aesthetic = 1.0;   // would also fail aesthetic
    rec.watermark = true;  // and watermark
    CHECK(filter_record(rec, th) == FilterReason::resolution);

    rec.width = 2000;
    rec.height = 400;
    rec.aspect_ratio = 5.0;
    CHECK(filter_record(rec, th) == FilterReason::aspect);
    rec.aspect_ratio = 1.0;
    CHECK(filter_record(rec, th) == FilterReason::aesthetic);
}

TEST_CASE("metadata records parse from JSON lines and misbehaved input throws") {
    std::istringstream in(
        R"({"width": 512, "height": 512, "aesthetic": 5.0})"
        "\n"
        R"({"width": 300, "height": 512, "aesthetic": 5.0, "watermark": true, "category": "poster"})"
        "\n");
    const auto records = read_records(in);
    REQUIRE(records.size() == 2);
    CHECK(records[0].aspect_ratio == doctest::Approx(1.0));
    CHECK(records[1].watermark);
    CHECK(records[1].category == "poster");

    std::istringstream bad(R"({"width": 512})"
                           "\n");
    CHECK_THROWS_AS(read_records(bad), ConfigError);
}

TEST_CASE("filter report counts every reason") {
    const FilterThresholds th;
    std::vector<MetadataRecord> records;
    records.push_back(good_record());
    MetadataRecord r1 = good_record();
    r1.height = 100;
    records.push_back(r1);
    MetadataRecord r2 = good_record();
    r2.aigc = true;
    records.push_back(r2);
    const FilterReport report = run_filter(records, th);
    CHECK(report.kept == 1);
    CHECK(report.rejected_resolution == 1);
    CHECK(report.rejected_aigc == 1);
    CHECK(report.rejected_aspect == 0);
}

TEST_CASE("caption level: forced uniform variates map through the cumulative table") {
    CHECK(caption_level_from_uniform(0.5) == CaptionLevel::photographic);
    CHECK(caption_level_from_uniform(0.10) == CaptionLevel::phrase);
    CHECK(caption_level_from_uniform(0.01) == CaptionLevel::entity);
    CHECK(caption_level_from_uniform(0.20) == CaptionLevel::composition);
    CHECK(caption_level_from_uniform(0.999) == CaptionLevel::photographic);
}

TEST_CASE("caption level frequencies match the published distribution") {
    Rng rng(7);
    const int n = 100000;
    long counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < n; ++i) {
        counts[static_cast<int>(caption_level_pick(rng))]++;
    }
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(static_cast<double>(counts[k]) / n - kCaptionLevelProbs[k]) < 0.01);
    }
    // chi-square against the published vector: 3 dof, reject only below p ~ 0.001
    double chi2 = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double expected = n * kCaptionLevelProbs[k];
        chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
    }
    CHECK(chi2 < 16.27);
}

TEST_CASE("dynamic char weights: equal accuracies give uniform weights") {
    CharStats stats{{"a", "b", "c"}, {0.5, 0.5, 0.5}, {10, 10, 10}};
    const CharWeights w = dynamic_char_weights(stats, 1.0, 0.95);
    for (double v : w.weights) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("dynamic char weights: error-proportional mixing") {
    CharStats stats{{"easy", "hard"}, {0.9, 0.5}, {100, 100}};
    const CharWeights w = dynamic_char_weights(stats, 1.0, 0.95);
    CHECK(w.weights[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(w.synthetic_ratio > 0.0);
}

TEST_CASE("dynamic char weights: synthetic data phases out when everything is learned") {
    CharStats stats{{"a", "b"}, {0.97, 0.95}, {100, 100}};
    const CharWeights w = dynamic_char_weights(stats, 1.0, 0.95);
    CHECK(w.synthetic_ratio == 0.0);
    CHECK(w.weights[0] + w.weights[1] == doctest::Approx(1.0).epsilon(1e-12));

    CharStats perfect{{"a", "b"}, {1.0, 1.0}, {100, 100}};
    const CharWeights wp = dynamic_char_weights(perfect, 1.0, 0.95);
    CHECK(wp.synthetic_ratio == 0.0);
    CHECK(wp.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("dynamic char weights are a distribution, non-increasing in accuracy") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        CharStats stats;
        const int n = 5;
        for (int i = 0; i < n; ++i) {
            stats.symbols.push_back(std::string(1, static_cast<char>('a' + i)));
            stats.accuracy.push_back(rng.uniform());
            stats.count.push_back(10);
        }
        const CharWeights w = dynamic_char_weights(stats, 2.0, 0.95);
        double total = 0.0;
        for (double v : w.weights) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (stats.accuracy[i] < stats.accuracy[j]) {
                    CHECK(w.weights[i] >= w.weights[j] - 1e-12);
                }
            }
        }
    }
}
