#pragma once

#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <string>

#include "flowalign/jsonio.hpp"

namespace flowalign::runner {

// Append-only CSV with a header row. Rows accumulate in memory and the whole
// file is rewritten atomically on flush, so readers never see a torn file.
class MetricsCsv {
public:
    MetricsCsv(std::filesystem::path path, std::initializer_list<const char*> columns,
               long flush_every = 200)
        : path_(std::move(path)), flush_every_(flush_every) {
        bool first = true;
        for (const char* col : columns) {
            if (!first) {
                content_ += ',';
            }
            content_ += col;
            first = false;
        }
        content_ += '\n';
    }

    void row(std::initializer_list<double> values) {
        char buf[40];
        bool first = true;
        for (double v : values) {
            if (!first) {
                content_ += ',';
            }
            std::snprintf(buf, sizeof buf, "%.12g", v);
            content_ += buf;
            first = false;
        }
        content_ += '\n';
        if (++rows_ % flush_every_ == 0) {
            flush();
        }
    }

    void flush() { atomic_write_text(path_, content_); }

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::string content_;
    long rows_ = 0;
    long flush_every_;
};

}  // namespace flowalign::runner
