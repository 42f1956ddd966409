#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace dadp {

// CSV writer with deterministic number formatting (shortest round-trip via
// %.17g would carry noise digits; we use %.17g only for doubles that need
// them and plain formatting otherwise is not worth the branching, so: always
// %.17g). Re-running a solve must produce byte-identical bodies.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    }

    void header(const std::vector<std::string>& cols) { row_strings(cols); }

    void field(const std::string& s) {
        if (!first_) out_ << ',';
        out_ << s;
        first_ = false;
    }
    void field(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        field(std::string(buf));
    }
    void field(long long v) { field(std::to_string(v)); }
    void field(int v) { field(std::to_string(v)); }
    void endrow() {
        out_ << '\n';
        first_ = true;
    }

    void row_strings(const std::vector<std::string>& cols) {
        for (const auto& c : cols) field(c);
        endrow();
    }

private:
    std::ofstream out_;
    bool first_ = true;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace dadp
