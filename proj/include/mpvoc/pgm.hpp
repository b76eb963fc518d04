#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "mpvoc/matrix.hpp"

namespace mpvoc {

struct PgmInfo {
    int64_t width = 0;   // T columns
    int64_t height = 0;  // F rows
    double lo = 0.0;     // log-magnitude mapped to 0
    double hi = 0.0;     // log-magnitude mapped to 255
};

// Binary PGM (P5) of a magnitude grid in the log domain, normalized per image
// to [0, 255]. Image row r is frequency bin r; column t is frame t.
inline PgmInfo write_log_magnitude_pgm(const std::string& path, const Matrix& magnitude,
                                       double log_floor = 1e-5) {
    if (magnitude.rows < 1 || magnitude.cols < 1)
        throw std::invalid_argument("write_log_magnitude_pgm: empty grid");
    PgmInfo info;
    info.width = magnitude.cols;
    info.height = magnitude.rows;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    Matrix lg(magnitude.rows, magnitude.cols);
    for (std::size_t i = 0; i < magnitude.a.size(); ++i) {
        lg.a[i] = std::log(magnitude.a[i] + log_floor);
        lo = std::min(lo, lg.a[i]);
        hi = std::max(hi, lg.a[i]);
    }
    info.lo = lo;
    info.hi = hi;
    const double span = hi - lo;
    std::string out = "P5\n" + std::to_string(magnitude.cols) + " " +
                      std::to_string(magnitude.rows) + "\n255\n";
    out.reserve(out.size() + magnitude.a.size());
    for (int64_t r = 0; r < magnitude.rows; ++r)
        for (int64_t c = 0; c < magnitude.cols; ++c) {
            const double v = span > 1e-12 ? (lg(r, c) - lo) / span : 0.0;
            out.push_back(static_cast<char>(
                static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    std::ofstream fs(path, std::ios::binary);
    if (!fs) throw std::runtime_error("write_log_magnitude_pgm: cannot open " + path);
    fs.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!fs) throw std::runtime_error("write_log_magnitude_pgm: write failed for " + path);
    return info;
}

}  // namespace mpvoc
