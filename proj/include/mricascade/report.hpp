#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mricascade/pipeline.hpp"

namespace mricascade::report {

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;
};

namespace detail {

inline std::uint8_t to_byte(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

inline void put(RgbImage& img, int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
    const std::size_t i = (static_cast<std::size_t>(r) * img.width + c) * 3;
    img.rgb[i] = red;
    img.rgb[i + 1] = green;
    img.rgb[i + 2] = blue;
}

inline Tensor minmax_rescale(const Tensor& t) {
    double lo = t[0], hi = t[0];
    for (double v : t.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out(t.shape());
    const double span = hi - lo;
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = span > 0 ? (t[i] - lo) / span : 0.5;
    return out;
}

}  // namespace detail

inline constexpr int kOverlayGap = 3;

// Four panels in the input frame: raw slice, preprocessed slice, ground truth,
// and the raw slice with the predicted mask tinted red at 50% opacity. The
// tinted pixel set is exactly the prediction mask.
inline RgbImage render_overlay(const Tensor& raw, const Tensor& preprocessed, const Mask& gt,
                               const Mask& pred) {
    const int h = raw.dim(0), w = raw.dim(1);
    if (preprocessed.dim(0) != h || gt.height != h || pred.height != h)
        throw std::invalid_argument("render_overlay: panel shapes differ");
    RgbImage img;
    img.height = h;
    img.width = 4 * w + 3 * kOverlayGap;
    img.rgb.assign(static_cast<std::size_t>(img.height) * img.width * 3, 255);

    const Tensor shown_pre = detail::minmax_rescale(preprocessed);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::uint8_t g0 = detail::to_byte(raw.at(r, c));
            detail::put(img, r, c, g0, g0, g0);
            const std::uint8_t g1 = detail::to_byte(shown_pre.at(r, c));
            detail::put(img, r, w + kOverlayGap + c, g1, g1, g1);
            const std::uint8_t g2 = gt.at(r, c) ? 255 : 0;
            detail::put(img, r, 2 * (w + kOverlayGap) + c, g2, g2, g2);
            const int c3 = 3 * (w + kOverlayGap) + c;
            if (pred.at(r, c)) {
                const std::uint8_t half = static_cast<std::uint8_t>(g0 / 2);
                detail::put(img, r, c3, static_cast<std::uint8_t>(half + 128), half, half);
            } else {
                detail::put(img, r, c3, g0, g0, g0);
            }
        }
    }
    return img;
}

// Pixels of the fourth panel whose red channel dominates; used to verify
// overlay fidelity against the binarized prediction.
inline Mask tinted_pixels(const RgbImage& img) {
    const int w = (img.width - 3 * kOverlayGap) / 4;
    Mask out(img.height, w);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < w; ++c) {
            const std::size_t i = (static_cast<std::size_t>(r) * img.width + 3 * (w + kOverlayGap) + c) * 3;
            out.at(r, c) = img.rgb[i] > img.rgb[i + 1] ? 1 : 0;
        }
    return out;
}

// Minimal polyline chart, one line per pipeline kind, mean over seeds.
inline std::string render_sweep_svg(const pipeline::SweepReport& sweep,
                                    const std::vector<pipeline::PipelineKind>& kinds,
                                    const std::vector<double>& fractions, bool sensitivity,
                                    const std::string& title) {
    const int width = 640, height = 420;
    const double x0 = 70, x1 = width - 30, y0 = height - 60, y1 = 40;
    const char* palette[4] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    double fmin = fractions.front(), fmax = fractions.front();
    for (double f : fractions) {
        fmin = std::min(fmin, f);
        fmax = std::max(fmax, f);
    }
    const double fspan = fmax > fmin ? fmax - fmin : 1.0;
    auto px = [&](double f) { return x0 + (f - fmin) / fspan * (x1 - x0); };
    auto py = [&](double v) { return y0 - v * (y0 - y1); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
        << "</text>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 10; tick += 2) {
        const double v = tick / 10.0;
        svg << "<text x=\"" << x0 - 8 << "\" y=\"" << py(v) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">" << tick * 10 << "%</text>\n";
        svg << "<line x1=\"" << x0 << "\" y1=\"" << py(v) << "\" x2=\"" << x1 << "\" y2=\"" << py(v)
            << "\" stroke=\"#dddddd\"/>\n";
    }
    for (double f : fractions)
        svg << "<text x=\"" << px(f) << "\" y=\"" << y0 + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">" << static_cast<int>(f * 100 + 0.5)
            << "%</text>\n";
    svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height - 16
        << "\" text-anchor=\"middle\" font-size=\"12\">training data used (%)</text>\n";

    for (std::size_t k = 0; k < kinds.size(); ++k) {
        std::ostringstream points;
        for (double f : fractions) {
            const auto v = sweep.mean(kinds[k], f, sensitivity);
            if (!v) continue;
            points << px(f) << "," << py(*v) << " ";
        }
        svg << "<polyline fill=\"none\" stroke=\"" << palette[k % 4]
            << "\" stroke-width=\"2\" points=\"" << points.str() << "\"/>\n";
        svg << "<text x=\"" << x0 + 10 << "\" y=\"" << y1 + 16 + 16 * static_cast<double>(k)
            << "\" font-size=\"12\" fill=\"" << palette[k % 4] << "\">"
            << pipeline::kind_display(kinds[k]) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mricascade::report
