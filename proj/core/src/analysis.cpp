#include "afb/error.hpp"
#include "afb/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace afb {

namespace {

constexpr double kDbFloor = -400.0;

double to_db(double mag, double peak)
{
    if (mag <= 0.0 || peak <= 0.0)
        return kDbFloor;
    return std::max(kDbFloor, 20.0 * std::log10(mag / peak));
}

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Bin k of an n-point DFT sits at frequency (k - n/2) * rate / n after the shift.
std::vector<double> shifted_frequencies(std::size_t n, double rate)
{
    std::vector<double> f(n);
    const auto half = static_cast<std::ptrdiff_t>(n / 2);
    for (std::size_t i = 0; i < n; ++i)
        f[i] = static_cast<double>(static_cast<std::ptrdiff_t>(i) - half) * rate / static_cast<double>(n);
    return f;
}

std::vector<double> shifted_magnitudes(const Filterbank& fb, std::size_t mu, std::size_t resolution)
{
    ComplexVector atom = fb.atom(mu);
    atom.resize(resolution, Complex{0.0, 0.0});
    const ComplexVector spectrum = fft(atom);
    std::vector<double> mag(resolution);
    const std::size_t half = resolution / 2;
    for (std::size_t i = 0; i < resolution; ++i)
        mag[i] = std::abs(spectrum[(i + resolution - half) % resolution]);
    return mag;
}

void check_resolution(const Filterbank& fb, std::size_t resolution)
{
    if (resolution < fb.receptive_field())
        throw std::invalid_argument("analysis resolution " + std::to_string(resolution) +
                                    " is shorter than the receptive field " +
                                    std::to_string(fb.receptive_field()));
}

} // namespace

FrequencyResponses frequency_responses(const Filterbank& fb, std::size_t resolution)
{
    check_resolution(fb, resolution);
    FrequencyResponses out;
    out.frequencies = shifted_frequencies(resolution, fb.spec.rate);
    out.db = Matrix(fb.n_bins(), resolution);
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        const auto mag = shifted_magnitudes(fb, mu, resolution);
        const double peak = *std::max_element(mag.begin(), mag.end());
        for (std::size_t i = 0; i < resolution; ++i)
            out.db(mu, i) = to_db(mag[i], peak);
    }
    return out;
}

AnalysisTable analyze_filterbank(const Filterbank& fb, std::size_t resolution, const VarDropoutState* dropout,
                                 double threshold_log_alpha, bool order_by_centroid)
{
    check_resolution(fb, resolution);
    fb.validate();
    const auto freqs = shifted_frequencies(resolution, fb.spec.rate);
    const std::size_t zero_bin = resolution / 2;

    std::vector<double> prunable(fb.n_bins(), 0.0);
    if (dropout) {
        prunable = prunable_fraction_per_filter(fb, *dropout, threshold_log_alpha);
    } else {
        // Without dropout statistics, report weights that are already exactly zero.
        for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
            const RowSupport s = fb.support(mu);
            std::size_t zeros = 0, total = 0;
            auto count = [&](const Matrix& m) {
                for (std::size_t n = s.begin; n < s.end; ++n) {
                    zeros += m(mu, n) == 0.0;
                    ++total;
                }
            };
            count(fb.real);
            if (fb.imag)
                count(*fb.imag);
            prunable[mu] = total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
        }
    }

    AnalysisTable table;
    table.rows.reserve(fb.n_bins());
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        const auto mag = shifted_magnitudes(fb, mu, resolution);
        const double peak = *std::max_element(mag.begin(), mag.end());

        AnalysisRow row;
        row.filter = mu;
        double weighted = 0.0, total = 0.0;
        for (std::size_t i = zero_bin; i < resolution; ++i) {
            weighted += mag[i] * freqs[i];
            total += mag[i];
        }
        row.centroid = total > 0.0 ? weighted / total : 0.0;

        double energy = 0.0;
        for (std::size_t n = 0; n < fb.receptive_field(); ++n) {
            energy += fb.real(mu, n) * fb.real(mu, n);
            if (fb.imag)
                energy += (*fb.imag)(mu, n) * (*fb.imag)(mu, n);
        }
        row.l2_norm = std::sqrt(energy);
        row.prunable_fraction = prunable[mu];

        double neg = 0.0;
        for (std::size_t i = 0; i < zero_bin; ++i)
            neg = std::max(neg, mag[i]);
        row.negative_peak_db = to_db(neg, peak);

        // Local maxima over the circular spectrum, strongest first.
        std::vector<std::size_t> maxima;
        for (std::size_t i = 0; i < resolution; ++i) {
            const double left = mag[(i + resolution - 1) % resolution];
            const double right = mag[(i + 1) % resolution];
            if (mag[i] > 0.0 && mag[i] >= left && mag[i] > right)
                maxima.push_back(i);
        }
        std::stable_sort(maxima.begin(), maxima.end(),
                         [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
        for (std::size_t k = 0; k < std::min<std::size_t>(5, maxima.size()); ++k)
            row.peaks.push_back({freqs[maxima[k]], to_db(mag[maxima[k]], peak)});
        table.rows.push_back(std::move(row));
    }
    if (order_by_centroid) {
        std::stable_sort(table.rows.begin(), table.rows.end(),
                         [](const AnalysisRow& a, const AnalysisRow& b) { return a.centroid < b.centroid; });
    }
    return table;
}

std::string AnalysisTable::to_tsv() const
{
    std::ostringstream out;
    out << "filter\tcentroid_hz\tl2_norm\tprunable_fraction\tnegative_peak_db";
    for (int k = 1; k <= 5; ++k)
        out << "\tpeak" << k << "_hz\tpeak" << k << "_db";
    out << "\n";
    for (const auto& r : rows) {
        out << r.filter << '\t' << num(r.centroid) << '\t' << num(r.l2_norm) << '\t' << num(r.prunable_fraction)
            << '\t' << num(r.negative_peak_db);
        for (std::size_t k = 0; k < 5; ++k) {
            if (k < r.peaks.size())
                out << '\t' << num(r.peaks[k].frequency) << '\t' << num(r.peaks[k].relative_db);
            else
                out << "\tnan\tnan";
        }
        out << "\n";
    }
    return out.str();
}

std::string FrequencyResponses::to_tsv() const
{
    std::ostringstream out;
    out << "filter";
    for (double f : frequencies)
        out << '\t' << num(f);
    out << "\n";
    for (std::size_t mu = 0; mu < db.rows(); ++mu) {
        out << mu;
        for (double v : db.row(mu))
            out << '\t' << num(v);
        out << "\n";
    }
    return out.str();
}

AnalysisTable export_responses(const Filterbank& fb, std::size_t resolution, const std::filesystem::path& prefix,
                               const VarDropoutState* dropout, double threshold_log_alpha, bool order_by_centroid)
{
    AnalysisTable table = analyze_filterbank(fb, resolution, dropout, threshold_log_alpha, order_by_centroid);
    const FrequencyResponses resp = frequency_responses(fb, resolution);
    std::filesystem::path responses = prefix;
    responses += ".responses.tsv";
    std::filesystem::path table_path = prefix;
    table_path += ".table.tsv";
    write_file_atomic(responses, resp.to_tsv());
    write_file_atomic(table_path, table.to_tsv());
    return table;
}

} // namespace afb
