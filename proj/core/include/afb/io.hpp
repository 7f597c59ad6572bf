#pragma once

#include "afb/design.hpp"
#include "afb/dropout.hpp"
#include "afb/response.hpp"
#include "afb/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afb {

// ---------------------------------------------------------------------------
// WAV

enum class WavEncoding { pcm16, pcm24, pcm32, float32 };

/// Decodes RIFF/WAVE (PCM 16/24/32-bit, IEEE float 32-bit; mono or stereo)
/// into a mono signal at the file's own rate. Errors: Errc::malformed_riff,
/// Errc::unsupported_codec, Errc::empty_audio.
RealSignal decode_wav(std::span<const std::uint8_t> bytes);

/// Reads a WAV file and resamples it to `target_rate` unless `keep_rate`.
RealSignal read_wav(const std::filesystem::path& path, bool keep_rate = false, int target_rate = 16000);

std::vector<std::uint8_t> encode_wav(std::span<const std::vector<double>> channels, int rate, WavEncoding encoding);
void write_wav(const std::filesystem::path& path, const RealSignal& signal, WavEncoding encoding = WavEncoding::pcm16);

// ---------------------------------------------------------------------------
// Filterbank archives (.afb)

enum class WeightPrecision { f64, f32 };

inline constexpr std::uint32_t kArchiveVersion = 1;

struct FilterbankArchive {
    Filterbank bank;
    BatchNormState bn;
    std::optional<VarDropoutState> dropout;
    WeightPrecision precision = WeightPrecision::f64;
    std::string source = "design";
};

std::vector<std::uint8_t> serialize_archive(const FilterbankArchive& archive);
/// Errc::bad_archive, Errc::truncated, Errc::checksum (names the section),
/// Errc::version_mismatch (names both versions), Errc::variant_mismatch.
FilterbankArchive parse_archive(std::span<const std::uint8_t> bytes,
                                std::optional<Variant> expected_variant = std::nullopt);

void save_filterbank(const std::filesystem::path& path, const FilterbankArchive& archive);
FilterbankArchive load_filterbank(const std::filesystem::path& path,
                                  std::optional<Variant> expected_variant = std::nullopt);

// ---------------------------------------------------------------------------
// Feature maps: one text header line, then row-major little-endian f64.

std::vector<std::uint8_t> serialize_feature_map(const FeatureMap& map);
FeatureMap parse_feature_map(std::span<const std::uint8_t> bytes);
void write_feature_map(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_map(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Filter analysis

struct SpectralPeak {
    double frequency = 0.0;   // Hz, signed
    double relative_db = 0.0; // relative to the filter's maximum
};

struct AnalysisRow {
    std::size_t filter = 0;
    double centroid = 0.0;
    double l2_norm = 0.0;
    double prunable_fraction = 0.0;
    double negative_peak_db = 0.0;  // strongest negative-frequency bin relative to the maximum
    std::vector<SpectralPeak> peaks;
};

struct AnalysisTable {
    std::vector<AnalysisRow> rows;
    std::string to_tsv() const;
};

struct FrequencyResponses {
    std::vector<double> frequencies;  // ascending, -rate/2 .. rate/2
    Matrix db;                        // [n_bins x resolution], relative to each filter's maximum
    std::string to_tsv() const;
};

/// Zero-padded DFT of every filter's analytic atom at `resolution` points.
FrequencyResponses frequency_responses(const Filterbank& fb, std::size_t resolution);

AnalysisTable analyze_filterbank(const Filterbank& fb, std::size_t resolution,
                                 const VarDropoutState* dropout = nullptr, double threshold_log_alpha = 3.0,
                                 bool order_by_centroid = true);

/// Writes `<prefix>.responses.tsv` and `<prefix>.table.tsv`.
AnalysisTable export_responses(const Filterbank& fb, std::size_t resolution, const std::filesystem::path& prefix,
                               const VarDropoutState* dropout = nullptr, double threshold_log_alpha = 3.0,
                               bool order_by_centroid = true);

// ---------------------------------------------------------------------------
// Flat key=value configuration

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

/// Applies recognised bank keys (rate, fmin, bins, bpo, gamma, hop, variant,
/// init, harmonics, seed); `consumed` collects the keys used.
FilterbankSpec apply_bank_keys(FilterbankSpec spec, const KeyValues& kv, std::vector<std::string>* consumed = nullptr);

/// Every key must be recognised; unknown keys throw std::invalid_argument.
TrainConfig train_config_from(const KeyValues& kv);

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

} // namespace afb
