#include "afb/error.hpp"
#include "afb/io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <numbers>

using namespace afb;
using afb::testing::TempDir;

namespace {

Errc code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no afb::Error thrown";
    return Errc::usage;
}

std::string message_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v)
{
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        b.push_back((v >> (8 * i)) & 0xff);
    }
}

// Hand-assembled 16-bit PCM file, independent of encode_wav.
std::vector<std::uint8_t> pcm16_file(const std::vector<std::int16_t>& interleaved, int channels, int rate)
{
    std::vector<std::uint8_t> b;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
    for (char c : std::string("RIFF")) b.push_back(c);
    put_u32(b, 36 + data_bytes);
    for (char c : std::string("WAVEfmt ")) b.push_back(c);
    put_u32(b, 16);
    put_u16(b, 1);
    put_u16(b, static_cast<std::uint16_t>(channels));
    put_u32(b, static_cast<std::uint32_t>(rate));
    put_u32(b, static_cast<std::uint32_t>(rate * channels * 2));
    put_u16(b, static_cast<std::uint16_t>(channels * 2));
    put_u16(b, 16);
    for (char c : std::string("data")) b.push_back(c);
    put_u32(b, data_bytes);
    for (std::int16_t s : interleaved) {
        put_u16(b, static_cast<std::uint16_t>(s));
    }
    return b;
}

FilterbankSpec small_spec(Variant v, InitKind init)
{
    FilterbankSpec s;
    s.f_min = 130.8127826502993;
    s.n_bins = 12;
    s.n_bpo = 12;
    s.variant = v;
    s.init = init;
    s.seed = 3;
    return s;
}

FilterbankArchive random_archive(Variant v, InitKind init, bool with_dropout, WeightPrecision p, Rng& rng)
{
    FilterbankArchive a;
    a.bank = design_filterbank(small_spec(v, init));
    for (double& w : a.bank.real.flat()) {
        w += w != 0.0 ? 1e-3 * rng.normal() : 0.0;
    }
    a.bn = BatchNormState(a.bank.n_bins());
    for (std::size_t i = 0; i < a.bank.n_bins(); ++i) {
        a.bn.scale[i] = 1.0 + rng.normal();
        a.bn.shift[i] = rng.normal();
        a.bn.running_mean[i] = rng.normal();
        a.bn.running_var[i] = rng.uniform();
    }
    a.bn.has_running_stats = true;
    if (with_dropout) {
        a.dropout = VarDropoutState::for_bank(a.bank, -10.0, 0.01, 9);
        for (double& lv : a.dropout->log_var.flat()) {
            lv += rng.normal();
        }
    }
    a.precision = p;
    return a;
}

struct Section {
    std::string tag;
    std::size_t payload_offset = 0;
    std::size_t length = 0;
};

// Walks the container layout: magic, version, count, then tag/length/payload/crc.
std::vector<Section> sections_of(const std::vector<std::uint8_t>& bytes)
{
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 8, 4);
    std::vector<Section> out;
    std::size_t pos = 12;
    for (std::uint32_t i = 0; i < count; ++i) {
        Section s;
        s.tag.assign(reinterpret_cast<const char*>(bytes.data() + pos), 4);
        std::uint64_t len = 0;
        std::memcpy(&len, bytes.data() + pos + 4, 8);
        s.payload_offset = pos + 12;
        s.length = static_cast<std::size_t>(len);
        out.push_back(s);
        pos = s.payload_offset + s.length + 4;
    }
    EXPECT_EQ(pos, bytes.size());
    return out;
}

} // namespace

TEST(Wav, ImpulseIsScaledSpike)
{
    std::vector<std::int16_t> pcm(100, 0);
    pcm[40] = 1;
    const auto bytes = pcm16_file(pcm, 1, 16000);
    const RealSignal s = decode_wav(bytes);
    ASSERT_EQ(s.samples.size(), 100u);
    EXPECT_EQ(s.rate, 16000);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_EQ(s.samples[i], i == 40 ? 1.0 / 32768.0 : 0.0);
    }
}

TEST(Wav, OppositeStereoChannelsCancel)
{
    Rng rng(1);
    std::vector<std::int16_t> pcm;
    for (int i = 0; i < 500; ++i) {
        const auto v = static_cast<std::int16_t>(rng.uniform(-20000, 20000));
        pcm.push_back(v);
        pcm.push_back(static_cast<std::int16_t>(-v));
    }
    const RealSignal s = decode_wav(pcm16_file(pcm, 2, 16000));
    ASSERT_EQ(s.samples.size(), 500u);
    for (double x : s.samples) {
        EXPECT_EQ(x, 0.0);
    }
}

TEST(Wav, ResamplesA44kSine)
{
    TempDir dir;
    const RealSignal src = afb::testing::sine(1000.0, 1.0, 44100, 0.5);
    write_wav(dir / "sine.wav", src, WavEncoding::float32);
    const RealSignal s = read_wav(dir / "sine.wav");
    EXPECT_EQ(s.rate, 16000);
    ASSERT_NEAR(static_cast<double>(s.samples.size()), 16000.0, 1.0);
    const RealSignal ref = afb::testing::sine(1000.0, 1.0, 16000, 0.5);
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 200; i + 200 < s.samples.size(); ++i) {
        xy += s.samples[i] * ref.samples[i];
        xx += s.samples[i] * s.samples[i];
        yy += ref.samples[i] * ref.samples[i];
    }
    EXPECT_GT(xy / std::sqrt(xx * yy), 0.999);

    const RealSignal kept = read_wav(dir / "sine.wav", true);
    EXPECT_EQ(kept.rate, 44100);
    EXPECT_EQ(kept.samples.size(), 44100u);
}

TEST(Wav, EncodingsRoundTrip)
{
    Rng rng(2);
    std::vector<double> x(300);
    for (double& v : x) {
        v = rng.uniform(-0.9, 0.9);
    }
    const std::vector<std::vector<double>> ch{x};
    struct Case {
        WavEncoding enc;
        double tol;
    };
    for (const Case c : {Case{WavEncoding::pcm16, 1.0 / 32768}, Case{WavEncoding::pcm24, 1.0 / 8388608},
                         Case{WavEncoding::pcm32, 1.0 / 2147483648.0}, Case{WavEncoding::float32, 1e-7}}) {
        const RealSignal s = decode_wav(encode_wav(ch, 22050, c.enc));
        EXPECT_EQ(s.rate, 22050);
        ASSERT_EQ(s.samples.size(), x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(s.samples[i], x[i], c.tol);
        }
    }
}

TEST(Wav, DistinctErrors)
{
    const auto good = pcm16_file({1, 2, 3}, 1, 16000);
    EXPECT_EQ(code_of([&] { decode_wav(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)); }),
              Errc::malformed_riff);
    auto not_riff = good;
    not_riff[0] = 'X';
    EXPECT_EQ(code_of([&] { decode_wav(not_riff); }), Errc::malformed_riff);

    auto alaw = good;
    alaw[20] = 6;  // format tag
    EXPECT_EQ(code_of([&] { decode_wav(alaw); }), Errc::unsupported_codec);

    const auto empty = pcm16_file({}, 1, 16000);
    EXPECT_EQ(code_of([&] { decode_wav(empty); }), Errc::empty_audio);

    TempDir dir;
    EXPECT_EQ(code_of([&] { read_wav(dir / "missing.wav"); }), Errc::io);
}

TEST(Archive, RoundTripEveryVariantAndPrecision)
{
    Rng rng(5);
    for (Variant v : {Variant::classic, Variant::hilbert, Variant::fixed}) {
        for (InitKind init : {InitKind::vqt, InitKind::comb, InitKind::random}) {
            for (WeightPrecision p : {WeightPrecision::f64, WeightPrecision::f32}) {
                const bool dropout = v != Variant::fixed;
                const FilterbankArchive a = random_archive(v, init, dropout, p, rng);
                const auto bytes = serialize_archive(a);
                const FilterbankArchive b = parse_archive(bytes);
                EXPECT_EQ(serialize_archive(b), bytes);
                EXPECT_EQ(b.bank.spec.variant, v);
                EXPECT_EQ(b.bank.spec.init, init);
                EXPECT_EQ(b.bank.lengths, a.bank.lengths);
                EXPECT_EQ(b.bank.offsets, a.bank.offsets);
                EXPECT_EQ(b.bank.frequencies, a.bank.frequencies);
                EXPECT_EQ(b.bn, a.bn);
                EXPECT_EQ(b.precision, p);
                EXPECT_EQ(b.bank.imag.has_value(), v != Variant::hilbert);
                if (p == WeightPrecision::f64) {
                    EXPECT_EQ(b.bank.real, a.bank.real);
                    EXPECT_EQ(b.bank.imag, a.bank.imag);
                    EXPECT_EQ(b.dropout.has_value(), dropout);
                    if (dropout) {
                        EXPECT_EQ(b.dropout->log_var, a.dropout->log_var);
                        EXPECT_EQ(b.dropout->log_var_imag, a.dropout->log_var_imag);
                        EXPECT_EQ(b.dropout->kl_scale, a.dropout->kl_scale);
                    }
                } else {
                    for (std::size_t i = 0; i < a.bank.real.size(); ++i) {
                        ASSERT_EQ(b.bank.real.flat()[i],
                                  static_cast<double>(static_cast<float>(a.bank.real.flat()[i])));
                    }
                }
            }
        }
    }
}

TEST(Archive, HilbertHasNoImagSection)
{
    Rng rng(1);
    const auto bytes = serialize_archive(random_archive(Variant::hilbert, InitKind::random, false,
                                                        WeightPrecision::f64, rng));
    std::vector<std::string> tags;
    for (const auto& s : sections_of(bytes)) {
        tags.push_back(s.tag);
    }
    EXPECT_EQ(tags, (std::vector<std::string>{"HEAD", "LENS", "FREQ", "REAL", "BNRM"}));
}

TEST(Archive, CorruptedPayloadNamesTheSection)
{
    Rng rng(3);
    const auto bytes = serialize_archive(random_archive(Variant::classic, InitKind::vqt, true,
                                                        WeightPrecision::f64, rng));
    for (const Section& s : sections_of(bytes)) {
        auto bad = bytes;
        bad[s.payload_offset + s.length / 2] ^= 0x10;
        EXPECT_EQ(code_of([&] { parse_archive(bad); }), Errc::checksum) << s.tag;
        EXPECT_NE(message_of([&] { parse_archive(bad); }).find(s.tag), std::string::npos) << s.tag;
    }
}

TEST(Archive, VersionMismatchNamesBothVersions)
{
    Rng rng(3);
    auto bytes = serialize_archive(random_archive(Variant::hilbert, InitKind::vqt, false, WeightPrecision::f64, rng));
    bytes[4] = 7;
    EXPECT_EQ(code_of([&] { parse_archive(bytes); }), Errc::version_mismatch);
    const std::string msg = message_of([&] { parse_archive(bytes); });
    EXPECT_NE(msg.find('7'), std::string::npos) << msg;
    EXPECT_NE(msg.find('1'), std::string::npos) << msg;
}

TEST(Archive, VariantMismatch)
{
    Rng rng(3);
    const auto classic = serialize_archive(random_archive(Variant::classic, InitKind::vqt, false,
                                                          WeightPrecision::f64, rng));
    EXPECT_EQ(code_of([&] { parse_archive(classic, Variant::hilbert); }), Errc::variant_mismatch);
    EXPECT_NO_THROW(parse_archive(classic, Variant::classic));
}

TEST(Archive, TruncationAndGarbage)
{
    Rng rng(3);
    const auto bytes = serialize_archive(random_archive(Variant::hilbert, InitKind::vqt, false,
                                                        WeightPrecision::f64, rng));
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{13}, bytes.size() / 2, bytes.size() - 1}) {
        const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        const Errc c = code_of([&] { parse_archive(part); });
        EXPECT_TRUE(c == Errc::truncated || c == Errc::bad_archive) << cut;
    }
    EXPECT_EQ(code_of([&] {
                  parse_archive(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1));
              }),
              Errc::truncated);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(code_of([&] { parse_archive(magic); }), Errc::bad_archive);
    auto extra = bytes;
    extra.push_back(0);
    EXPECT_EQ(code_of([&] { parse_archive(extra); }), Errc::bad_archive);
}

TEST(Archive, FileRoundTripAndMissingFile)
{
    TempDir dir;
    Rng rng(8);
    const FilterbankArchive a = random_archive(Variant::hilbert, InitKind::comb, true, WeightPrecision::f64, rng);
    save_filterbank(dir / "bank.afb", a);
    const FilterbankArchive b = load_filterbank(dir / "bank.afb", Variant::hilbert);
    EXPECT_EQ(b.bank.real, a.bank.real);
    EXPECT_EQ(code_of([&] { load_filterbank(dir / "none.afb"); }), Errc::io);
}

TEST(Analysis, VqtCentroidsNearCenterFrequencies)
{
    FilterbankSpec s;  // full-size bank, the one the exports are usually run on
    s.variant = Variant::hilbert;
    const Filterbank fb = design_filterbank(s);
    const AnalysisTable t = analyze_filterbank(fb, fb.receptive_field(), nullptr, 3.0, false);
    ASSERT_EQ(t.rows.size(), fb.n_bins());
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        EXPECT_EQ(t.rows[mu].filter, mu);
        if (fb.frequencies[mu] > 100.0) {
            EXPECT_NEAR(t.rows[mu].centroid / fb.frequencies[mu], 1.0, 0.05) << mu;
        }
        EXPECT_LE(t.rows[mu].negative_peak_db, -100.0) << mu;
    }
}

TEST(Analysis, CombPeaksAtHarmonics)
{
    FilterbankSpec s = small_spec(Variant::classic, InitKind::comb);
    const Filterbank fb = design_filterbank(s);
    const std::size_t res = 1 << 16;
    const AnalysisTable t = analyze_filterbank(fb, res, nullptr, 3.0, false);
    const double bin_hz = 16000.0 / res;
    for (std::size_t mu = 0; mu < fb.n_bins(); ++mu) {
        ASSERT_EQ(t.rows[mu].peaks.size(), 5u);
        std::vector<double> f;
        for (const auto& p : t.rows[mu].peaks) {
            f.push_back(p.frequency);
        }
        std::sort(f.begin(), f.end());
        for (int h = 1; h <= 5; ++h) {
            EXPECT_NEAR(f[h - 1], h * fb.frequencies[mu], 2.0 * bin_hz + 0.01 * fb.frequencies[mu]) << mu;
        }
    }
}

TEST(Analysis, OrderingAndPrunableFraction)
{
    FilterbankSpec s = small_spec(Variant::hilbert, InitKind::random);
    Filterbank fb = design_filterbank(s);
    const AnalysisTable t = analyze_filterbank(fb, fb.receptive_field());
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
        EXPECT_LE(t.rows[i - 1].centroid, t.rows[i].centroid);
    }
    VarDropoutState d = VarDropoutState::for_bank(fb, 50.0, 0.01, 1);
    const AnalysisTable all = analyze_filterbank(fb, fb.receptive_field(), &d);
    for (const auto& r : all.rows) {
        EXPECT_DOUBLE_EQ(r.prunable_fraction, 1.0);
    }
    EXPECT_THROW(analyze_filterbank(fb, fb.receptive_field() - 1), std::invalid_argument);
}

TEST(Analysis, ExportWritesBothFiles)
{
    TempDir dir;
    const Filterbank fb = design_filterbank(small_spec(Variant::hilbert, InitKind::vqt));
    const std::size_t res = fb.receptive_field();
    export_responses(fb, res, dir / "out");
    std::ifstream resp(dir / "out.responses.tsv"), table(dir / "out.table.tsv");
    ASSERT_TRUE(resp && table);
    // Header row of frequencies, then one row of res dB values per filter.
    std::size_t lines = 0;
    for (std::string l; std::getline(resp, l);) {
        EXPECT_EQ(static_cast<std::size_t>(std::count(l.begin(), l.end(), '\t')), res);
        ++lines;
    }
    EXPECT_EQ(lines, fb.n_bins() + 1);
    std::string header;
    std::getline(table, header);
    EXPECT_NE(header.find("centroid"), std::string::npos);
}

TEST(FeatureMapFile, RoundTrip)
{
    Rng rng(4);
    FeatureMap m;
    m.values = Matrix(5, 7);
    for (double& v : m.values.flat()) {
        v = rng.normal();
    }
    m.kind = FeatureKind::log;
    m.hop = 256;
    m.rate = 22050;
    const auto bytes = serialize_feature_map(m);
    const std::string head(bytes.begin(), std::find(bytes.begin(), bytes.end(), '\n'));
    EXPECT_EQ(head, "AFM1 bins=5 frames=7 hop=256 rate=22050 kind=log dtype=f64le");
    EXPECT_EQ(bytes.size(), head.size() + 1 + 35 * 8);
    const FeatureMap back = parse_feature_map(bytes);
    EXPECT_EQ(back.values, m.values);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.hop, m.hop);
    EXPECT_EQ(back.rate, m.rate);
    EXPECT_THROW(parse_feature_map(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), Error);
}

TEST(Config, KeyValues)
{
    const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
    EXPECT_EQ(kv.at("a"), "1");
    EXPECT_EQ(kv.at("b"), "two");
    EXPECT_THROW(parse_key_values("a=1\na=2\n"), std::invalid_argument);
    EXPECT_THROW(parse_key_values("novalue\n"), std::invalid_argument);
}

TEST(Config, BankKeys)
{
    const FilterbankSpec s = apply_bank_keys(FilterbankSpec{}, parse_key_values(
        "fmin=55\nbins=24\nbpo=12\ngamma=erb\nhop=256\nvariant=classic\ninit=comb\nharmonics=1,2,3\nseed=4\n"));
    EXPECT_EQ(s.f_min, 55.0);
    EXPECT_EQ(s.n_bins, 24u);
    EXPECT_EQ(s.n_bpo, 12u);
    EXPECT_FALSE(s.gamma);
    EXPECT_EQ(s.hop, 256u);
    EXPECT_EQ(s.variant, Variant::classic);
    EXPECT_EQ(s.init, InitKind::comb);
    EXPECT_EQ(s.harmonics, (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(s.seed, 4u);
    EXPECT_EQ(apply_bank_keys(FilterbankSpec{}, {{"gamma", "2.5"}}).gamma, 2.5);
    EXPECT_THROW(apply_bank_keys(FilterbankSpec{}, {{"bins", "many"}}), std::invalid_argument);
}

TEST(Config, TrainConfig)
{
    const TrainConfig c = train_config_from(parse_key_values(
        "experiment=cl+comb+var\nsteps=10\nlr=0.01\nfilter_lr=0.001\nkl_scale=0.001\nbank.bins=24\nsynth.duration=1.5\n"));
    EXPECT_EQ(c.experiment, "cl+comb+var");
    EXPECT_EQ(c.steps, 10u);
    EXPECT_EQ(c.lr, 0.01);
    EXPECT_EQ(c.filter_lr, 0.001);
    EXPECT_EQ(c.kl_scale, 0.001);
    EXPECT_EQ(c.bank.n_bins, 24u);
    EXPECT_EQ(c.synth.duration, 1.5);
    EXPECT_THROW(train_config_from({{"stepz", "1"}}), std::invalid_argument);
    EXPECT_THROW(train_config_from({{"bank.variant", "hilbert"}}), std::invalid_argument);
    EXPECT_THROW(train_config_from({{"experiment", "hb+vqt"}, {"kl_scale", "0.1"}}), std::invalid_argument);
}
