#include "afb/error.hpp"
#include "afb/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace afb {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const std::uint8_t* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

[[noreturn]] void malformed(const std::string& what) { throw Error(Errc::malformed_riff, "malformed RIFF: " + what); }

struct Format {
    std::uint16_t tag = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t block_align = 0;
    std::uint16_t bits = 0;
};

double decode_sample(const std::uint8_t* p, const Format& fmt)
{
    if (fmt.tag == kFormatFloat) {
        float f;
        std::uint32_t u = le32(p);
        std::memcpy(&f, &u, sizeof f);
        return f;
    }
    switch (fmt.bits) {
    case 16:
        return static_cast<std::int16_t>(le16(p)) / 32768.0;
    case 24: {
        std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (v & 0x800000)
            v -= 0x1000000;
        return v / 8388608.0;
    }
    default:
        return static_cast<std::int32_t>(le32(p)) / 2147483648.0;
    }
}

} // namespace

RealSignal decode_wav(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        malformed("missing RIFF/WAVE header");

    std::optional<Format> fmt;
    std::optional<std::span<const std::uint8_t>> data;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* chunk = bytes.data() + pos;
        std::size_t size = le32(chunk + 4);
        std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || body + size > bytes.size())
                malformed("short fmt chunk");
            const std::uint8_t* f = bytes.data() + body;
            Format parsed;
            parsed.tag = le16(f);
            parsed.channels = le16(f + 2);
            parsed.rate = le32(f + 4);
            parsed.block_align = le16(f + 12);
            parsed.bits = le16(f + 14);
            if (parsed.tag == kFormatExtensible) {
                if (size < 40)
                    malformed("short extensible fmt chunk");
                parsed.tag = le16(f + 24);
            }
            fmt = parsed;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!fmt)
                malformed("data chunk before fmt chunk");
            // Tolerate writers that leave the data size unfinished.
            size = std::min(size, bytes.size() - body);
            data = bytes.subspan(body, size);
            break;
        }
        if (body + size > bytes.size())
            malformed("chunk overruns file");
        pos = body + size + (size & 1);
    }
    if (!fmt)
        malformed("no fmt chunk");
    if (!data)
        malformed("no data chunk");

    bool pcm_ok = fmt->tag == kFormatPcm && (fmt->bits == 16 || fmt->bits == 24 || fmt->bits == 32);
    bool float_ok = fmt->tag == kFormatFloat && fmt->bits == 32;
    if (!pcm_ok && !float_ok)
        throw Error(Errc::unsupported_codec, "unsupported codec: format tag " + std::to_string(fmt->tag) + ", " +
                                                 std::to_string(fmt->bits) + " bits");
    if (fmt->channels != 1 && fmt->channels != 2)
        throw Error(Errc::unsupported_codec, "unsupported channel count " + std::to_string(fmt->channels));
    if (fmt->rate == 0 || fmt->rate > 1'000'000)
        malformed("invalid sample rate");
    std::size_t width = fmt->bits / 8;
    if (fmt->block_align != width * fmt->channels)
        malformed("block alignment does not match format");

    std::size_t frames = data->size() / fmt->block_align;
    if (frames == 0)
        throw Error(Errc::empty_audio, "WAV file contains no audio frames");

    RealSignal out;
    out.rate = static_cast<int>(fmt->rate);
    out.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const std::uint8_t* p = data->data() + i * fmt->block_align;
        double v = decode_sample(p, *fmt);
        if (fmt->channels == 2)
            v = 0.5 * (v + decode_sample(p + width, *fmt));
        if (!std::isfinite(v))
            throw Error(Errc::non_finite, "WAV file contains a non-finite sample");
        out.samples[i] = v;
    }
    return out;
}

RealSignal read_wav(const std::filesystem::path& path, bool keep_rate, int target_rate)
{
    RealSignal s = decode_wav(read_file(path));
    if (!keep_rate && s.rate != target_rate)
        s = resample(s, target_rate);
    return s;
}

std::vector<std::uint8_t> encode_wav(std::span<const std::vector<double>> channels, int rate, WavEncoding encoding)
{
    if (channels.empty() || channels.size() > 2)
        throw std::invalid_argument("encode_wav: one or two channels required");
    std::size_t frames = channels[0].size();
    for (const auto& c : channels)
        if (c.size() != frames)
            throw std::invalid_argument("encode_wav: channel lengths differ");

    std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : encoding == WavEncoding::pcm24 ? 24 : 32;
    std::uint16_t tag = encoding == WavEncoding::float32 ? kFormatFloat : kFormatPcm;
    auto n_ch = static_cast<std::uint16_t>(channels.size());
    std::uint16_t align = static_cast<std::uint16_t>(n_ch * bits / 8);
    auto data_size = static_cast<std::uint32_t>(frames * align);

    std::vector<std::uint8_t> out;
    out.reserve(44 + data_size);
    put_tag(out, "RIFF");
    put32(out, 36 + data_size);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put32(out, 16);
    put16(out, tag);
    put16(out, n_ch);
    put32(out, static_cast<std::uint32_t>(rate));
    put32(out, static_cast<std::uint32_t>(rate) * align);
    put16(out, align);
    put16(out, bits);
    put_tag(out, "data");
    put32(out, data_size);

    auto quantize = [](double v, double full) {
        double q = std::round(v * full);
        return static_cast<std::int64_t>(std::clamp(q, -full, full - 1));
    };
    for (std::size_t i = 0; i < frames; ++i) {
        for (const auto& c : channels) {
            double v = c[i];
            switch (encoding) {
            case WavEncoding::pcm16:
                put16(out, static_cast<std::uint16_t>(quantize(v, 32768.0)));
                break;
            case WavEncoding::pcm24: {
                auto q = static_cast<std::uint32_t>(quantize(v, 8388608.0));
                for (int b = 0; b < 3; ++b)
                    out.push_back(static_cast<std::uint8_t>(q >> (8 * b)));
                break;
            }
            case WavEncoding::pcm32:
                put32(out, static_cast<std::uint32_t>(quantize(v, 2147483648.0)));
                break;
            case WavEncoding::float32: {
                float f = static_cast<float>(v);
                std::uint32_t u;
                std::memcpy(&u, &f, sizeof u);
                put32(out, u);
                break;
            }
            }
        }
    }
    return out;
}

void write_wav(const std::filesystem::path& path, const RealSignal& signal, WavEncoding encoding)
{
    std::vector<std::vector<double>> channels{signal.samples};
    write_file_atomic(path, encode_wav(channels, signal.rate, encoding));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw Error(Errc::io, "read failed for " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(Errc::io, "cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out)
            throw Error(Errc::io, "write failed for " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(Errc::io, "cannot move into place: " + path.string());
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text)
{
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace afb
