#include "afb/error.hpp"
#include "afb/io.hpp"

#include <zlib.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>

namespace afb {

namespace {

constexpr char kMagic[4] = {'A', 'F', 'B', '1'};

using Tag = std::array<char, 4>;

constexpr Tag kHead{'H', 'E', 'A', 'D'};
constexpr Tag kLens{'L', 'E', 'N', 'S'};
constexpr Tag kFreq{'F', 'R', 'E', 'Q'};
constexpr Tag kReal{'R', 'E', 'A', 'L'};
constexpr Tag kImag{'I', 'M', 'A', 'G'};
constexpr Tag kLvar{'L', 'V', 'A', 'R'};
constexpr Tag kLvri{'L', 'V', 'R', 'I'};
constexpr Tag kBnrm{'B', 'N', 'R', 'M'};

std::string tag_name(const Tag& t) { return std::string(t.data(), 4); }

std::uint32_t checksum(std::span<const std::uint8_t> bytes)
{
    return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v)
    {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        u64(u);
    }
    void f32(float v)
    {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void bytes(const void* p, std::size_t n)
    {
        auto b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<std::uint8_t> out;

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i)
            out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, std::string where) : b_(bytes), where_(std::move(where)) {}

    std::span<const std::uint8_t> take(std::size_t n)
    {
        if (n > b_.size() - pos_)
            throw Error(Errc::truncated, "archive truncated in " + where_);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t get(int n)
    {
        auto s = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64()
    {
        std::uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    float f32()
    {
        std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
    std::string where_;
};

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::bad_archive, "invalid archive: " + what); }

std::string fmt_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string header_text(const FilterbankArchive& a)
{
    const FilterbankSpec& s = a.bank.spec;
    std::ostringstream h;
    h << "format=afb\n";
    h << "creator=afb 1.0.0\n";
    h << "source=" << a.source << "\n";
    h << "precision=" << (a.precision == WeightPrecision::f64 ? "f64" : "f32") << "\n";
    h << "variant=" << to_string(s.variant) << "\n";
    h << "init=" << to_string(s.init) << "\n";
    h << "rate=" << s.rate << "\n";
    h << "fmin=" << fmt_double(s.f_min) << "\n";
    h << "bins=" << s.n_bins << "\n";
    h << "bpo=" << s.n_bpo << "\n";
    h << "gamma=" << (s.gamma ? fmt_double(*s.gamma) : std::string("erb")) << "\n";
    h << "gamma_resolved=" << fmt_double(s.resolved_gamma()) << "\n";
    h << "hop=" << s.hop << "\n";
    h << "harmonics=";
    for (std::size_t i = 0; i < s.harmonics.size(); ++i)
        h << (i ? "," : "") << s.harmonics[i];
    h << "\n";
    h << "seed=" << s.seed << "\n";
    h << "n_filters=" << a.bank.n_bins() << "\n";
    h << "receptive_field=" << a.bank.receptive_field() << "\n";
    if (a.dropout) {
        h << "kl_scale=" << fmt_double(a.dropout->kl_scale) << "\n";
        h << "dropout_seed=" << a.dropout->rng_seed << "\n";
    }
    return h.str();
}

void put_matrix(Writer& w, const Matrix& m, WeightPrecision p)
{
    for (double v : m.flat()) {
        if (p == WeightPrecision::f64)
            w.f64(v);
        else
            w.f32(static_cast<float>(v));
    }
}

Matrix get_matrix(std::span<const std::uint8_t> payload, std::size_t rows, std::size_t cols, WeightPrecision p,
                  const std::string& name)
{
    std::size_t width = p == WeightPrecision::f64 ? 8 : 4;
    if (payload.size() != rows * cols * width)
        bad(name + " section size does not match the header shape");
    Reader r(payload, name);
    Matrix m(rows, cols);
    for (double& v : m.flat())
        v = p == WeightPrecision::f64 ? r.f64() : static_cast<double>(r.f32());
    return m;
}

template <class T>
T parse_number(const std::string& text, const std::string& key)
{
    T v{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        bad("header value for '" + key + "' is not a number");
    return v;
}

double parse_real(const std::string& text, const std::string& key)
{
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size())
        bad("header value for '" + key + "' is not a number");
    return v;
}

} // namespace

std::vector<std::uint8_t> serialize_archive(const FilterbankArchive& a)
{
    a.bank.validate();
    a.bn.validate();
    if (a.bn.n_bins() != a.bank.n_bins())
        throw std::invalid_argument("archive: batch-norm size differs from the bank");
    if (a.dropout)
        a.dropout->validate_against(a.bank);

    std::vector<std::pair<Tag, std::vector<std::uint8_t>>> sections;
    {
        std::string h = header_text(a);
        sections.emplace_back(kHead, std::vector<std::uint8_t>(h.begin(), h.end()));
    }
    {
        Writer w;
        for (auto l : a.bank.lengths)
            w.u64(l);
        for (auto o : a.bank.offsets)
            w.u64(o);
        sections.emplace_back(kLens, std::move(w.out));
    }
    {
        Writer w;
        for (double f : a.bank.frequencies)
            w.f64(f);
        sections.emplace_back(kFreq, std::move(w.out));
    }
    auto matrix_section = [&](const Tag& tag, const Matrix& m) {
        Writer w;
        put_matrix(w, m, a.precision);
        sections.emplace_back(tag, std::move(w.out));
    };
    matrix_section(kReal, a.bank.real);
    if (a.bank.imag)
        matrix_section(kImag, *a.bank.imag);
    if (a.dropout) {
        matrix_section(kLvar, a.dropout->log_var);
        if (a.dropout->log_var_imag)
            matrix_section(kLvri, *a.dropout->log_var_imag);
    }
    {
        Writer w;
        for (const auto* v : {&a.bn.scale, &a.bn.shift, &a.bn.running_mean, &a.bn.running_var})
            for (double x : *v)
                w.f64(x);
        w.f64(a.bn.momentum);
        w.f64(a.bn.epsilon);
        w.u32(a.bn.has_running_stats ? 1 : 0);
        sections.emplace_back(kBnrm, std::move(w.out));
    }

    Writer out;
    out.bytes(kMagic, 4);
    out.u32(kArchiveVersion);
    out.u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [tag, payload] : sections) {
        out.bytes(tag.data(), 4);
        out.u64(payload.size());
        out.bytes(payload.data(), payload.size());
        out.u32(checksum(payload));
    }
    return std::move(out.out);
}

FilterbankArchive parse_archive(std::span<const std::uint8_t> bytes, std::optional<Variant> expected_variant)
{
    Reader r(bytes, "file header");
    auto magic = r.take(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        bad("bad magic (not an .afb archive)");
    std::uint32_t version = r.u32();
    if (version != kArchiveVersion)
        throw Error(Errc::version_mismatch, "archive format version " + std::to_string(version) +
                                                " is not supported; this build reads version " +
                                                std::to_string(kArchiveVersion));
    std::uint32_t count = r.u32();
    if (count > 64)
        bad("implausible section count");

    std::map<Tag, std::span<const std::uint8_t>> found;
    const std::set<Tag> known{kHead, kLens, kFreq, kReal, kImag, kLvar, kLvri, kBnrm};
    for (std::uint32_t i = 0; i < count; ++i) {
        Tag tag;
        auto t = r.take(4);
        std::memcpy(tag.data(), t.data(), 4);
        if (!known.count(tag))
            bad("unknown section '" + tag_name(tag) + "'");
        if (found.count(tag))
            bad("duplicate section '" + tag_name(tag) + "'");
        std::uint64_t len = r.u64();
        if (len > bytes.size())
            throw Error(Errc::truncated, "archive truncated in section " + tag_name(tag));
        std::span<const std::uint8_t> payload;
        std::uint32_t stored = 0;
        try {
            payload = r.take(static_cast<std::size_t>(len));
            stored = r.u32();
        } catch (const Error&) {
            throw Error(Errc::truncated, "archive truncated in section " + tag_name(tag));
        }
        if (checksum(payload) != stored)
            throw Error(Errc::checksum, "checksum mismatch in section " + tag_name(tag));
        found[tag] = payload;
    }
    if (!r.done())
        bad("trailing bytes after the last section");
    for (const Tag& required : {kHead, kLens, kFreq, kReal, kBnrm})
        if (!found.count(required))
            bad("missing section '" + tag_name(required) + "'");

    KeyValues head;
    {
        auto p = found[kHead];
        head = parse_key_values(std::string(p.begin(), p.end()));
    }
    auto key = [&](const std::string& k) -> const std::string& {
        auto it = head.find(k);
        if (it == head.end())
            bad("header lacks '" + k + "'");
        return it->second;
    };
    if (key("format") != "afb")
        bad("header format is not afb");

    FilterbankArchive a;
    a.source = key("source");
    const std::string& prec = key("precision");
    if (prec == "f64")
        a.precision = WeightPrecision::f64;
    else if (prec == "f32")
        a.precision = WeightPrecision::f32;
    else
        bad("unknown weight precision '" + prec + "'");

    FilterbankSpec& s = a.bank.spec;
    try {
        s.variant = parse_variant(key("variant"));
        s.init = parse_init(key("init"));
    } catch (const std::invalid_argument& e) {
        bad(e.what());
    }
    s.rate = parse_number<int>(key("rate"), "rate");
    s.f_min = parse_real(key("fmin"), "fmin");
    s.n_bins = parse_number<std::size_t>(key("bins"), "bins");
    s.n_bpo = parse_number<std::size_t>(key("bpo"), "bpo");
    if (key("gamma") == "erb")
        s.gamma.reset();
    else
        s.gamma = parse_real(key("gamma"), "gamma");
    s.hop = parse_number<std::size_t>(key("hop"), "hop");
    s.harmonics.clear();
    {
        std::stringstream hs(key("harmonics"));
        std::string item;
        while (std::getline(hs, item, ','))
            s.harmonics.push_back(parse_number<int>(item, "harmonics"));
    }
    s.seed = parse_number<std::uint64_t>(key("seed"), "seed");
    std::size_t n = parse_number<std::size_t>(key("n_filters"), "n_filters");
    std::size_t l_max = parse_number<std::size_t>(key("receptive_field"), "receptive_field");
    if (n == 0 || l_max == 0 || n > (1u << 20) || l_max > (1u << 26))
        bad("implausible bank shape");

    bool has_imag = found.count(kImag) > 0;
    if (s.variant == Variant::hilbert && has_imag)
        throw Error(Errc::variant_mismatch, "archive declares the hilbert variant but stores imaginary rows");
    if (s.variant != Variant::hilbert && !has_imag)
        throw Error(Errc::variant_mismatch,
                    "archive declares the " + to_string(s.variant) + " variant but has no imaginary rows");
    if (expected_variant) {
        if (*expected_variant == Variant::hilbert && has_imag)
            throw Error(Errc::variant_mismatch, "expected a hilbert bank but the archive has an imaginary section");
        if (*expected_variant != s.variant)
            throw Error(Errc::variant_mismatch, "expected a " + to_string(*expected_variant) +
                                                    " bank, archive holds " + to_string(s.variant));
    }

    {
        auto p = found[kLens];
        if (p.size() != 16 * n)
            bad("LENS section size does not match the header shape");
        Reader lr(p, "LENS");
        a.bank.lengths.resize(n);
        a.bank.offsets.resize(n);
        for (auto& l : a.bank.lengths)
            l = lr.u64();
        for (auto& o : a.bank.offsets)
            o = lr.u64();
    }
    {
        auto p = found[kFreq];
        if (p.size() != 8 * n)
            bad("FREQ section size does not match the header shape");
        Reader fr(p, "FREQ");
        a.bank.frequencies.resize(n);
        for (auto& f : a.bank.frequencies)
            f = fr.f64();
    }
    a.bank.real = get_matrix(found[kReal], n, l_max, a.precision, "REAL");
    if (has_imag)
        a.bank.imag = get_matrix(found[kImag], n, l_max, a.precision, "IMAG");

    if (found.count(kLvri) && !found.count(kLvar))
        bad("LVRI section without LVAR");
    if (found.count(kLvar)) {
        VarDropoutState d;
        d.log_var = get_matrix(found[kLvar], n, l_max, a.precision, "LVAR");
        if (found.count(kLvri))
            d.log_var_imag = get_matrix(found[kLvri], n, l_max, a.precision, "LVRI");
        d.kl_scale = parse_real(key("kl_scale"), "kl_scale");
        d.rng_seed = parse_number<std::uint64_t>(key("dropout_seed"), "dropout_seed");
        a.dropout = std::move(d);
    }
    {
        auto p = found[kBnrm];
        if (p.size() != 32 * n + 20)
            bad("BNRM section size does not match the header shape");
        Reader br(p, "BNRM");
        a.bn = BatchNormState(n);
        for (auto* v : {&a.bn.scale, &a.bn.shift, &a.bn.running_mean, &a.bn.running_var})
            for (double& x : *v)
                x = br.f64();
        a.bn.momentum = br.f64();
        a.bn.epsilon = br.f64();
        std::uint32_t flag = br.u32();
        if (flag > 1)
            bad("BNRM running-stats flag");
        a.bn.has_running_stats = flag == 1;
    }

    try {
        s.validate();
        a.bank.validate();
        a.bn.validate();
        if (a.dropout)
            a.dropout->validate_against(a.bank);
    } catch (const std::invalid_argument& e) {
        bad(e.what());
    }
    if (s.n_bins != n)
        bad("header bin count disagrees with the stored rows");
    return a;
}

void save_filterbank(const std::filesystem::path& path, const FilterbankArchive& archive)
{
    write_file_atomic(path, serialize_archive(archive));
}

FilterbankArchive load_filterbank(const std::filesystem::path& path, std::optional<Variant> expected_variant)
{
    return parse_archive(read_file(path), expected_variant);
}

} // namespace afb
