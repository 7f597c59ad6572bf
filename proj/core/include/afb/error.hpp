#pragma once

#include <stdexcept>
#include <string>

namespace afb {

/// Failure classes surfaced by the library. Each maps onto one CLI exit code.
enum class Errc {
    usage,
    io,
    malformed_riff,
    unsupported_codec,
    empty_audio,
    bad_archive,
    truncated,
    checksum,
    version_mismatch,
    variant_mismatch,
    non_finite,
    negative_variance,
    divergence,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// 0 ok, 2 usage, 3 io, 4 format, 5 numeric failure.
constexpr int exit_code(Errc code) noexcept
{
    switch (code) {
    case Errc::usage:
        return 2;
    case Errc::io:
        return 3;
    case Errc::malformed_riff:
    case Errc::unsupported_codec:
    case Errc::empty_audio:
    case Errc::bad_archive:
    case Errc::truncated:
    case Errc::checksum:
    case Errc::version_mismatch:
    case Errc::variant_mismatch:
        return 4;
    case Errc::non_finite:
    case Errc::negative_variance:
    case Errc::divergence:
        return 5;
    }
    return 1;
}

const char* errc_name(Errc code) noexcept;

} // namespace afb
