#include "cli.hpp"

#include "afb/error.hpp"
#include "afb/frontend.hpp"
#include "afb/io.hpp"
#include "afb/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace afb {

namespace {

std::string fmt(double v, const char* spec = "%.6g")
{
    char buf[48];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

struct DesignArgs {
    std::string config;
    std::string output = "bank.afb";
    std::optional<double> fmin;
    std::optional<std::size_t> bins, bpo, hop;
    std::optional<int> rate;
    std::optional<std::string> gamma, variant, init, harmonics;
    std::optional<std::uint64_t> seed;
    std::string precision = "f64";
};

int cmd_design(const DesignArgs& a, std::ostream& out)
{
    KeyValues kv;
    if (!a.config.empty())
        kv = read_key_values(a.config);
    auto set = [&](const char* key, const auto& opt) {
        if (opt) {
            if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>)
                kv[key] = *opt;
            else if constexpr (std::is_floating_point_v<std::decay_t<decltype(*opt)>>)
                kv[key] = fmt(*opt, "%.17g");
            else
                kv[key] = std::to_string(*opt);
        }
    };
    set("fmin", a.fmin);
    set("bins", a.bins);
    set("bpo", a.bpo);
    set("hop", a.hop);
    set("rate", a.rate);
    set("gamma", a.gamma);
    set("variant", a.variant);
    set("init", a.init);
    set("harmonics", a.harmonics);
    set("seed", a.seed);

    std::vector<std::string> used;
    FilterbankSpec spec = apply_bank_keys(FilterbankSpec{}, kv, &used);
    for (const auto& [k, v] : kv)
        if (std::find(used.begin(), used.end(), k) == used.end())
            throw std::invalid_argument("design: unknown key '" + k + "'");

    FilterbankArchive archive;
    archive.bank = design_filterbank(spec);
    archive.bn = BatchNormState::identity(archive.bank.n_bins());
    archive.precision = a.precision == "f32" ? WeightPrecision::f32 : WeightPrecision::f64;
    archive.source = "design";
    save_filterbank(a.output, archive);
    out << "wrote " << a.output << ": " << archive.bank.n_bins() << " filters, receptive field "
        << archive.bank.receptive_field() << ", gamma " << fmt(spec.resolved_gamma()) << " Hz\n";
    return 0;
}

struct FeaturizeArgs {
    std::string wav, bank, output, kind = "normalized";
    bool keep_rate = false;
};

int cmd_featurize(const FeaturizeArgs& a, std::ostream& out)
{
    FilterbankArchive archive = load_filterbank(a.bank);
    const Filterbank& fb = archive.bank;
    RealSignal signal = read_wav(a.wav, a.keep_rate, fb.spec.rate);
    if (signal.rate != fb.spec.rate)
        throw Error(Errc::usage, "signal rate " + std::to_string(signal.rate) + " differs from bank rate " +
                                     std::to_string(fb.spec.rate));

    FeatureMap map;
    const FeatureKind kind = parse_feature_kind(a.kind);
    if (kind == FeatureKind::normalized) {
        std::vector<RealSignal> batch{std::move(signal)};
        map = frontend_forward(batch, fb, archive.bn, DropoutSettings{}, Mode::eval).features.front();
    } else {
        map = filterbank_magnitude(signal, fb);
        if (kind == FeatureKind::log)
            map = log_compress(map);
    }
    std::string output = a.output;
    if (output.empty())
        output = std::filesystem::path(a.wav).replace_extension(".afm").string();
    write_feature_map(output, map);
    out << "wrote " << output << ": " << map.n_bins() << " bins x " << map.n_frames() << " frames ("
        << to_string(map.kind) << ")\n";
    return 0;
}

struct TrainArgs {
    std::string config, out_dir = ".";
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err)
{
    KeyValues kv = read_key_values(a.config);
    if (a.steps)
        kv["steps"] = std::to_string(*a.steps);
    if (a.seed)
        kv["seed"] = std::to_string(*a.seed);
    TrainConfig cfg = train_config_from(kv);

    std::filesystem::create_directories(a.out_dir);
    TrainReport report = run_experiment(cfg);
    const std::filesystem::path dir(a.out_dir);
    write_file_atomic(dir / "report.jsonl", report.to_jsonl());

    FilterbankArchive archive;
    archive.bank = report.bank;
    archive.bn = report.bn;
    archive.dropout = report.dropout_state;
    archive.source = "train " + report.experiment;
    save_filterbank(dir / "final.afb", archive);

    if (report.diverged_at) {
        err << "training diverged at step " << *report.diverged_at << "\n";
        return exit_code(Errc::divergence);
    }
    const ReportRecord& last = report.final_record();
    out << report.experiment << ": step " << last.step << " loss " << fmt(last.loss) << " f1 " << fmt(last.f1, "%.4f");
    if (report.prune)
        out << " prunable " << fmt(report.prune->sparsity, "%.4f") << " feature change "
            << fmt(report.prune->feature_change, "%.3e");
    out << "\n";
    return 0;
}

struct AnalyzeArgs {
    std::string bank, prefix;
    std::size_t resolution = 0;
    double threshold = 3.0;
    bool unsorted = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out)
{
    FilterbankArchive archive = load_filterbank(a.bank);
    std::size_t resolution = a.resolution ? a.resolution : archive.bank.receptive_field();
    std::string prefix = a.prefix;
    if (prefix.empty())
        prefix = std::filesystem::path(a.bank).replace_extension().string();
    const VarDropoutState* state = archive.dropout ? &*archive.dropout : nullptr;
    AnalysisTable table = export_responses(archive.bank, resolution, prefix, state, a.threshold, !a.unsorted);
    out << "wrote " << prefix << ".responses.tsv and " << prefix << ".table.tsv (" << table.rows.size()
        << " filters, resolution " << resolution << ")\n";
    return 0;
}

struct PruneArgs {
    std::string bank, output;
    double threshold = 3.0;
};

int cmd_prune(const PruneArgs& a, std::ostream& out)
{
    FilterbankArchive archive = load_filterbank(a.bank);
    if (!archive.dropout)
        throw Error(Errc::usage, "prune: archive has no variational dropout state");
    PruneResult r = prune(archive.bank, *archive.dropout, a.threshold);
    archive.bank = r.bank;
    archive.source = "prune";
    save_filterbank(a.output, archive);
    out << "wrote " << a.output << ": zeroed " << fmt(100.0 * r.sparsity, "%.2f") << "% of weights at log alpha > "
        << fmt(a.threshold) << "\n";
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 7;
    std::size_t filters = 4;
    std::size_t samples = 48;
    double tolerance = 1e-4;
    bool verbose = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out)
{
    GradCheckConfig cfg;
    cfg.seed = a.seed;
    cfg.n_filters = a.filters;
    cfg.samples_per_case = a.samples;
    GradCheckReport r = gradient_check(cfg);
    if (a.verbose) {
        for (const auto& e : r.entries)
            out << e.case_id << '\t' << e.group << '\t' << fmt(e.analytic, "%.9e") << '\t' << fmt(e.numeric, "%.9e")
                << '\t' << fmt(e.rel_error, "%.3e") << "\n";
    }
    out << "checked " << r.entries.size() << " parameters\n";
    out << "max relative error: " << fmt(r.max_rel_error, "%.3e") << "\n";
    return r.max_rel_error <= a.tolerance ? 0 : exit_code(Errc::non_finite);
}

} // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Learnable analytic filterbank frontend"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "afb 1.0.0");

    DesignArgs design;
    auto* d = app.add_subcommand("design", "Design a filterbank and write an archive");
    d->add_option("--config", design.config, "key=value spec file");
    d->add_option("-o,--output", design.output, "Output archive");
    d->add_option("--fmin", design.fmin, "Lowest center frequency (Hz)");
    d->add_option("--bins", design.bins, "Number of filters");
    d->add_option("--bpo", design.bpo, "Bins per octave");
    d->add_option("--gamma", design.gamma, "Bandwidth offset in Hz, or 'erb'");
    d->add_option("--hop", design.hop, "Hop size (samples)");
    d->add_option("--rate", design.rate, "Sampling rate (Hz)");
    d->add_option("--variant", design.variant, "classic | hilbert | fixed");
    d->add_option("--init", design.init, "vqt | comb | random");
    d->add_option("--harmonics", design.harmonics, "Comma-separated comb harmonics");
    d->add_option("--seed", design.seed, "Seed for random init");
    d->add_option("--precision", design.precision, "Weight precision")->check(CLI::IsMember({"f64", "f32"}));

    FeaturizeArgs featurize;
    auto* f = app.add_subcommand("featurize", "Compute a feature map from a WAV file");
    f->add_option("wav", featurize.wav, "Input WAV")->required();
    f->add_option("bank", featurize.bank, "Filterbank archive")->required();
    f->add_option("-o,--output", featurize.output, "Output feature map (default: input path with .afm extension)");
    f->add_option("--kind", featurize.kind, "magnitude | log | normalized")
        ->check(CLI::IsMember({"magnitude", "log", "normalized"}));
    f->add_flag("--keep-rate", featurize.keep_rate, "Do not resample the input");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train on the synthetic pitch task");
    t->add_option("config", train.config, "key=value training config")->required();
    t->add_option("-o,--out-dir", train.out_dir, "Directory for report.jsonl and final.afb");
    t->add_option("--steps", train.steps, "Override the step count");
    t->add_option("--seed", train.seed, "Override the data seed");

    AnalyzeArgs analyze;
    auto* an = app.add_subcommand("analyze", "Export frequency responses and the analysis table");
    an->add_option("bank", analyze.bank, "Filterbank archive")->required();
    an->add_option("-o,--prefix", analyze.prefix, "Output prefix (default: archive path without extension)");
    an->add_option("--resolution", analyze.resolution, "FFT size (default: receptive field)");
    an->add_option("--threshold", analyze.threshold, "log alpha pruning threshold");
    an->add_flag("--unsorted", analyze.unsorted, "Keep filter order instead of sorting by centroid");

    PruneArgs pr;
    auto* p = app.add_subcommand("prune", "Zero weights with log alpha above a threshold");
    p->add_option("bank", pr.bank, "Filterbank archive with dropout state")->required();
    p->add_option("-o,--output", pr.output, "Output archive")->required();
    p->add_option("--threshold", pr.threshold, "log alpha threshold");

    GradcheckArgs gc;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    g->add_option("--seed", gc.seed, "Fixture seed");
    g->add_option("--filters", gc.filters, "Filters in the fixture bank");
    g->add_option("--samples", gc.samples, "Parameters sampled per case");
    g->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");
    g->add_flag("-v,--verbose", gc.verbose, "Print every sampled parameter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion& e) {
        out << e.what() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_code(Errc::usage);
    }

    try {
        if (d->parsed())
            return cmd_design(design, out);
        if (f->parsed())
            return cmd_featurize(featurize, out);
        if (t->parsed())
            return cmd_train(train, out, err);
        if (an->parsed())
            return cmd_analyze(analyze, out);
        if (p->parsed())
            return cmd_prune(pr, out);
        if (g->parsed())
            return cmd_gradcheck(gc, out);
    } catch (const Error& e) {
        err << "error (" << errc_name(e.code()) << "): " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::invalid_argument& e) {
        err << "error (usage): " << e.what() << "\n";
        return exit_code(Errc::usage);
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error (io): " << e.what() << "\n";
        return exit_code(Errc::io);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code(Errc::usage);
}

int run_cli(int argc, char** argv) { return run_cli(argc, argv, std::cout, std::cerr); }

} // namespace afb
