#include "polynet/cli.hpp"

#include "polynet/data.hpp"
#include "polynet/netzoo.hpp"
#include "polynet/trainer.hpp"
#include "polynet/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace polynet {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string tag_of(const std::string& name_or_path) {
    return builtin_arch_text(name_or_path) ? name_or_path : fs::path(name_or_path).stem().string();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, sep)) fields.push_back(f);
    if (!line.empty() && line.back() == sep) fields.emplace_back();
    return fields;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    return lines;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void print_histogram(std::ostream& out, const Dataset& ds) {
    const auto hist = class_histogram(ds);
    out << "samples: " << ds.size() << "\nclasses: " << ds.classes() << "\nhistogram:";
    for (std::size_t h : hist) out << ' ' << h;
    out << "\n";
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    if (*lo > 0) out << "imbalance_factor: " << num(static_cast<double>(*hi) / static_cast<double>(*lo)) << "\n";
}

// --- verify -----------------------------------------------------------------

struct VerifyArgs {
    std::string suite = "all";
    std::uint64_t seed = 1;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
    const auto& names = suite_names();
    if (a.suite != "all" && std::find(names.begin(), names.end(), a.suite) == names.end())
        throw UsageError("unknown suite '" + a.suite + "'");
    const auto results = run_suite(a.suite, a.seed);
    std::size_t failures = 0;
    for (const auto& r : results) {
        failures += !r.passed;
        char buf[96];
        std::snprintf(buf, sizeof buf, " measured=%.3g bound=%.3g", r.measured, r.bound);
        out << r.name << ": " << (r.passed ? "PASS" : "FAIL") << buf;
        if (!r.detail.empty()) out << " (" << r.detail << ")";
        out << "\n";
    }
    out << "suite: " << a.suite << "\nchecks: " << results.size() << "\nfailures: " << failures
        << "\nresult: " << (failures ? "FAIL" : "PASS") << "\n";
    return failures ? 1 : 0;
}

// --- count-params -----------------------------------------------------------

int cmd_count_params(const std::string& arch, std::ostream& out) {
    const ArchSpec spec = load_arch(arch);
    const std::size_t n = count_params(spec);
    char millions[32];
    std::snprintf(millions, sizeof millions, "%.1f", static_cast<double>(n) / 1e6);
    out << "arch: " << spec.name << "\nparams: " << n << "\nmillions: " << millions << "\n";
    return 0;
}

// --- make-dataset -----------------------------------------------------------

struct MakeDatasetArgs {
    std::vector<std::uint64_t> synth;
    std::size_t limit = 0;
    double longtail = 0.0;
    std::string in, out;
    std::uint64_t seed = 0;
    std::size_t n_max = 0;
};

int cmd_make_dataset(const MakeDatasetArgs& a, bool has_limit, bool has_longtail, std::ostream& out) {
    const int modes = !a.synth.empty() + has_limit + has_longtail;
    if (modes != 1) throw UsageError("make-dataset needs exactly one of --synth, --limit, --longtail");
    if (a.synth.empty() && a.in.empty()) throw UsageError("--limit and --longtail need --in");
    Dataset ds;
    if (!a.synth.empty()) ds = synth_quadratic(a.synth[0], a.synth[1], a.synth[2]);
    else if (has_limit) ds = subsample_per_class(load_dataset(a.in), a.limit, a.seed);
    else ds = longtail_resample(load_dataset(a.in), a.longtail, a.seed, a.n_max);
    save_dataset(a.out, ds);
    print_histogram(out, ds);
    out << "out: " << a.out << "\n";
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string arch, data, eval_data, out_dir;
    TrainConfig cfg;
    std::size_t repeats = 1;
};

const char* manifest_header = "run_id,arch,data,samples_per_class,imbalance_factor,seed,csv";

// Rows keyed by run id; a rerun with the same id replaces its row.
void update_manifest(const fs::path& dir, const std::vector<std::string>& rows) {
    const fs::path path = dir / "manifest.csv";
    std::vector<std::string> kept;
    if (fs::exists(path)) {
        auto lines = read_lines(path);
        if (lines.empty() || lines[0] != manifest_header) throw std::runtime_error("malformed manifest " + path.string());
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const std::string id = split(lines[i], ',')[0];
            const bool replaced = std::any_of(rows.begin(), rows.end(),
                                              [&](const std::string& r) { return split(r, ',')[0] == id; });
            if (!replaced) kept.push_back(lines[i]);
        }
    }
    kept.insert(kept.end(), rows.begin(), rows.end());
    std::string text = std::string(manifest_header) + "\n";
    for (const auto& r : kept) text += r + "\n";
    write_text(path, text);
}

int cmd_train(TrainArgs a, bool milestones_given, std::ostream& out) {
    if (a.repeats == 0) throw UsageError("--repeats must be positive");
    if (!milestones_given) std::erase_if(a.cfg.milestones, [&](std::size_t m) { return m >= a.cfg.epochs; });
    a.cfg.validate();
    const ArchSpec spec = load_arch(a.arch);
    const Dataset train_set = load_dataset(a.data);
    const Dataset eval_set = a.eval_data.empty() ? train_set : load_dataset(a.eval_data);
    fs::create_directories(a.out_dir);

    const auto hist = class_histogram(train_set);
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    const double imbalance = *lo ? static_cast<double>(*hi) / static_cast<double>(*lo) : 0.0;
    const std::string arch_tag = tag_of(a.arch), data_tag = fs::path(a.data).stem().string();

    std::vector<std::string> manifest_rows;
    std::vector<double> eval_accs;
    for (std::size_t r = 0; r < a.repeats; ++r) {
        TrainConfig cfg = a.cfg;
        cfg.seed = a.cfg.seed + r;
        Graph graph = build_network(spec, cfg.seed);
        const RunReport report = train(graph, train_set, eval_set, cfg);
        const std::string id = arch_tag + "_" + data_tag + "_s" + std::to_string(cfg.seed);
        const fs::path dir(a.out_dir);
        write_report_csv((dir / (id + ".csv")).string(), report);
        save_checkpoint((dir / (id + ".pdck")).string(), graph);
        write_text(dir / (id + ".arch"), format_arch(spec));
        manifest_rows.push_back(id + "," + arch_tag + "," + data_tag + "," + std::to_string(*hi) + "," +
                                num(imbalance) + "," + std::to_string(cfg.seed) + "," + id + ".csv");
        eval_accs.push_back(report.final_eval_acc());
        out << "run: " << id << "\n" << id << ".train_acc: " << num(report.rows.back().train_acc) << "\n"
            << id << ".eval_acc: " << num(report.final_eval_acc()) << "\n";
    }
    update_manifest(a.out_dir, manifest_rows);
    out << "runs: " << a.repeats << "\neval_acc_mean: " << num(mean(eval_accs))
        << "\neval_acc_std: " << num(stddev(eval_accs)) << "\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& data, std::string arch, std::ostream& out) {
    if (arch.empty()) {
        arch = fs::path(checkpoint).replace_extension(".arch").string();
        if (!fs::exists(arch)) throw UsageError("no --arch given and '" + arch + "' does not exist");
    }
    Graph graph = build_network(load_arch(arch), 0);
    apply_checkpoint(graph, load_checkpoint(checkpoint));
    const Dataset ds = load_dataset(data);
    out << "samples: " << ds.size() << "\naccuracy: " << num(evaluate(graph, ds)) << "\n";
    return 0;
}

// --- report -----------------------------------------------------------------

int cmd_report(const std::string& runs, const std::string& out_path, std::ostream& out) {
    const fs::path manifest = fs::path(runs) / "manifest.csv";
    if (!fs::exists(manifest)) throw UsageError("no manifest.csv in '" + runs + "'");
    const auto lines = read_lines(manifest);
    if (lines.empty() || lines[0] != manifest_header) throw UsageError("malformed manifest header");
    if (lines.size() == 1) throw UsageError("manifest lists no runs");

    using Key = std::tuple<std::string, std::size_t, double>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split(lines[i], ',');
        if (f.size() != 7) throw UsageError("manifest line " + std::to_string(i + 1) + ": expected 7 fields");
        std::size_t spc = 0;
        double imbalance = 0.0;
        try {
            std::size_t pos = 0;
            spc = std::stoul(f[3], &pos);
            if (pos != f[3].size()) throw std::invalid_argument("");
            imbalance = std::stod(f[4], &pos);
            if (pos != f[4].size()) throw std::invalid_argument("");
        } catch (const std::logic_error&) {
            throw UsageError("manifest line " + std::to_string(i + 1) + ": bad number");
        }
        const auto csv = read_lines(fs::path(runs) / f[6]);
        if (csv.size() < 2 || csv[0] != csv_header()) throw UsageError("malformed run csv '" + f[6] + "'");
        const auto last = split(csv.back(), ',');
        if (last.size() != 5) throw UsageError("malformed run csv '" + f[6] + "'");
        auto& g = groups[{f[1], spc, imbalance}];
        g.first.push_back(std::stod(last[4]));
        g.second.push_back(std::stod(last[3]));
    }

    std::ostringstream csv;
    csv << "arch,samples_per_class,imbalance_factor,runs,eval_acc_mean,eval_acc_std,train_acc_mean,train_acc_std\n";
    for (const auto& [key, accs] : groups) {
        csv << std::get<0>(key) << ',' << std::get<1>(key) << ',' << num(std::get<2>(key)) << ',' << accs.first.size()
            << ',' << num(mean(accs.first)) << ',' << num(stddev(accs.first)) << ',' << num(mean(accs.second)) << ','
            << num(stddev(accs.second)) << "\n";
    }
    if (out_path.empty()) {
        out << csv.str();
    } else {
        write_text(out_path, csv.str());
        out << "groups: " << groups.size() << "\nout: " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Polynomial network toolkit", "polynet"};
    app.require_subcommand(1);
    app.set_config("--config", "", "File of 'key = value' lines; keys are <command>.<flag>");
    app.allow_config_extras(false);

    VerifyArgs verify;
    auto* v = app.add_subcommand("verify", "Run invariant suites");
    v->add_option("--suite", verify.suite, "degree|oracle|grad|se-identity|fold|tensor|autodiff|netzoo|all");
    v->add_option("--seed", verify.seed);

    std::string count_arch;
    auto* c = app.add_subcommand("count-params", "Count trainable parameters of an architecture");
    c->add_option("--arch", count_arch, "Builtin name or descriptor file")->required();

    MakeDatasetArgs make;
    auto* m = app.add_subcommand("make-dataset", "Write a synthetic or resampled dataset");
    m->add_option("--synth", make.synth, "d n_per_class seed")->expected(3);
    auto* limit = m->add_option("--limit", make.limit, "Samples per class");
    auto* longtail = m->add_option("--longtail", make.longtail, "Imbalance factor");
    m->add_option("--in", make.in);
    m->add_option("--out", make.out)->required();
    m->add_option("--seed", make.seed);
    m->add_option("--n-max", make.n_max, "Size of the largest class for --longtail");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a network");
    t->add_option("--arch", tr.arch)->required();
    t->add_option("--data", tr.data)->required();
    t->add_option("--eval-data", tr.eval_data, "Defaults to the training data");
    t->add_option("--epochs", tr.cfg.epochs);
    t->add_option("--batch", tr.cfg.batch);
    t->add_option("--lr", tr.cfg.lr0);
    auto* milestones = t->add_option("--milestones", tr.cfg.milestones);
    t->add_option("--gamma", tr.cfg.gamma);
    t->add_option("--momentum", tr.cfg.momentum);
    t->add_option("--weight-decay", tr.cfg.weight_decay);
    t->add_option("--seed", tr.cfg.seed);
    t->add_option("--repeats", tr.repeats);
    t->add_option("--out-dir", tr.out_dir)->required();

    std::string eval_ckpt, eval_data, eval_arch;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
    e->add_option("--checkpoint", eval_ckpt)->required();
    e->add_option("--data", eval_data)->required();
    e->add_option("--arch", eval_arch, "Defaults to the .arch file next to the checkpoint");

    std::string report_runs, report_out;
    auto* r = app.add_subcommand("report", "Aggregate runs listed in a manifest");
    r->add_option("--runs", report_runs)->required();
    r->add_option("--out", report_out);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (v->parsed()) return cmd_verify(verify, out);
        if (c->parsed()) return cmd_count_params(count_arch, out);
        if (m->parsed()) return cmd_make_dataset(make, limit->count() > 0, longtail->count() > 0, out);
        if (t->parsed()) return cmd_train(tr, milestones->count() > 0, out);
        if (e->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_arch, out);
        if (r->parsed()) return cmd_report(report_runs, report_out, out);
    } catch (const TrainingDiverged& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace polynet
