#include "groundkit/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "groundkit/annosvc.hpp"
#include "groundkit/chat_client.hpp"
#include "groundkit/forge.hpp"
#include "groundkit/gateway.hpp"
#include "groundkit/metrics.hpp"
#include "groundkit/report.hpp"
#include "groundkit/store.hpp"
#include "groundkit/util.hpp"

namespace groundkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::EndpointUnavailable:
    case ErrorCode::RequestRejected: return kExitEndpoint;
    case ErrorCode::ConfigError:
    case ErrorCode::TemplateError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::IoError:
    case ErrorCode::NotFound: return kExitConfig;
    default: return kExitValidation;
    }
}

namespace {

std::atomic<bool> g_interrupted{false};

void on_interrupt(int) {
    g_interrupted = true;
}

// Installs the interrupt handler for the lifetime of one long-running command.
class InterruptScope {
public:
    InterruptScope() {
        g_interrupted = false;
        previous_ = std::signal(SIGINT, on_interrupt);
    }
    ~InterruptScope() { std::signal(SIGINT, previous_); }

private:
    void (*previous_)(int) = SIG_DFL;
};

struct EvalArgs {
    std::string dataset;
    std::string output;
    std::string endpoint = "http://127.0.0.1:8000/v1";
    std::string model = "default";
    std::string api_key_env;
    std::string tmpl = kDefaultForwardTemplate;
    std::string benchmark;
    int parallel = 4;
    int max_retries = 3;
    double timeout = 60.0;
    double temperature = 0.0;
    int backoff_ms = 1000;
    int resize = 0;
};

struct ForgeArgs {
    std::string run_config;
    std::string output_dir;
    std::string run_id;
    std::uint64_t seed = 0;
};

struct ManifestArgs {
    std::string manifest;
    bool json = false;
};

struct ReportArgs {
    std::string input;
    std::string format = "text";
    std::string method;
};

struct ServeArgs {
    std::string pool;
    std::string state_dir;
    std::string host = "127.0.0.1";
    int port = 8765;
    std::string token_env = annosvc::kTokenEnv;
    bool no_auth = false;
    int threads = 8;
};

struct SplitArgs {
    std::string manifest;
    std::string output_dir;
    std::string ratios = "train=0.8,test=0.2";
    std::uint64_t seed = 0;
};

struct ImportArgs {
    std::string records;
    std::string output;
    std::string source = "import";
    std::string name = "imported";
};

struct Cli {
    CLI::App app{"groundkit: GUI grounding benchmarks, dataset forging and annotation", "groundkit"};
    std::string config;
    EvalArgs eval;
    ForgeArgs forge;
    ManifestArgs validate;
    ManifestArgs stats;
    ReportArgs report;
    ServeArgs serve;
    SplitArgs split;
    ImportArgs import;
    std::vector<CLI::App*> subs;

    Cli() {
        app.require_subcommand(1);
        app.set_version_flag("--version", kToolVersion);
        app.add_option("--config", config, "JSON config file; keys are flag names, optionally under a subcommand key");

        auto* e = sub("eval", "Query a model endpoint over a dataset and score click accuracy");
        e->add_option("--dataset", eval.dataset, "Manifest to evaluate (required)");
        e->add_option("--output", eval.output, "Output directory for journal, predictions and reports (required)");
        e->add_option("--endpoint", eval.endpoint, "OpenAI-compatible base URL")->capture_default_str();
        e->add_option("--model", eval.model, "Model name sent with each request")->capture_default_str();
        e->add_option("--api-key-env", eval.api_key_env, "Name of the env var holding the API key");
        e->add_option("--template", eval.tmpl, "Prompt template id: default-forward, where-click, default-reverse")
            ->capture_default_str();
        e->add_option("--benchmark", eval.benchmark, "Benchmark name in the report (default: dataset name)");
        e->add_option("--parallel", eval.parallel, "Maximum concurrent requests")->capture_default_str();
        e->add_option("--max-retries", eval.max_retries, "Retries per request on transient failure")->capture_default_str();
        e->add_option("--timeout", eval.timeout, "Per-request timeout in seconds")->capture_default_str();
        e->add_option("--temperature", eval.temperature, "Sampling temperature")->capture_default_str();
        e->add_option("--backoff-ms", eval.backoff_ms, "Initial retry backoff in milliseconds")->capture_default_str();
        e->add_option("--resize", eval.resize, "Downscale images so the longest side fits (0 = off)")->capture_default_str();

        auto* f = sub("forge", "Run the dataset construction pipeline from a run config");
        f->add_option("--run-config", forge.run_config, "Pipeline run config JSON (required)");
        f->add_option("--output-dir", forge.output_dir, "Override the run config output_dir");
        f->add_option("--run-id", forge.run_id, "Override the run config run_id");
        f->add_option("--seed", forge.seed, "Override the run config seed");

        auto* v = sub("validate", "Check a manifest for invariant violations");
        v->add_option("--manifest", validate.manifest, "Manifest path (required)");
        v->add_flag("--json", validate.json, "Print the violation list as JSON");

        auto* s = sub("stats", "Summarize a manifest");
        s->add_option("--manifest", stats.manifest, "Manifest path (required)");
        s->add_flag("--json", stats.json, "Print JSON instead of text");

        auto* r = sub("report", "Render a saved report document as text tables or canonical JSON");
        r->add_option("--input", report.input, "report.json written by eval (required)");
        r->add_option("--format", report.format, "text or json")->capture_default_str();
        r->add_option("--method", report.method, "Row label for the accuracy table (default: model in provenance)");

        auto* a = sub("annotate-serve", "Serve the annotation HTTP API over a screenshot pool");
        a->add_option("--pool", serve.pool, "Manifest of screenshots to annotate (required)");
        a->add_option("--state-dir", serve.state_dir, "Annotation state directory (default: <pool dir>/annotation-state)");
        a->add_option("--host", serve.host, "Bind address")->capture_default_str();
        a->add_option("--port", serve.port, "Bind port (0 picks a free one)")->capture_default_str();
        a->add_option("--token-env", serve.token_env, "Env var holding the shared bearer token")->capture_default_str();
        a->add_flag("--no-auth", serve.no_auth, "Serve without a bearer token");
        a->add_option("--threads", serve.threads, "Worker threads")->capture_default_str();

        auto* p = sub("split", "Split a manifest by asset into disjoint parts");
        p->add_option("--manifest", split.manifest, "Manifest path (required)");
        p->add_option("--output-dir", split.output_dir, "Directory for <part>.jsonl files (required)");
        p->add_option("--ratios", split.ratios, "Comma-separated name=ratio list summing to 1")->capture_default_str();
        p->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();

        auto* i = sub("import", "Convert generic {image, box, caption} records into a manifest");
        i->add_option("--records", import.records, "JSONL records file (required)");
        i->add_option("--output", import.output, "Manifest path to write (required)");
        i->add_option("--source", import.source, "Source tag stored on each asset")->capture_default_str();
        i->add_option("--name", import.name, "Dataset name")->capture_default_str();
    }

    CLI::App* sub(const std::string& name, const std::string& description) {
        auto* s = app.add_subcommand(name, description);
        subs.push_back(s);
        return s;
    }
};

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw Error(ErrorCode::ConfigError, fmt::format("{} is required", flag));
}

std::string env_name(const std::string& flag) {
    std::string out = "GROUNDKIT_";
    for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("config file {} is not valid JSON: {}", path, e.what()));
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("cannot read config file {}: {}", path, e.what()));
    }
    if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "config file must hold a JSON object");
    return doc;
}

std::vector<std::string> long_names(const CLI::App& sub) {
    std::vector<std::string> names;
    for (const auto* opt : sub.get_options()) {
        for (const auto& n : opt->get_lnames()) {
            if (n != "help") names.push_back(n);
        }
    }
    return names;
}

void check_config_keys(const Cli& cli, const json& file) {
    std::vector<std::string> known;
    for (const auto* s : cli.subs) {
        for (auto& n : long_names(*s)) known.push_back(n);
    }
    auto is_known = [&](const std::string& k) { return std::find(known.begin(), known.end(), k) != known.end(); };
    for (const auto& [key, value] : file.items()) {
        auto sub = std::find_if(cli.subs.begin(), cli.subs.end(), [&](const CLI::App* s) { return s->get_name() == key; });
        if (sub != cli.subs.end()) {
            if (!value.is_object()) throw Error(ErrorCode::ConfigError, fmt::format("config key '{}' must be an object", key));
            const auto names = long_names(**sub);
            for (const auto& [k, v] : value.items()) {
                if (std::find(names.begin(), names.end(), k) == names.end()) {
                    throw Error(ErrorCode::ConfigError, fmt::format("unknown config key '{}.{}'", key, k));
                }
            }
        } else if (!is_known(key)) {
            throw Error(ErrorCode::ConfigError, fmt::format("unknown config key '{}'", key));
        }
    }
}

// Fills options not given on the command line from env, then from the file.
void layer(CLI::App& sub, const json& file) {
    const json* section = file.contains(sub.get_name()) ? &file.at(sub.get_name()) : nullptr;
    for (auto* opt : sub.get_options()) {
        const auto names = opt->get_lnames();
        if (names.empty() || names.front() == "help") continue;
        const auto& name = names.front();
        if (opt->count() > 0) continue;
        std::optional<std::string> value;
        if (const char* v = std::getenv(env_name(name).c_str()); v && *v) {
            value = v;
        } else {
            const json* src = nullptr;
            if (section && section->contains(name)) src = &section->at(name);
            else if (file.contains(name)) src = &file.at(name);
            if (src) value = src->is_string() ? src->get<std::string>() : src->dump();
        }
        if (value) {
            try {
                opt->add_result(*value);
                opt->run_callback();
            } catch (const CLI::Error& e) {
                throw Error(ErrorCode::ConfigError, fmt::format("bad value '{}' for {}: {}", *value, name, e.what()));
            }
        }
    }
}

json effective_eval_config(const EvalArgs& a) {
    return {{"endpoint", a.endpoint},     {"model", a.model},           {"api-key-env", a.api_key_env},
            {"template", a.tmpl},         {"benchmark", a.benchmark},   {"parallel", a.parallel},
            {"max-retries", a.max_retries}, {"timeout", a.timeout},     {"temperature", a.temperature},
            {"backoff-ms", a.backoff_ms}, {"resize", a.resize}};
}

EvalReport score(const DatasetManifest& m, const std::vector<Prediction>& predictions, const PromptTemplate& tmpl,
                 const std::string& benchmark) {
    std::map<std::string, const Prediction*> pred_of;
    for (const auto& p : predictions) pred_of[p.sample_id] = &p;

    if (tmpl.direction == Direction::Forward) {
        std::vector<GroundingSample> samples;
        std::vector<HitResult> results;
        for (const auto& s : m.samples) {
            if (s.direction != Direction::Forward) continue;
            samples.push_back(s);
            results.push_back(score_forward(s, pred_of.at(s.sample_id)->parsed));
        }
        return evaluate_run(samples, results, {}, benchmark);
    }
    std::vector<ReverseScore> scores;
    for (const auto& s : m.samples) {
        if (s.direction != Direction::Reverse) continue;
        const auto* p = pred_of.at(s.sample_id);
        scores.push_back(score_reverse(s, p->failed() ? std::string_view{} : std::string_view{p->raw_text}, s.instruction));
    }
    if (scores.empty()) throw Error(ErrorCode::EmptyRun, "dataset has no reverse samples");
    EvalReport report;
    report.totals.samples = static_cast<std::int64_t>(scores.size());
    report.reverse = summarize_reverse(scores);
    return report;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    require(a.dataset, "--dataset");
    require(a.output, "--output");
    const auto& tmpl = TemplateRegistry::builtin().get(a.tmpl);

    EndpointConfig ec;
    ec.base_url = a.endpoint;
    ec.model_name = a.model;
    ec.api_key_env = a.api_key_env;
    ec.timeout_seconds = a.timeout;
    ec.max_retries = a.max_retries;
    ec.max_parallel_requests = a.parallel;
    ec.temperature = a.temperature;
    ec.backoff_initial = std::chrono::milliseconds(a.backoff_ms);
    ec.resize_longest_side = a.resize;
    ec.validate();

    const auto dataset = read_manifest(a.dataset, ReadMode::Lenient);
    const auto validation = validate_dataset(dataset);
    if (!validation.ok()) {
        err << "dataset failed validation:\n" << validation.summary() << "\n";
        return kExitValidation;
    }

    const fs::path dir(a.output);
    fs::create_directories(dir);
    fs::remove(dir / "report.json");
    fs::remove(dir / "report.txt");

    ChatClient client(ec);
    RunOptions options;
    options.journal_path = dir / "journal.jsonl";
    options.should_stop = [] { return g_interrupted.load(); };
    const auto summary = run_benchmark(dataset, client, tmpl, options);

    write_file_atomic(dir / "predictions.jsonl", render_predictions(summary.predictions));
    const json run = {{"config", effective_eval_config(a)},
                      {"eligible", summary.eligible},
                      {"resumed", summary.resumed},
                      {"new_requests", summary.new_requests},
                      {"endpoint_failures", summary.endpoint_failures},
                      {"interrupted", summary.interrupted},
                      {"complete", summary.complete()}};
    write_file_atomic(dir / "run.json", run.dump(2) + "\n");
    out << fmt::format("{} eligible, {} resumed, {} new requests, {} endpoint failures\n", summary.eligible,
                       summary.resumed, summary.new_requests, summary.endpoint_failures);

    if (!summary.complete()) {
        err << fmt::format("run incomplete ({}); no report written, rerun to resume from {}\n",
                           summary.interrupted ? "interrupted" : "endpoint unavailable",
                           options.journal_path.string());
        return summary.endpoint_failures > 0 ? kExitEndpoint : kExitInternal;
    }

    const auto benchmark = !a.benchmark.empty() ? a.benchmark : !dataset.name.empty() ? dataset.name : "default";
    const auto report = score(dataset, summary.predictions, tmpl, benchmark);
    const json provenance = {
        {"tool_version", kToolVersion},
        {"dataset",
         {{"name", dataset.name},
          {"run_id", dataset.provenance.run_id},
          {"sha256", sha256_hex(serialize_manifest(dataset))}}},
        {"config",
         {{"model", a.model},
          {"template", tmpl.template_id},
          {"template_body", tmpl.body},
          {"temperature", a.temperature},
          {"resize", a.resize},
          {"api-key-env", a.api_key_env},
          {"benchmark", benchmark}}},
    };
    write_file_atomic(dir / "report.json", render_report_json(report, provenance));
    const auto text = render_text_tables(report, a.model);
    write_file_atomic(dir / "report.txt", text);
    out << text;
    return kExitOk;
}

int cmd_forge(const ForgeArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
    require(a.run_config, "--run-config");
    auto cfg = forge::RunConfig::load(a.run_config);
    if (!a.output_dir.empty()) cfg.output_dir = fs::absolute(a.output_dir);
    if (!a.run_id.empty()) cfg.run_id = a.run_id;
    if (sub.get_option("--seed")->count() > 0) cfg.seed = a.seed;
    cfg.validate();

    auto providers = forge::resolve_providers(cfg.providers, cfg.base_dir);
    const auto result = forge::run_pipeline(cfg, providers);
    for (const auto& w : result.warnings) err << "warning: " << w << "\n";
    out << result.counters.to_json().dump(2) << "\n";
    out << "manifest: " << result.manifest_path.string() << "\n";
    const auto validation = validate_dataset(read_manifest(result.manifest_path, ReadMode::Lenient));
    if (!validation.ok()) {
        err << validation.summary() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

int cmd_validate(const ManifestArgs& a, std::ostream& out) {
    require(a.manifest, "--manifest");
    const auto report = validate_dataset(read_manifest(a.manifest, ReadMode::Lenient));
    if (a.json) {
        out << report.to_json().dump(2) << "\n";
    } else {
        out << (report.ok() ? "ok: no violations" : report.summary()) << "\n";
    }
    return report.ok() ? kExitOk : kExitValidation;
}

int cmd_stats(const ManifestArgs& a, std::ostream& out) {
    require(a.manifest, "--manifest");
    const auto stats = dataset_stats(read_manifest(a.manifest, ReadMode::Lenient));
    out << (a.json ? stats.to_json().dump(2) + "\n" : stats.to_text());
    return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
    require(a.input, "--input");
    json doc;
    try {
        doc = json::parse(read_text_file(a.input));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("{} is not JSON: {}", a.input, e.what()));
    }
    const auto report = report_from_json(doc);
    if (a.format == "json") {
        out << render_report_json(report, doc.value("provenance", json::object()), doc.value("complete", true));
        return kExitOk;
    }
    if (a.format != "text") throw Error(ErrorCode::ConfigError, "--format must be text or json");
    auto method = a.method;
    if (method.empty()) {
        const auto p = doc.value("provenance", json::object());
        method = p.contains("config") ? p["config"].value("model", "model") : "model";
    }
    out << render_text_tables(report, method);
    return kExitOk;
}

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
    require(a.pool, "--pool");
    std::string token;
    if (!a.no_auth) {
        const char* t = std::getenv(a.token_env.c_str());
        if (!t || !*t) {
            throw Error(ErrorCode::ConfigError,
                        fmt::format("set {} to the shared bearer token, or pass --no-auth", a.token_env));
        }
        token = t;
    }
    auto pool = read_manifest(a.pool);
    const fs::path state = a.state_dir.empty() ? fs::absolute(a.pool).parent_path() / "annotation-state" : fs::path(a.state_dir);
    annosvc::AnnotationStore store(std::move(pool), state);
    annosvc::AnnotationServer server(store, {a.host, a.port, token, a.threads});
    InterruptScope interrupts;
    server.start();
    out << "annotation service on " << server.base_url() << " (state " << state.string() << ")" << std::endl;
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    err << "shutting down\n";
    server.stop();
    return kExitOk;
}

std::vector<std::pair<std::string, double>> parse_ratios(const std::string& text) {
    std::vector<std::pair<std::string, double>> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find(',', start), text.size());
        const auto part = trim(text.substr(start, end - start));
        const auto eq = part.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw Error(ErrorCode::ConfigError, fmt::format("bad ratio '{}' (expected name=value)", part));
        }
        try {
            out.emplace_back(part.substr(0, eq), std::stod(part.substr(eq + 1)));
        } catch (const std::exception&) {
            throw Error(ErrorCode::ConfigError, fmt::format("bad ratio value in '{}'", part));
        }
        start = end + 1;
    }
    return out;
}

// Rewrites relative image paths so they resolve from `dir`.
void rebase(DatasetManifest& m, const fs::path& dir) {
    const auto target = fs::absolute(dir).lexically_normal();
    for (auto& a : m.assets) {
        a.image_path = fs::absolute(m.resolve(a)).lexically_normal().lexically_proximate(target).generic_string();
    }
}

int cmd_split(const SplitArgs& a, std::ostream& out, std::ostream& err) {
    require(a.manifest, "--manifest");
    require(a.output_dir, "--output-dir");
    const auto m = read_manifest(a.manifest);
    const auto result = split_dataset(m, parse_ratios(a.ratios), a.seed);
    for (const auto& w : result.warnings) err << "warning: " << w << "\n";
    fs::create_directories(a.output_dir);
    for (auto [name, part] : result.splits) {
        part.base_dir = m.base_dir;
        rebase(part, a.output_dir);
        const auto path = fs::path(a.output_dir) / (name + ".jsonl");
        write_manifest(part, path);
        out << fmt::format("{}: {} assets, {} samples -> {}\n", name, part.assets.size(), part.samples.size(), path.string());
    }
    return kExitOk;
}

int cmd_import(const ImportArgs& a, std::ostream& out, std::ostream& err) {
    require(a.records, "--records");
    require(a.output, "--output");
    const auto target = fs::absolute(a.output);
    auto imported = forge::import_generic(a.records, a.source, target.parent_path());
    for (const auto& r : imported.rejections) err << fmt::format("line {}: {}\n", r.line, r.reason);
    if (imported.samples.empty()) {
        err << "nothing imported\n";
        return kExitValidation;
    }
    DatasetManifest m;
    m.name = a.name;
    m.provenance = {"import-" + a.source, 0, kToolVersion};
    m.assets = std::move(imported.assets);
    m.samples = std::move(imported.samples);
    m.base_dir = target.parent_path();
    const auto validation = validate_dataset(m);
    if (!validation.ok()) {
        err << validation.summary() << "\n";
        return kExitValidation;
    }
    write_manifest(m, target);
    out << fmt::format("{} assets, {} samples, {} rejected -> {}\n", m.assets.size(), m.samples.size(),
                       imported.rejections.size(), target.string());
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli;
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        cli.app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        std::string config_path = cli.config;
        if (config_path.empty()) {
            if (const char* v = std::getenv("GROUNDKIT_CONFIG")) config_path = v;
        }
        const auto file = load_config(config_path);
        check_config_keys(cli, file);
        CLI::App* chosen = cli.app.get_subcommands().front();
        layer(*chosen, file);

        const auto name = chosen->get_name();
        if (name == "eval") {
            InterruptScope interrupts;
            return cmd_eval(cli.eval, out, err);
        }
        if (name == "forge") return cmd_forge(cli.forge, *chosen, out, err);
        if (name == "validate") return cmd_validate(cli.validate, out);
        if (name == "stats") return cmd_stats(cli.stats, out);
        if (name == "report") return cmd_report(cli.report, out);
        if (name == "annotate-serve") return cmd_serve(cli.serve, out, err);
        if (name == "split") return cmd_split(cli.split, out, err);
        if (name == "import") return cmd_import(cli.import, out, err);
        err << "unknown command " << name << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

std::vector<CommandFlags> flag_inventory() {
    Cli cli;
    std::vector<CommandFlags> out;
    for (const auto* s : cli.subs) {
        CommandFlags c{s->get_name(), {}, s->help()};
        for (const auto& n : long_names(*s)) c.flags.push_back("--" + n);
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace groundkit::cli
