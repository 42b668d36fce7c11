#include "nopkit/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace nop {

namespace {

using nlohmann::json;

void reject_unknown(const json& section, const std::vector<std::string>& allowed,
                    const std::string& name) {
    if (section.is_null()) return;
    if (!section.is_object()) throw ConfigError("config section " + name + " must be an object");
    for (auto it = section.begin(); it != section.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError("unknown config key " + name + "." + it.key());
    }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (j.is_object() && j.contains(key)) return j.at(key).get<T>();
    return fallback;
}

void validate(const RunConfig& cfg) {
    reject_unknown(cfg.data,
                   {"problem", "n", "size", "viscosity", "t_end", "dt", "record_every",
                    "downsample", "name"},
                   "data");
    reject_unknown(cfg.model,
                   {"variant", "act", "dims", "d_a", "d_u", "d_v", "layers", "q_hidden", "kmax",
                    "pad_t", "autoregressive", "radius", "subsample", "kernel_width", "rank",
                    "factor_width", "level_radii", "level_counts", "sensors", "basis",
                    "net_width", "seed", "graph_seed"},
                   "model");
    reject_unknown(cfg.train,
                   {"dataset", "test_dataset", "test_count", "epochs", "lr", "halve_every",
                    "batch_size", "mse_loss", "weight_decay", "early_stop_patience",
                    "checkpoint_every"},
                   "train");
    reject_unknown(cfg.eval, {"checkpoint", "dataset", "datasets", "noise"}, "eval");
    reject_unknown(cfg.invert,
                   {"checkpoint", "size", "gamma", "beta", "burn_in", "retained", "thin",
                    "t_end", "viscosity", "dt", "precision_covariance", "truth_seed"},
                   "invert");
}

std::string write_resolved_config(const RunConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::string path = dir + "/config.json";
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write resolved config to " + path);
    out << run_config_to_json(cfg).dump(2) << '\n';
    return path;
}

Grid problem_grid(const std::string& problem, std::size_t s) {
    if (problem == "poisson") return Grid::uniform_1d(s, 0.0, 1.0, false);
    if (problem == "darcy") return Grid::uniform_2d(s, 0.0, 1.0, false);
    if (problem == "burgers") return Grid::uniform_1d(s, 0.0, 2.0 * 3.14159265358979323846, true);
    if (problem == "ns_onestep" || problem == "ns_trajectory")
        return Grid::uniform_2d(s, 0.0, 1.0, true);
    throw ConfigError("unknown value for data.problem: " + problem);
}

Dataset downsample_dataset(const Dataset& src, std::size_t factor) {
    Dataset ds;
    ds.manifest = src.manifest;
    std::vector<std::size_t> f(src.inputs[0].grid.sizes.size(), factor);
    for (std::size_t i = 0; i < src.inputs.size(); ++i) {
        ds.inputs.push_back(downsample(src.inputs[i], f));
        ds.outputs.push_back(downsample(src.outputs[i], f));
    }
    ds.manifest.source_resolution = src.inputs[0].grid.sizes[0];
    ds.manifest.grid_sizes = ds.inputs[0].grid.sizes;
    ds.manifest.input_shape = ds.inputs[0].values.shape();
    ds.manifest.output_shape = ds.outputs[0].values.shape();
    return ds;
}

FieldSample last_channel(const FieldSample& f) {
    std::size_t c = f.channels();
    if (c == 1) return f;
    std::size_t J = f.grid.points();
    std::vector<double> v(J);
    for (std::size_t j = 0; j < J; ++j) v[j] = f.values.data()[j * c + (c - 1)];
    std::vector<std::size_t> shape = f.grid.sizes;
    shape.push_back(1);
    return {f.grid, Tensor(shape, std::move(v))};
}

} // namespace

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, {"data", "model", "train", "eval", "invert", "seed", "out"}, "<root>");
    RunConfig cfg;
    cfg.data = j.value("data", json::object());
    cfg.model = j.value("model", json::object());
    cfg.train = j.value("train", json::object());
    cfg.eval = j.value("eval", json::object());
    cfg.invert = j.value("invert", json::object());
    cfg.seed = j.value("seed", std::uint64_t(0));
    cfg.out = j.value("out", std::string("out"));
    validate(cfg);
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["data"] = cfg.data;
    j["model"] = cfg.model;
    j["train"] = cfg.train;
    j["eval"] = cfg.eval;
    j["invert"] = cfg.invert;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    return j;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
        }
    }
    for (const std::string& ov : overrides) {
        std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects section.key=value, got: " + ov);
        std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw; // not valid JSON: keep as string
        }
        std::size_t dot = key.find('.');
        if (dot == std::string::npos) {
            j[key] = value;
        } else {
            j[key.substr(0, dot)][key.substr(dot + 1)] = value;
        }
    }
    return run_config_from_json(j);
}

ModelConfig model_config_from(const RunConfig& cfg) {
    const json& m = cfg.model;
    ModelConfig c;
    std::string variant = get_or<std::string>(m, "variant", "fno");
    if (variant == "fno") c.variant = Variant::fno;
    else if (variant == "gno") c.variant = Variant::gno;
    else if (variant == "lno") c.variant = Variant::lno;
    else if (variant == "mgno") c.variant = Variant::mgno;
    else if (variant == "deeponet") c.variant = Variant::deeponet;
    else if (variant == "greens") c.variant = Variant::greens;
    else throw ConfigError("unknown value for model.variant: " + variant);
    std::string act = get_or<std::string>(m, "act", "gelu");
    if (act == "identity") c.act = Activation::identity;
    else if (act == "relu") c.act = Activation::relu;
    else if (act == "gelu") c.act = Activation::gelu;
    else throw ConfigError("unknown value for model.act: " + act);
    c.dims = get_or<std::size_t>(m, "dims", 1);
    c.d_a = get_or<std::size_t>(m, "d_a", 1);
    c.d_u = get_or<std::size_t>(m, "d_u", 1);
    c.d_v = get_or<std::size_t>(m, "d_v", 64);
    c.layers = get_or<std::size_t>(m, "layers", 4);
    c.q_hidden = get_or<std::size_t>(m, "q_hidden", 128);
    c.kmax = get_or<std::vector<std::size_t>>(m, "kmax", std::vector<std::size_t>(c.dims, 16));
    c.pad_t = get_or<std::size_t>(m, "pad_t", 0);
    c.autoregressive = get_or<bool>(m, "autoregressive", false);
    c.radius = get_or<double>(m, "radius", 0.25);
    c.subsample = get_or<std::size_t>(m, "subsample", 300);
    c.kernel_width = get_or<std::size_t>(m, "kernel_width", 256);
    c.rank = get_or<std::size_t>(m, "rank", 4);
    c.factor_width = get_or<std::size_t>(m, "factor_width", 256);
    c.level_radii = get_or<std::vector<double>>(m, "level_radii", {});
    c.level_counts = get_or<std::vector<std::size_t>>(m, "level_counts", {});
    c.sensors = get_or<std::size_t>(m, "sensors", 0);
    c.basis = get_or<std::size_t>(m, "basis", 128);
    c.net_width = get_or<std::size_t>(m, "net_width", 128);
    c.seed = get_or<std::uint64_t>(m, "seed", cfg.seed);
    c.graph_seed = get_or<std::uint64_t>(m, "graph_seed", cfg.seed + 1);
    return c;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    const json& t = cfg.train;
    TrainConfig c;
    c.epochs = get_or<std::size_t>(t, "epochs", 500);
    c.initial_lr = get_or<double>(t, "lr", 1e-3);
    c.halve_every = get_or<std::size_t>(t, "halve_every", 100);
    c.batch_size = get_or<std::size_t>(t, "batch_size", 20);
    c.seed = cfg.seed;
    c.mse_loss = get_or<bool>(t, "mse_loss", false);
    c.weight_decay = get_or<double>(t, "weight_decay", 0.0);
    c.early_stop_patience = get_or<std::size_t>(t, "early_stop_patience", 0);
    c.checkpoint_every = get_or<std::size_t>(t, "checkpoint_every", 0);
    return c;
}

std::string cmd_gen_data(const RunConfig& cfg) {
    if (!cfg.data.contains("problem")) throw ConfigError("missing config key data.problem");
    std::string problem = cfg.data.at("problem").get<std::string>();
    std::size_t n = get_or<std::size_t>(cfg.data, "n", 10);
    std::size_t size = get_or<std::size_t>(cfg.data, "size", 64);
    BuildOptions opt;
    opt.viscosity = get_or<double>(cfg.data, "viscosity", 0.0);
    opt.t_end = get_or<double>(cfg.data, "t_end", 0.0);
    opt.dt = get_or<double>(cfg.data, "dt", 0.0);
    opt.record_every = get_or<double>(cfg.data, "record_every", 1.0);
    Dataset ds = build_dataset(problem, n, problem_grid(problem, size), cfg.seed, opt);
    std::size_t factor = get_or<std::size_t>(cfg.data, "downsample", 1);
    if (factor > 1) ds = downsample_dataset(ds, factor);
    std::string dir = cfg.out + "/" + get_or<std::string>(cfg.data, "name", problem);
    save_dataset(dir, ds);
    write_resolved_config(cfg, dir);
    return dir;
}

std::string cmd_train(const RunConfig& cfg) {
    if (!cfg.train.contains("dataset")) throw ConfigError("missing config key train.dataset");
    Dataset full = load_dataset(cfg.train.at("dataset").get<std::string>());
    Dataset tr, te;
    std::size_t test_count = get_or<std::size_t>(cfg.train, "test_count", 0);
    if (cfg.train.contains("test_dataset")) {
        tr = std::move(full);
        te = load_dataset(cfg.train.at("test_dataset").get<std::string>());
    } else if (test_count > 0) {
        if (test_count >= full.inputs.size())
            throw ConfigError("train.test_count leaves no training samples");
        tr.manifest = te.manifest = full.manifest;
        std::size_t n_tr = full.inputs.size() - test_count;
        tr.inputs.assign(full.inputs.begin(), full.inputs.begin() + n_tr);
        tr.outputs.assign(full.outputs.begin(), full.outputs.begin() + n_tr);
        te.inputs.assign(full.inputs.begin() + n_tr, full.inputs.end());
        te.outputs.assign(full.outputs.begin() + n_tr, full.outputs.end());
        tr.manifest.count = n_tr;
        te.manifest.count = test_count;
    } else {
        tr = std::move(full);
    }

    OperatorModel model = make_model(model_config_from(cfg));
    TrainConfig tc = train_config_from(cfg);
    std::filesystem::create_directories(cfg.out);
    std::string ckpt_dir = cfg.out + "/checkpoint";
    bool have_checkpoint = false;
    tc.checkpoint_hook = [&](const OperatorModel& m, std::size_t) {
        save_checkpoint(ckpt_dir, m);
        have_checkpoint = true;
    };
    TrainResult res;
    try {
        res = train(model, tr, te.inputs.empty() ? nullptr : &te, tc);
    } catch (const SolverError& e) {
        if (have_checkpoint)
            throw SolverError(std::string(e.what()) + "; last checkpoint: " + ckpt_dir);
        throw;
    }
    write_history_csv(cfg.out + "/history.csv", res.history);
    write_resolved_config(cfg, cfg.out);
    return ckpt_dir;
}

namespace {

std::vector<Dataset> eval_datasets(const RunConfig& cfg) {
    std::vector<Dataset> sets;
    if (cfg.eval.contains("datasets"))
        for (const auto& p : cfg.eval.at("datasets"))
            sets.push_back(load_dataset(p.get<std::string>()));
    else if (cfg.eval.contains("dataset"))
        sets.push_back(load_dataset(cfg.eval.at("dataset").get<std::string>()));
    else
        throw ConfigError("missing config key eval.dataset (or eval.datasets)");
    return sets;
}

OperatorModel eval_model(const RunConfig& cfg) {
    if (!cfg.eval.contains("checkpoint")) throw ConfigError("missing config key eval.checkpoint");
    return load_checkpoint(cfg.eval.at("checkpoint").get<std::string>());
}

} // namespace

std::string cmd_eval(const RunConfig& cfg) {
    OperatorModel model = eval_model(cfg);
    std::vector<Dataset> sets = eval_datasets(cfg);
    ErrorReport rep = resolution_sweep(model, sets);
    std::filesystem::create_directories(cfg.out);
    write_report_csv(cfg.out + "/report.csv", rep);
    std::ofstream txt(cfg.out + "/report.txt");
    txt << format_report(rep);
    double noise = get_or<double>(cfg.eval, "noise", 0.0);
    if (noise > 0.0) {
        Rng rng(cfg.seed, 0x6E6F6973ull);
        RobustnessReport rr = robustness_study(model, sets[0], noise, rng);
        std::ofstream rcsv(cfg.out + "/robustness.csv");
        rcsv.precision(17);
        rcsv << "noise_level,clean_err,noisy_err\n"
             << rr.noise_level << ',' << rr.clean_err << ',' << rr.noisy_err << '\n';
    }
    write_resolved_config(cfg, cfg.out);
    return cfg.out + "/report.csv";
}

std::string cmd_superres(const RunConfig& cfg) {
    OperatorModel model = eval_model(cfg);
    std::vector<Dataset> sets = eval_datasets(cfg);
    const Dataset& high = sets[0];
    if (model.cfg.variant == Variant::deeponet &&
        (high.inputs.empty() || high.inputs[0].grid.points() != model.cfg.sensors))
        throw ConfigError("deeponet is a fixed-sensor architecture and cannot be evaluated "
                          "on a different discretization");
    ErrorEntry e = superresolution(model, high);
    std::filesystem::create_directories(cfg.out);
    std::ofstream csv(cfg.out + "/superres.csv");
    csv.precision(17);
    csv << "resolution,mean_rel_l2,samples\n"
        << e.resolution << ',' << e.mean_rel_l2 << ',' << e.samples << '\n';
    write_resolved_config(cfg, cfg.out);
    return cfg.out + "/superres.csv";
}

std::string cmd_invert(const RunConfig& cfg) {
    std::size_t s = get_or<std::size_t>(cfg.invert, "size", 32);
    double nu = get_or<double>(cfg.invert, "viscosity", 1e-3);
    double t_end = get_or<double>(cfg.invert, "t_end", 1.0);
    NsOptions ns_opt;
    ns_opt.dt = get_or<double>(cfg.invert, "dt", 1e-3);
    Grid g = Grid::uniform_2d(s, 0.0, 1.0, true);

    InverseProblemSpec spec;
    spec.grid = g;
    spec.gamma = get_or<double>(cfg.invert, "gamma", 0.1);
    spec.precision_covariance = get_or<bool>(cfg.invert, "precision_covariance", false);
    spec.beta = get_or<double>(cfg.invert, "beta", 0.1);
    spec.burn_in = get_or<std::size_t>(cfg.invert, "burn_in", 5000);
    spec.retained = get_or<std::size_t>(cfg.invert, "retained", 25000);
    spec.thin = get_or<std::size_t>(cfg.invert, "thin", 0);
    spec.seed = cfg.seed;
    spec.forward = [=](const FieldSample& w0) {
        return solve_navier_stokes(w0, t_end, nu, t_end, ns_opt).back();
    };

    Rng truth_rng(get_or<std::uint64_t>(cfg.invert, "truth_seed", cfg.seed), 0xDA7Aull);
    FieldSample truth = sample_grf(spec.prior, g, truth_rng);
    std::vector<double> y = observe(spec.forward(truth));
    Rng noise_rng(get_or<std::uint64_t>(cfg.invert, "truth_seed", cfg.seed), 0xDA7Bull);
    for (double& v : y) v += spec.gamma * noise_rng.normal();

    std::filesystem::create_directories(cfg.out);
    write_f64(cfg.out + "/truth.bin", truth.values.data(), truth.values.size());
    if (cfg.invert.contains("checkpoint")) {
        OperatorModel surrogate =
            load_checkpoint(cfg.invert.at("checkpoint").get<std::string>());
        InverseProblemSpec spec_sur = spec;
        spec_sur.forward = [&surrogate, g](const FieldSample& w0) {
            ModelOutput out = model_forward(surrogate, w0);
            std::vector<std::size_t> shape = g.sizes;
            shape.push_back(1);
            return FieldSample{g, reshape(out.values, shape)};
        };
        InvertComparison cmp = invert_compare(spec, spec_sur, y);
        write_f64(cfg.out + "/posterior_mean_solver.bin", cmp.solver.posterior_mean.values.data(),
                  cmp.solver.posterior_mean.values.size());
        write_f64(cfg.out + "/posterior_mean_surrogate.bin",
                  cmp.surrogate.posterior_mean.values.data(),
                  cmp.surrogate.posterior_mean.values.size());
        std::ofstream csv(cfg.out + "/invert.csv");
        csv.precision(17);
        csv << "forward,seconds_per_call,acceptance_rate,posterior_mean_rel_l2\n";
        csv << "solver," << cmp.solver_seconds_per_call << ',' << cmp.solver.acceptance_rate
            << ',' << cmp.posterior_mean_rel_l2 << '\n';
        csv << "surrogate," << cmp.surrogate_seconds_per_call << ','
            << cmp.surrogate.acceptance_rate << ',' << cmp.posterior_mean_rel_l2 << '\n';
    } else {
        ChainResult res = pcn_chain(spec, y);
        write_f64(cfg.out + "/posterior_mean.bin", res.posterior_mean.values.data(),
                  res.posterior_mean.values.size());
        std::ofstream csv(cfg.out + "/invert.csv");
        csv.precision(17);
        csv << "forward,seconds_per_call,acceptance_rate,posterior_mean_rel_l2\n";
        csv << "solver,," << res.acceptance_rate << ",\n";
        if (res.acceptance_warning) {
            std::ofstream warn(cfg.out + "/warning.txt");
            warn << res.warning << '\n';
        }
    }
    write_resolved_config(cfg, cfg.out);
    return cfg.out + "/invert.csv";
}

std::string cmd_spectra(const RunConfig& cfg) {
    if (!cfg.eval.contains("dataset")) throw ConfigError("missing config key eval.dataset");
    Dataset ds = load_dataset(cfg.eval.at("dataset").get<std::string>());
    std::filesystem::create_directories(cfg.out);
    std::ofstream slopes(cfg.out + "/slopes.csv");
    slopes.precision(17);
    slopes << "sample,slope\n";
    for (std::size_t i = 0; i < ds.outputs.size(); ++i) {
        FieldSample snap = last_channel(ds.outputs[i]);
        SpectrumProfile p = spectrum(snap);
        std::ofstream txt(cfg.out + "/spectrum_" + std::to_string(i) + ".txt");
        txt.precision(17);
        for (std::size_t k = 0; k < p.wavenumber.size(); ++k)
            txt << p.wavenumber[k] << ' ' << p.magnitude[k] << '\n';
        double slope = std::numeric_limits<double>::quiet_NaN();
        try {
            slope = fit_loglog_slope(p, 4.0, double(snap.grid.sizes[0]) / 6.0);
        } catch (const ConfigError&) {
            // too few usable bins: slope stays NaN
        }
        slopes << i << ',' << slope << '\n';
    }
    write_resolved_config(cfg, cfg.out);
    return cfg.out + "/slopes.csv";
}

int run_command(const std::string& command, const RunConfig& cfg, std::string& message) {
    try {
        if (command == "gen-data") message = cmd_gen_data(cfg);
        else if (command == "train") message = cmd_train(cfg);
        else if (command == "eval") message = cmd_eval(cfg);
        else if (command == "superres") message = cmd_superres(cfg);
        else if (command == "invert") message = cmd_invert(cfg);
        else if (command == "spectra") message = cmd_spectra(cfg);
        else {
            message = "unknown command: " + command;
            return 2;
        }
        return 0;
    } catch (const SolverError& e) {
        message = e.what();
        return 3;
    } catch (const DomainError& e) {
        message = e.what();
        return 3;
    } catch (const ConfigError& e) {
        message = e.what();
        return 2;
    } catch (const ContractError& e) {
        message = e.what();
        return 2;
    } catch (const ShapeError& e) {
        message = e.what();
        return 2;
    } catch (const nlohmann::json::exception& e) {
        message = e.what();
        return 2;
    }
}

} // namespace nop
