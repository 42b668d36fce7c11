// Command-line front end: gen-data, train, eval, superres, invert, spectra.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nopkit/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"operator-learning pipeline (datasets, training, evaluation, inversion)"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::vector<std::string> sets;
    std::string command;

    for (const char* name : {"gen-data", "train", "eval", "superres", "invert", "spectra"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--out", out, "output directory (default: config out, then $NOPKIT_OUT)");
        sub->add_option("--set", sets, "override: section.key=value (JSON-parsed when possible)");
        sub->callback([&command, name]() { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::string message;
    int code;
    try {
        nop::RunConfig cfg = nop::load_run_config(config_path, sets);
        if (!out.empty())
            cfg.out = out;
        else if (cfg.out == "out")
            if (const char* env = std::getenv("NOPKIT_OUT")) cfg.out = env;
        code = nop::run_command(command, cfg, message);
    } catch (const nop::Error& e) {
        message = e.what();
        code = 2;
    }
    if (code == 0)
        std::cout << message << '\n';
    else
        std::cerr << "error: " << message << '\n';
    return code;
}
