// Command-line front end: nibb_cli <command> --config <path> --out <dir>
// [--seed N] [--workers N] [--s X].

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nibb/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Nonintersecting Brownian bridge simulator and verification harness"};
    app.require_subcommand(1);

    struct Args {
        std::string config;
        std::string out = "out";
        std::optional<std::uint64_t> seed;
        std::optional<std::size_t> workers;
        std::optional<double> s;
    };
    Args args;

    const char* names[][2] = {{"simulate", "sample bridge paths"},
                              {"limitshape", "compute the limit shape"},
                              {"edgestats", "rescaled edge statistics against TW2"},
                              {"rigidity", "rigidity scaling across n"},
                              {"dominance", "rankwise dominance under shifted endpoints"},
                              {"tw2", "Tracy-Widom F2 oracle"}};
    for (auto& nm : names) {
        auto* sub = app.add_subcommand(nm[0], nm[1]);
        sub->add_option("--config", args.config, "JSON config file");
        sub->add_option("--out", args.out, "output directory");
        sub->add_option("--seed", args.seed, "override the config seed");
        sub->add_option("--workers", args.workers, "worker threads (0 = all cores)");
        if (std::string(nm[0]) == "tw2") sub->add_option("--s", args.s, "evaluate F2 at s");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(nibb::ExitCode::validation);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    std::optional<std::string> config;
    if (!args.config.empty()) config = args.config;
    return nibb::run_command(command, config, args.out, {args.seed, args.workers, args.s});
}
