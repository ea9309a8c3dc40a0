#include <CLI11.hpp>
#include <string>
#include <vector>

#include "qbsde/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"qbsde - constrained quadratic BSDE solver and theorem harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string n_spec = "50,100,200,400";

    auto* cmd_run = app.add_subcommand("run", "run the experiment described by a JSON config");
    cmd_run->add_option("config", config_path, "config file")->required();

    auto* cmd_validate =
        app.add_subcommand("validate", "schema-check a config without running it");
    cmd_validate->add_option("config", config_path, "config file")->required();

    auto* cmd_converge =
        app.add_subcommand("converge", "lattice convergence table over a list of step counts");
    cmd_converge->add_option("config", config_path, "config file")->required();
    cmd_converge->add_option("--N", n_spec, "comma-separated step counts");

    CLI11_PARSE(app, argc, argv);

    if (cmd_run->parsed()) return qbsde::run(config_path);
    if (cmd_validate->parsed()) return qbsde::validate(config_path);
    if (cmd_converge->parsed()) {
        std::vector<int> Ns;
        std::string tok;
        std::istringstream ss(n_spec);
        while (std::getline(ss, tok, ',')) {
            try {
                Ns.push_back(std::stoi(tok));
            } catch (...) {
                std::cerr << "config error: bad --N entry '" << tok << "'\n";
                return 2;
            }
        }
        return qbsde::converge(config_path, Ns);
    }
    return 2;
}
