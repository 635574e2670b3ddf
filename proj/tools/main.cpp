#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "marl/config.hpp"
#include "marl/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Cooperative multi-agent RL lab with a sparse-attention auxiliary head"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    bool quiet = false;
    app.add_flag("--quiet", quiet, "Suppress progress output");

    auto* train_cmd = app.add_subcommand("train", "Train every configured seed");
    train_cmd->add_option("config", config_path, "Run config (flat JSON)")->required();
    train_cmd->add_option("--out", out_override, "Override the output directory");

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the 6-condition ablation grid");
    ablate_cmd->add_option("config", config_path, "Run config (flat JSON)")->required();
    ablate_cmd->add_option("--out", out_override, "Override the output directory");

    std::string ckpt_path;
    uint64_t inspect_seed = 0;
    long inspect_steps = 200;
    std::string inspect_out = "inspect";
    auto* inspect_cmd =
        app.add_subcommand("inspect-attention", "Dump per-entity attention weights to CSV");
    inspect_cmd->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
    inspect_cmd->add_option("--seed", inspect_seed, "Environment seed")->required();
    inspect_cmd->add_option("--steps", inspect_steps, "Greedy env steps to dump")->required();
    inspect_cmd->add_option("--out", inspect_out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (inspect_cmd->parsed())
            return marl::cmd_inspect_attention(ckpt_path, inspect_seed, inspect_steps,
                                               inspect_out, quiet);
        marl::RunConfig cfg = marl::parse_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        return train_cmd->parsed() ? marl::cmd_train(cfg, quiet) : marl::cmd_ablate(cfg, quiet);
    } catch (const marl::FileNotFound& e) {
        std::cerr << e.what() << std::endl;
        return 1;
    } catch (const marl::ParseError& e) {
        std::cerr << e.what() << std::endl;
        return 1;
    } catch (const marl::ValidationError& e) {
        std::cerr << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << std::endl;
        return 2;
    }
}
