#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "advmidi/config.hpp"
#include "advmidi/error.hpp"
#include "advmidi/pipeline.hpp"

using namespace advmidi;

int main(int argc, char** argv) {
    CLI::App app{"Adversarial masked pre-training and fine-tuning for Octuple-tokenized MIDI"};
    app.require_subcommand(1);

    std::string config_path, preset_name, task_name, checkpoint;
    std::optional<std::uint64_t> seed;
    bool resume = false;

    app.add_option("--config", config_path, "YAML run configuration")->check(CLI::ExistingFile);
    app.add_option("--preset", preset_name, "desk (default) or paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", seed, "overrides the configured seed");

    auto* tokenize = app.add_subcommand("tokenize", "MIDI directory -> token corpus");
    auto* synth = app.add_subcommand("synth", "write the synthetic labeled corpus");
    auto* pretrain = app.add_subcommand("pretrain", "adversarial pre-training");
    pretrain->add_flag("--resume", resume, "continue from the latest checkpoint");
    auto* finetune = app.add_subcommand("finetune", "mask fine-tuning on a downstream task");
    finetune->add_option("--task", task_name, "composer, emotion, melody or velocity")->required();
    finetune->add_option("--checkpoint", checkpoint, "pre-trained checkpoint to start from");
    finetune->add_flag("--resume", resume, "continue from the latest fine-tuning checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "test-split report of a fine-tuned checkpoint");
    evaluate->add_option("--task", task_name, "composer, emotion, melody or velocity")->required();
    evaluate->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    try {
        std::optional<Preset> preset;
        if (!preset_name.empty()) preset = preset_from_name(preset_name);
        RunConfig cfg = config_path.empty() ? RunConfig::defaults(preset.value_or(Preset::Desk))
                                            : load_config(config_path, preset);
        if (seed) cfg.seed = *seed;

        RunOptions opt;
        opt.resume = resume;
        opt.log = &std::cout;

        if (*tokenize) {
            cmd_tokenize(cfg, opt);
        } else if (*synth) {
            cmd_synth(cfg, opt);
        } else if (*pretrain) {
            cmd_pretrain(cfg, opt);
        } else if (*finetune) {
            cmd_finetune(cfg, TaskSpec::by_name(task_name), checkpoint, opt);
        } else if (*evaluate) {
            cmd_evaluate(cfg, TaskSpec::by_name(task_name), checkpoint, opt);
        }
    } catch (const Error& e) {
        std::cerr << e.category() << ": " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 6;
    }
    return 0;
}
