// Command-line entry point. One subcommand per pipeline stage; flags are
// shared across subcommands and hash into the content address of each
// stage's artifacts. Exit 0 on success, 1 on any pipeline error, 2 on usage
// errors.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "hiergen/error.hpp"
#include "hiergen/pipeline.hpp"

int main(int argc, char** argv) {
    hiergen::run_config cfg;
    std::string out_flag;

    CLI::App app{"hiergen: signal-conditioned scale-wise image generation"};
    app.require_subcommand(1);

    app.add_option("--seed", cfg.seed, "run seed (default 7)");
    app.add_option("--out", out_flag, "output directory (default: $HIERGEN_OUT, then ./out)");
    app.add_option("--count", cfg.count, "dataset size for gen-data");
    app.add_option("--noise-sigma", cfg.noise_sigma, "signal noise level");
    app.add_option("--train-count", cfg.train_count, "training split size");
    app.add_option("--eval-count", cfg.eval_count, "held-out split size");
    app.add_option("--schedule", cfg.schedule_csv, "scale sides, e.g. 1,2,4,8,16");
    app.add_option("--n-codes", cfg.n_codes, "codebook size");
    app.add_option("--tau", cfg.tau, "contrastive temperature");
    app.add_option("--gen-depth", cfg.gen_depth, "generator transformer depth");
    app.add_option("--tok-steps", cfg.tok_steps, "tokenizer training steps");
    app.add_option("--tok-batch", cfg.tok_batch, "tokenizer batch size");
    app.add_option("--tok-lr", cfg.tok_lr, "tokenizer peak learning rate");
    app.add_option("--tok-warmup", cfg.tok_warmup, "tokenizer warmup steps");
    app.add_option("--enc-steps", cfg.enc_steps, "encoder training steps");
    app.add_option("--enc-batch", cfg.enc_batch, "encoder batch size");
    app.add_option("--enc-lr", cfg.enc_lr, "encoder peak learning rate");
    app.add_option("--enc-warmup", cfg.enc_warmup, "encoder warmup steps");
    app.add_option("--gen-steps", cfg.gen_steps, "generator training steps");
    app.add_option("--gen-batch", cfg.gen_batch, "generator batch size");
    app.add_option("--gen-lr", cfg.gen_lr, "generator peak learning rate");
    app.add_option("--gen-warmup", cfg.gen_warmup, "generator warmup steps");
    app.add_option("--supervision", cfg.supervision, "hierarchy supervision: full|final|single")
        ->check(CLI::IsMember({"full", "final", "single"}));
    app.add_option("--route", cfg.route, "guidance route: coarse2fine|inverted")
        ->check(CLI::IsMember({"coarse2fine", "inverted"}));
    app.add_option("--mapping", cfg.mapping, "teacher layer mapping: balanced|late|early")
        ->check(CLI::IsMember({"balanced", "late", "early"}));
    app.add_flag("--greedy,!--sample", cfg.greedy, "greedy decoding (--sample for top-k)");
    app.add_option("--top-k", cfg.top_k, "top-k for sampled decoding");
    app.add_option("--temperature", cfg.temperature, "sampling temperature");
    app.add_option("--n-candidates", cfg.n_candidates, "candidates per reconstruction");
    app.add_option("--trials", cfg.trials, "two-way identification trials per sample");
    app.add_option("--raster", cfg.raster_side, "raster baseline grid side for bench");

    struct stage_entry {
        const char* name;
        const char* desc;
        hiergen::stage_result (*fn)(const hiergen::run_config&);
        CLI::App* sub = nullptr;
    };
    stage_entry stages[] = {
        {"gen-data", "generate the synthetic signal/image dataset", hiergen::stage_gen_data},
        {"train-tokenizer", "train the multi-scale image tokenizer",
         hiergen::stage_train_tokenizer},
        {"train-encoder", "train the hierarchical signal encoder",
         hiergen::stage_train_encoder},
        {"train-generator", "train the scale-wise token generator",
         hiergen::stage_train_generator},
        {"reconstruct", "decode held-out signals into images", hiergen::stage_reconstruct},
        {"evaluate", "score reconstructions and write the report", hiergen::stage_evaluate},
        {"bench", "attention-pair comparison of decoding regimes", hiergen::stage_bench},
        {"gradcheck", "finite-difference gradient verification", hiergen::stage_gradcheck},
    };
    for (stage_entry& s : stages) {
        s.sub = app.add_subcommand(s.name, s.desc);
        s.sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    cfg.out_dir = hiergen::resolve_out_dir(out_flag);

    for (const stage_entry& s : stages) {
        if (!s.sub->parsed()) continue;
        try {
            hiergen::stage_result r = s.fn(cfg);
            for (const auto& [k, v] : r.notes) std::cout << k << "=" << v << "\n";
            for (const std::string& a : r.artifacts) std::cout << "artifact=" << a << "\n";
            return 0;
        } catch (const hiergen::error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    std::cerr << "usage error: no subcommand given\n";
    return 2;
}
