// Command-line front end; everything runs through the shared-library C API.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmunext.h"

namespace {

[[noreturn]] void fail(cmx_status status) {
    std::fprintf(stderr, "error (%s): %s\n", cmx_status_name(status), cmx_last_error());
    std::exit(status == CMX_ERROR_CONFIG ? 2 : 1);
}

void check(cmx_status status) {
    if (status != CMX_OK) fail(status);
}

struct ModelArgs {
    std::string variant = "cmunext";
    std::vector<int> channels, depths, kernels;
    int in_channels = 3;
    std::string arch = "cmunext";  // cmunext | hybrid | unet
};

void add_model_options(CLI::App* sub, ModelArgs& args) {
    sub->add_option("--variant", args.variant, "Preset: cmunext-s, cmunext, cmunext-l")
        ->capture_default_str();
    sub->add_option("--channels", args.channels, "Explicit C1..C5 (overrides --variant)")
        ->delimiter(',')
        ->expected(5);
    sub->add_option("--depths", args.depths, "Explicit L1..L5")->delimiter(',')->expected(5);
    sub->add_option("--kernels", args.kernels, "Explicit K1..K5")->delimiter(',')->expected(5);
    sub->add_option("--in-channels", args.in_channels, "Input image channels")
        ->capture_default_str();
    sub->add_option("--arch", args.arch,
                    "cmunext (full), hybrid (cmunext encoder, double-conv fusion), unet")
        ->check(CLI::IsMember({"cmunext", "hybrid", "unet"}))
        ->capture_default_str();
}

cmx_model* build_model(const ModelArgs& args, uint64_t seed) {
    cmx_model* model = nullptr;
    const bool custom = !args.channels.empty();
    if (custom) {
        int depths[5] = {1, 1, 1, 1, 1};
        int kernels[5] = {3, 3, 3, 3, 3};
        for (std::size_t i = 0; i < 5 && i < args.depths.size(); ++i) depths[i] = args.depths[i];
        for (std::size_t i = 0; i < 5 && i < args.kernels.size(); ++i) kernels[i] = args.kernels[i];
        if (args.arch == "unet") {
            check(cmx_model_create_unet(args.channels.data(), args.in_channels, seed, &model));
        } else {
            check(cmx_model_create_custom(args.channels.data(), depths, kernels, args.in_channels,
                                          seed, &model));
        }
    } else if (args.arch == "unet") {
        // variant channel widths with the double-conv wiring
        cmx_model* tmp = nullptr;
        check(cmx_model_create(args.variant.c_str(), args.in_channels, seed, &tmp));
        cmx_model* no_fusion = nullptr;
        check(cmx_model_substitute(tmp, "skip-fusion", 0, &no_fusion));
        cmx_model_free(tmp);
        check(cmx_model_substitute(no_fusion, "encoder-blocks", 0, &model));
        cmx_model_free(no_fusion);
        return model;
    } else {
        check(cmx_model_create(args.variant.c_str(), args.in_channels, seed, &model));
    }
    if (args.arch == "hybrid") {
        cmx_model* hybrid = nullptr;
        check(cmx_model_substitute(model, "skip-fusion", 0, &hybrid));
        cmx_model_free(model);
        return hybrid;
    }
    return model;
}

struct SyntheticSpec {
    int n = 0;
    int size = 64;
    uint64_t seed = 0;
};

// "n=32,size=64,seed=0"
SyntheticSpec parse_synthetic(const std::string& text) {
    SyntheticSpec spec;
    std::string part;
    std::istringstream is(text);
    while (std::getline(is, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: bad synthetic spec entry '%s'\n", part.c_str());
            std::exit(2);
        }
        const std::string key = part.substr(0, eq);
        const std::string value = part.substr(eq + 1);
        if (key == "n") {
            spec.n = std::stoi(value);
        } else if (key == "size") {
            spec.size = std::stoi(value);
        } else if (key == "seed") {
            spec.seed = std::stoull(value);
        } else {
            std::fprintf(stderr, "error: unknown synthetic spec key '%s'\n", key.c_str());
            std::exit(2);
        }
    }
    if (spec.n <= 0) {
        std::fprintf(stderr, "error: synthetic spec needs n>0, e.g. n=32,size=64\n");
        std::exit(2);
    }
    return spec;
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> seeds;
    std::string part;
    std::istringstream is(text);
    while (std::getline(is, part, ',')) {
        seeds.push_back(std::stoull(part));
    }
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CMUNeXt medical image segmentation toolkit"};
    app.set_config("--config", "", "Read options from a key=value config file");
    app.require_subcommand(0, 1);
    bool print_config = false;
    app.add_flag("--print-config", print_config,
                 "Print the effective configuration and exit");

    // ---- train ----
    auto* train = app.add_subcommand("train", "Train a model and write artifacts");
    train->configurable();
    ModelArgs train_model;
    add_model_options(train, train_model);
    std::string train_data, train_synth, train_out = "run";
    int train_size = 256, train_epochs = 300, train_batch = 8;
    double train_lr = 0.01, train_momentum = 0.9, train_wd = 1e-4, train_poly = 0.9;
    double train_fraction = -1.0;
    uint64_t train_seed = 0, train_split_seed = 0;
    bool no_augment = false;
    train->add_option("--data", train_data, "Corpus directory holding images/ and masks/");
    train->add_option("--synthetic", train_synth, "Synthetic corpus spec, e.g. n=32,size=64");
    train->add_option("--size", train_size, "Resize target for --data corpora")
        ->capture_default_str();
    train->add_option("--epochs", train_epochs)->capture_default_str();
    train->add_option("--batch", train_batch)->capture_default_str();
    train->add_option("--lr", train_lr)->capture_default_str();
    train->add_option("--momentum", train_momentum)->capture_default_str();
    train->add_option("--weight-decay", train_wd)->capture_default_str();
    train->add_option("--poly-power", train_poly)->capture_default_str();
    train->add_option("--train-fraction", train_fraction,
                      "Train split fraction; default 0.7 for --data, 1.0 for --synthetic");
    train->add_option("--split-seed", train_split_seed)->capture_default_str();
    train->add_option("--seed", train_seed)->capture_default_str();
    train->add_flag("--no-augment", no_augment, "Disable rotation/flip augmentation");
    train->add_option("--out", train_out, "Artifact directory")->capture_default_str();

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Evaluate weights; prints IoU/F1 per split seed");
    eval->configurable();
    ModelArgs eval_model;
    add_model_options(eval, eval_model);
    std::string eval_weights, eval_data, eval_synth, eval_dump, eval_seeds = "0,1,2";
    int eval_size = 256;
    double eval_fraction = -1.0, eval_threshold = 0.5;
    bool eval_on_train = false;
    uint64_t eval_model_seed = 0;
    eval->add_option("--weights", eval_weights, "Weight container to load")->required();
    eval->add_option("--data", eval_data, "Corpus directory holding images/ and masks/");
    eval->add_option("--synthetic", eval_synth, "Synthetic corpus spec, e.g. n=32,size=64");
    eval->add_option("--size", eval_size)->capture_default_str();
    eval->add_option("--seeds", eval_seeds, "Split seeds, comma separated")->capture_default_str();
    eval->add_option("--train-fraction", eval_fraction,
                     "Split fraction; default 0.7 for --data, 1.0 for --synthetic");
    eval->add_option("--threshold", eval_threshold)->capture_default_str();
    eval->add_flag("--on-train", eval_on_train, "Evaluate the train side of each split");
    eval->add_option("--dump-masks", eval_dump, "Write predicted masks as PNGs here");
    eval->add_option("--model-seed", eval_model_seed, "Seed for the (overwritten) initial weights")
        ->capture_default_str();

    // ---- inspect ----
    auto* inspect = app.add_subcommand("inspect", "Print the per-layer complexity table");
    inspect->configurable();
    ModelArgs inspect_model;
    add_model_options(inspect, inspect_model);
    int inspect_size = 256, inspect_fpm = 1;
    std::string inspect_csv;
    inspect->add_option("--size", inspect_size, "Input H=W for op counting")
        ->capture_default_str();
    inspect->add_option("--flops-per-mac", inspect_fpm, "1 (MAC=FLOP) or 2 (strict)")
        ->check(CLI::IsMember({1, 2}))
        ->capture_default_str();
    inspect->add_option("--csv", inspect_csv, "Also write layer-name,params,ops lines here");

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "Measure eval-mode forward FPS");
    bench->configurable();
    ModelArgs bench_model;
    add_model_options(bench, bench_model);
    int bench_size = 256, bench_warmup = 1, bench_iters = 5;
    uint64_t bench_seed = 0;
    bench->add_option("--size", bench_size)->capture_default_str();
    bench->add_option("--warmup", bench_warmup)->capture_default_str();
    bench->add_option("--iters", bench_iters)->capture_default_str();
    bench->add_option("--seed", bench_seed)->capture_default_str();

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic PNG corpus");
    gen->configurable();
    int gen_n = 32, gen_size = 64;
    uint64_t gen_seed = 0;
    std::string gen_out = "synthetic";
    gen->add_option("--n", gen_n, "Sample count")->capture_default_str();
    gen->add_option("--gen-size", gen_size, "Image size (divisible by 16)")->capture_default_str();
    gen->add_option("--seed", gen_seed)->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (print_config) {
        std::fputs(app.config_to_str(true, false).c_str(), stdout);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::fputs(app.help().c_str(), stdout);
        return 2;
    }

    if (train->parsed()) {
        cmx_model* model = build_model(train_model, train_seed);
        cmx_train_options opts;
        cmx_train_options_init(&opts);
        SyntheticSpec synth;
        if (!train_synth.empty()) {
            synth = parse_synthetic(train_synth);
            opts.synthetic_count = synth.n;
            opts.synthetic_size = synth.size;
            opts.synthetic_seed = synth.seed;
            opts.train_fraction = 1.0;
        }
        if (!train_data.empty()) {
            opts.data_dir = train_data.c_str();
            opts.train_fraction = 0.7;
        }
        if (train_fraction >= 0.0) opts.train_fraction = train_fraction;
        opts.image_size = train_size;
        opts.epochs = train_epochs;
        opts.batch_size = train_batch;
        opts.lr = static_cast<float>(train_lr);
        opts.momentum = static_cast<float>(train_momentum);
        opts.weight_decay = static_cast<float>(train_wd);
        opts.poly_power = static_cast<float>(train_poly);
        opts.augment = no_augment ? 0 : 1;
        opts.seed = train_seed;
        opts.split_seed = train_split_seed;
        opts.out_dir = train_out.c_str();

        double final_loss = 0.0, final_iou = 0.0;
        check(cmx_train(model, &opts, &final_loss, &final_iou));
        std::printf("final train loss %.6f, final val IoU %.4f\n", final_loss, final_iou);
        std::printf("artifacts written to %s\n", train_out.c_str());
        cmx_model_free(model);
        return 0;
    }

    if (eval->parsed()) {
        cmx_model* model = build_model(eval_model, eval_model_seed);
        check(cmx_model_load_weights(model, eval_weights.c_str()));

        cmx_eval_options opts;
        cmx_eval_options_init(&opts);
        SyntheticSpec synth;
        if (!eval_synth.empty()) {
            synth = parse_synthetic(eval_synth);
            opts.synthetic_count = synth.n;
            opts.synthetic_size = synth.size;
            opts.synthetic_seed = synth.seed;
            opts.train_fraction = 1.0;
        }
        if (!eval_data.empty()) {
            opts.data_dir = eval_data.c_str();
            opts.train_fraction = 0.7;
        }
        if (eval_fraction >= 0.0) opts.train_fraction = eval_fraction;
        opts.image_size = eval_size;
        opts.threshold = static_cast<float>(eval_threshold);
        opts.use_val_split = eval_on_train ? 0 : 1;
        if (!eval_dump.empty()) opts.dump_dir = eval_dump.c_str();

        double iou_sum = 0.0, f1_sum = 0.0;
        const std::vector<uint64_t> seeds = parse_seeds(eval_seeds);
        for (uint64_t seed : seeds) {
            opts.split_seed = seed;
            cmx_eval_result res;
            check(cmx_evaluate(model, &opts, &res));
            std::printf("seed %" PRIu64 ": iou=%.4f f1=%.4f loss=%.6f (%d samples)\n", seed,
                        res.iou, res.f1, res.loss, res.sample_count);
            iou_sum += res.iou;
            f1_sum += res.f1;
        }
        std::printf("mean: iou=%.4f f1=%.4f over %zu seeds\n",
                    iou_sum / static_cast<double>(seeds.size()),
                    f1_sum / static_cast<double>(seeds.size()), seeds.size());
        cmx_model_free(model);
        return 0;
    }

    if (inspect->parsed()) {
        cmx_model* model = build_model(inspect_model, 0);
        char* table = nullptr;
        check(cmx_complexity_table(model, inspect_size, inspect_size, inspect_fpm, &table));
        std::fputs(table, stdout);
        cmx_string_free(table);
        char* card = nullptr;
        check(cmx_model_card_text(model, &card));
        std::fputs(card, stdout);
        cmx_string_free(card);
        if (!inspect_csv.empty()) {
            check(cmx_complexity_csv(model, inspect_size, inspect_size, inspect_fpm,
                                     inspect_csv.c_str()));
        }
        cmx_model_free(model);
        return 0;
    }

    if (bench->parsed()) {
        cmx_model* model = build_model(bench_model, bench_seed);
        char* hw = nullptr;
        check(cmx_hardware_descriptor(&hw));
        std::printf("hardware: %s\n", hw);
        cmx_string_free(hw);
        double fps = 0.0;
        check(cmx_bench(model, bench_size, bench_size, bench_warmup, bench_iters, &fps));
        std::printf("%s @ %dx%d: %.2f fps\n",
                    bench_model.channels.empty() ? bench_model.variant.c_str() : "custom",
                    bench_size, bench_size, fps);
        cmx_model_free(model);
        return 0;
    }

    if (gen->parsed()) {
        check(cmx_generate_synthetic(gen_n, gen_size, gen_seed, gen_out.c_str()));
        std::printf("wrote %d samples under %s\n", gen_n, gen_out.c_str());
        return 0;
    }

    return 0;
}
