#include "commands.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cace/data.hpp"
#include "cace/gradcheck.hpp"
#include "cace/model.hpp"
#include "cace/postproc.hpp"
#include "cace/train.hpp"

namespace fs = std::filesystem;

namespace cace::cli {

namespace {

void ensure_out_dir(const std::string& dir, bool force) {
    fs::path p(dir);
    if (fs::exists(p) && !fs::is_empty(p) && !force)
        throw DataError("output directory " + dir + " is not empty (use --force to overwrite)");
    fs::create_directories(p);
}

std::string checkpoint_name(long iter) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06ld.bin", iter);
    return buf;
}

// Training and evaluation run at the model's input resolution; samples at a
// different size are resampled and their ground truth re-derived from the
// resampled mask.
std::vector<SegmentationSample> fit_to_model(std::vector<SegmentationSample> samples,
                                             const ModelConfig& mc);

std::vector<SegmentationSample> fit_to_model(std::vector<SegmentationSample> samples,
                                             const ModelConfig& mc) {
    for (SegmentationSample& s : samples) {
        if (s.image.h() == mc.input_h && s.image.w() == mc.input_w) continue;
        s.image = resize_bilinear(s.image, mc.input_h, mc.input_w);
        s.mask = resize_mask_nearest(s.mask, mc.input_h, mc.input_w);
        s.gt_boundary = boundary_of(s.mask);
    }
    return samples;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool force) {
    ensure_out_dir(out_dir, force);
    SynthSpec spec = cfg.synth_spec();
    const long count = cfg.get_long("synth.count");
    if (count < 2) throw ConfigError("synth.count must be >= 2");
    std::vector<SegmentationSample> samples = generate(spec, count);
    auto [train_ids, test_ids] = split_indices(count, cfg.get_double("synth.train_fraction"),
                                               cfg.sub_seed("split"));
    std::vector<DatasetEntry> manifest(size_t(count), DatasetEntry{});
    for (long i = 0; i < count; ++i) manifest[size_t(i)] = {i, "test"};
    for (long id : train_ids) manifest[size_t(id)].split = "train";
    write_dataset(out_dir, samples, manifest);
    cfg.write_resolved((fs::path(out_dir) / "config.resolved").string());
    std::cout << "wrote " << count << " samples (" << train_ids.size() << " train / "
              << test_ids.size() << " test) to " << out_dir << "\n";
}

void cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
    fs::create_directories(out_dir);
    ModelConfig mc = cfg.model_config();
    TrainConfig tc = cfg.train_config();
    std::vector<SegmentationSample> train_set = fit_to_model(read_split(data_dir, "train"), mc);

    CaceNet net(mc, cfg.sub_seed("init"));
    std::function<void(long, const CaceNet&)> checkpoint_fn;
    if (tc.checkpoint_every > 0)
        checkpoint_fn = [&](long iter, const CaceNet& n) {
            n.save((fs::path(out_dir) / checkpoint_name(iter)).string());
        };
    TrainResult result = train(net, train_set, tc, checkpoint_fn);

    net.save((fs::path(out_dir) / "checkpoint.bin").string());
    write_loss_csv((fs::path(out_dir) / "loss.csv").string(), result.history);
    cfg.write_resolved((fs::path(out_dir) / "config.resolved").string());
    std::cout << "trained " << tc.max_iter << " iterations, final loss " << result.final_loss
              << ", checkpoint in " << out_dir << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& data_dir,
              const std::vector<std::string>& checkpoints, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<EvalReport> reports;
    for (const std::string& ckpt : checkpoints) {
        CaceNet net = CaceNet::load(ckpt);
        std::vector<SegmentationSample> test_set =
            fit_to_model(read_split(data_dir, "test"), net.config());
        reports.push_back(evaluate(net, test_set, cfg.get_double("eval.threshold"),
                                   cfg.get_long("eval.min_area")));
    }
    write_eval_csv((fs::path(out_dir) / "eval.csv").string(), reports);
    cfg.write_resolved((fs::path(out_dir) / "config.resolved").string());
    std::cout << format_eval_table(reports);
}

void cmd_predict(const RunConfig& cfg, const std::string& checkpoint,
                 const std::string& image_path, const std::string& gt_boundary_path,
                 const std::string& out_dir) {
    fs::create_directories(out_dir);
    CaceNet net = CaceNet::load(checkpoint);
    Tensor image = read_pgm(image_path);
    if (image.h() != net.config().input_h || image.w() != net.config().input_w)
        image = resize_bilinear(image, net.config().input_h, net.config().input_w);

    Tensor prob = net.forward(image);
    long min_area = cfg.get_long("eval.min_area");
    if (min_area < 0) min_area = default_min_area(image.h(), image.w());
    Tensor mask = remove_small_components(binarize(prob, cfg.get_double("eval.threshold")),
                                          min_area);
    BoundaryCurve pred = boundary_of(mask);

    write_pgm((fs::path(out_dir) / "mask.pgm").string(), mask);
    write_boundary_csv((fs::path(out_dir) / "boundary.csv").string(), pred);
    std::vector<OverlayCurve> curves{{&pred, 255, 0, 0}};
    BoundaryCurve gt;
    if (!gt_boundary_path.empty()) {
        gt = read_boundary_csv(gt_boundary_path, size_t(image.w()));
        curves.push_back({&gt, 0, 255, 0});
    }
    write_overlay((fs::path(out_dir) / "overlay.ppm").string(), image, curves);
    std::cout << "wrote mask, boundary and overlay to " << out_dir << "\n";
}

bool cmd_gradcheck(const RunConfig& cfg) {
    auto rows = run_gradcheck_suite(cfg.sub_seed("gradcheck"));
    std::cout << format_gradcheck_table(rows);
    return gradcheck_passed(rows);
}

int run(int argc, char** argv) {
    CLI::App app{"channel-attention context encoder segmentation pipeline"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_file;
    std::vector<std::string> sets;
    long seed = 0;
    bool seed_given = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "configuration file (key=value lines)");
        sub->add_option("--set", sets, "override a configuration key, e.g. model.base_width=8");
        sub->add_option("--seed", seed, "top-level seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    std::string out_dir, data_dir, image_path, gt_path, attention;
    std::vector<std::string> checkpoints;
    bool force = false;
    long count = -1, iters = -1;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_option("--count", count, "number of samples");
    synth->add_flag("--force", force, "allow writing into a non-empty directory");

    CLI::App* train = app.add_subcommand("train", "train a model");
    add_common(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--attention", attention, "on|off (off trains the plain context module)");
    train->add_option("--iters", iters, "training iterations");

    CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on the test split");
    add_common(eval);
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)")->required();
    eval->add_option("--out", out_dir, "output directory")->required();

    CLI::App* predict = app.add_subcommand("predict", "segment one image");
    add_common(predict);
    predict->add_option("--checkpoint", checkpoints, "checkpoint file")->required();
    predict->add_option("--image", image_path, "input PGM image")->required();
    predict->add_option("--gt", gt_path, "ground-truth boundary csv for the overlay");
    predict->add_option("--out", out_dir, "output directory")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(gradcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (!config_file.empty()) cfg.load_file(config_file);
        for (const std::string& kv : sets) cfg.set_flag_assignment(kv);
        if (seed_given) cfg.set_flag("seed", std::to_string(seed));
        if (count >= 0) cfg.set_flag("synth.count", std::to_string(count));
        if (iters >= 0) cfg.set_flag("train.max_iter", std::to_string(iters));
        if (!attention.empty()) cfg.set_flag("model.attention", attention);

        if (synth->parsed()) cmd_synth(cfg, out_dir, force);
        else if (train->parsed()) cmd_train(cfg, data_dir, out_dir);
        else if (eval->parsed()) cmd_eval(cfg, data_dir, checkpoints, out_dir);
        else if (predict->parsed())
            cmd_predict(cfg, checkpoints.at(0), image_path, gt_path, out_dir);
        else if (gradcheck->parsed()) {
            if (!cmd_gradcheck(cfg)) {
                std::cerr << "gradcheck failed\n";
                return kExitNumeric;
            }
        }
        return kExitOk;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cace::cli
