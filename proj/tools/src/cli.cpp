#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acmseg/acm.hpp"
#include "acmseg/backbone.hpp"
#include "acmseg/data.hpp"
#include "acmseg/grad_check.hpp"
#include "acmseg/render.hpp"
#include "acmseg/trainer.hpp"

namespace acmseg::cli {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ArchConfig arch_preset(const std::string& name) {
    if (name == "desk") return ArchConfig::desk();
    if (name == "paper") return ArchConfig::paper();
    if (name == "tiny") return ArchConfig::tiny();
    throw UsageError("unknown --arch " + name);
}

void add_acm_flags(CLI::App* app, AcmOptions& acm, double& radius_frac) {
    app->add_option("--acm-iters", acm.max_iters, "Snake iterations per initialization")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--acm-step", acm.step_size, "Snake step size (pixels per unit gradient)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--nodes", acm.L, "Contour node count")->check(CLI::Range(3, 100000))->capture_default_str();
    app->add_option("--radius-frac", radius_frac, "Initial circle radius as a fraction of the image side")
        ->check(CLI::Range(1e-6, 0.5))
        ->capture_default_str();
}

// Images whose side is a multiple of the model input are box-downsampled;
// polygons are returned in model coordinates.
std::vector<Sample> fit_dataset(std::vector<Sample> ds, const ArchConfig& arch) {
    for (auto& s : ds) s = fit_to_size(s, arch.input_size);
    return ds;
}

void print_config(std::ostream& out, const CLI::App& app) {
    out << "# resolved config (" << app.get_name() << ")\n";
    std::istringstream lines(app.config_to_str(true, false));
    for (std::string line; std::getline(lines, line);) {
        if (line.empty() || line.rfind("config", 0) == 0) continue;
        out << "#   " << line << '\n';
    }
}

// CLI11 reads config files only for the top-level app, so a subcommand's
// --config is expanded into flags here. Keys already given on the command line
// are skipped, and unknown keys fail later as unexpected arguments.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::FileError& ex) {
        throw UsageError(std::string("--config: ") + ex.what());
    }
    const auto given = [&](const std::string& flag) {
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty()) throw UsageError("--config: sections are not supported (" + item.fullname() + ")");
        const std::string flag = "--" + item.name;
        if (given(flag)) continue;
        if (item.inputs.size() == 1) {
            args.push_back(flag + "=" + item.inputs.front());
        } else {
            args.push_back(flag);
            args.insert(args.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    return args;
}

// --- gen-data --------------------------------------------------------------

struct GenArgs {
    std::string out;
    SynthConfig synth;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
    const auto samples = generate(a.synth);
    save_dir(a.out, samples, synth_config_to_json(a.synth));
    out << "wrote " << samples.size() << " samples to " << a.out << '\n';
    return kOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
    std::string data, test_data, out, report;
    std::string arch = "desk", optimizer = "sgd", margin_rule = "hinge";
    int n_test = 0;
    TrainConfig cfg;
};

int cmd_train(TrainArgs a, std::ostream& out) {
    TrainConfig& cfg = a.cfg;
    cfg.arch = arch_preset(a.arch);
    if (a.optimizer == "adam") cfg.optimizer = Optimizer::adam;
    cfg.ssvm.margin_rule = a.margin_rule == "literal" ? MarginRule::literal : MarginRule::hinge;
    if (cfg.checkpoint_every > 0) cfg.checkpoint_path = a.out;

    auto all = fit_dataset(load_dir(a.data), cfg.arch);
    std::vector<Sample> train_set, test_set;
    if (a.n_test > 0) {
        auto sp = split_dataset(std::move(all), static_cast<std::size_t>(a.n_test), cfg.seed);
        train_set = std::move(sp.train);
        test_set = std::move(sp.test);
    } else {
        train_set = std::move(all);
    }
    if (!a.test_data.empty()) {
        auto extra = fit_dataset(load_dir(a.test_data), cfg.arch);
        for (auto& s : extra) test_set.push_back(std::move(s));
    }
    out << "train samples " << train_set.size() << ", test samples " << test_set.size() << '\n';

    auto result = train(train_set, cfg, [&](const EpochStats& e) {
        out << "epoch " << e.epoch << '/' << cfg.epochs << std::fixed << std::setprecision(4) << "  hinge "
            << e.mean_hinge << "  train_iou " << e.mean_train_iou << "  violated " << e.violated
            << std::setprecision(1) << "  (" << e.seconds << " s)\n"
            << std::defaultfloat << std::flush;
    });
    for (const auto& s : test_set) result.report.test_ids.push_back(s.id);
    if (!test_set.empty()) {
        const EvalResult ev = evaluate(result.params, test_set, cfg.acm, cfg.radius_frac);
        result.report.test_iou = ev.mean_iou;
        out << "test mean IoU " << std::fixed << std::setprecision(4) << ev.mean_iou << std::defaultfloat << '\n';
    }
    save_checkpoint(a.out, result.params, result.report);
    const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;
    std::ofstream(report_path) << report_to_json(result.report) << '\n';
    out << "checkpoint " << a.out << "\nreport " << report_path << '\n';
    return kOk;
}

// --- infer -------------------------------------------------------------------

struct InferArgs {
    std::string ckpt, image, gt, out, dump_maps, trace;
    AcmOptions acm;
    double radius_frac = kDefaultRadiusFrac;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
    const LoadedModel model = load_checkpoint(a.ckpt);
    const ArchConfig& arch = model.params.arch;
    Image img = read_image(a.image);
    if (img.width != img.height) throw std::invalid_argument(a.image + ": image must be square");
    int k = 1;
    std::optional<Polygon> gt;
    if (!a.gt.empty()) gt = read_polygon(a.gt);
    if (img.width != arch.input_size) {
        const Sample s = fit_to_size(make_sample("infer", img, gt ? *gt : circle({img.width / 2.0, img.height / 2.0},
                                                                                 img.width / 4.0, 8)),
                                     arch.input_size);
        k = img.width / arch.input_size;
        img = s.image;
        if (gt) gt = s.gt_polygon;
    }
    const PriorMaps maps = predict(model.params, img);
    if (!a.dump_maps.empty()) dump_maps(maps, a.dump_maps);
    const auto cands = infer_multi(maps, a.acm, a.radius_frac);

    std::size_t winner;
    if (gt) {
        const Mask m = rasterize(*gt, img.width, img.height);
        if (m.count() == 0) throw std::invalid_argument(a.gt + ": ground-truth polygon encloses no pixels");
        const Selection sel = select_best(cands, m);
        winner = sel.index;
        out << "iou " << std::fixed << std::setprecision(6) << sel.iou << std::defaultfloat << '\n';
    } else {
        winner = select_best_unsupervised(cands);
    }
    out << "winner " << winner << "  energy " << cands[winner].energy << "  iterations " << cands[winner].iterations
        << '\n';
    Polygon pred = cands[winner].poly;
    if (k > 1) {
        std::vector<Point> up;
        for (const auto& p : pred.nodes()) up.push_back({(p.u + 0.5) * k - 0.5, (p.v + 0.5) * k - 0.5});
        pred = Polygon(std::move(up));
    }
    write_polygon(a.out, pred);
    if (!a.trace.empty()) {
        const auto inits = init_polygons(maps.width(), maps.height(), a.radius_frac, a.acm.L);
        write_trace_csv(a.trace, evolve(inits[winner], maps, a.acm).trace);
    }
    out << "polygon " << a.out << '\n';
    return kOk;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, data, csv;
    AcmOptions acm;
    double radius_frac = kDefaultRadiusFrac;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const LoadedModel model = load_checkpoint(a.ckpt);
    const auto ds = fit_dataset(load_dir(a.data), model.params.arch);
    if (ds.empty()) throw std::invalid_argument("no samples in " + a.data);
    const EvalResult r = evaluate(model.params, ds, a.acm, a.radius_frac);
    std::ofstream csv(a.csv);
    if (!csv) throw std::runtime_error("cannot write " + a.csv);
    csv << "id,iou,winner,energy\n" << std::setprecision(10);
    for (const auto& s : r.per_sample) csv << s.id << ',' << s.iou << ',' << s.winner << ',' << s.energy << '\n';
    out << std::fixed << std::setprecision(4) << "samples " << ds.size() << "\nmean IoU " << r.mean_iou
        << "\ncenter-only IoU " << r.mean_center_iou << "\nmin-energy IoU " << r.mean_unsupervised_iou
        << std::defaultfloat << "\ncsv " << a.csv << '\n';
    return kOk;
}

// --- render ------------------------------------------------------------------

struct RenderArgs {
    std::string image, pred, gt, out;
    std::vector<std::string> inits;
    bool default_inits = false;
    double radius_frac = kDefaultRadiusFrac;
    int nodes = 60;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
    const Image img = read_image(a.image);
    std::optional<Polygon> pred, gt;
    if (!a.pred.empty()) pred = read_polygon(a.pred);
    if (!a.gt.empty()) gt = read_polygon(a.gt);
    std::vector<Polygon> inits;
    for (const auto& p : a.inits) inits.push_back(read_polygon(p));
    if (a.default_inits) {
        for (auto& p : init_polygons(img.width, img.height, a.radius_frac, a.nodes)) inits.push_back(std::move(p));
    }
    write_png(a.out, render_overlay(img, pred, gt, inits));
    out << "overlay " << a.out << '\n';
    return kOk;
}

// --- grad-check --------------------------------------------------------------

struct GradArgs {
    GradCheckOptions opts;
    std::string report;
};

int cmd_grad_check(const GradArgs& a, std::ostream& out, std::ostream& err) {
    const GradCheckReport r = run_grad_checks(a.opts);
    for (const auto& e : r.entries) {
        out << std::left << std::setw(18) << e.name << std::right << " max_rel_error " << std::scientific
            << std::setprecision(3) << e.max_rel_error << "  threshold " << e.threshold << std::defaultfloat << "  "
            << (e.passed ? "PASS" : "FAIL") << '\n';
    }
    if (!a.report.empty()) std::ofstream(a.report) << r.to_json() << '\n';
    if (!r.passed()) {
        err << "grad-check failed: " << r.first_failure() << '\n';
        return kFailure;
    }
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Trainable active-contour segmentation", "acmseg"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    const auto with_config = [](CLI::App* sub) {
        sub->add_option("--config", "key=value file; explicit flags take precedence");
    };

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic blob dataset");
    with_config(g);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--n", gen.synth.n, "Sample count")->check(CLI::Range(1, 1000000))->capture_default_str();
    g->add_option("--size", gen.synth.size, "Image side in pixels")->check(CLI::Range(32, 8192))->capture_default_str();
    g->add_option("--texture", gen.synth.texture, "Object heterogeneity in [0, 1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    g->add_option("--offcenter", gen.synth.offcenter_frac, "Share of off-centre objects in [0, 1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    g->add_option("--roughness", gen.synth.roughness, "Annotation jitter in [0, 0.5]")
        ->check(CLI::Range(0.0, 0.5))
        ->capture_default_str();
    g->add_option("--seed", gen.synth.seed, "Random seed")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the backbone end to end");
    with_config(t);
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--report", tr.report, "Report JSON path (default: <out>.report.json)");
    t->add_option("--test-data", tr.test_data, "Held-out dataset directory");
    t->add_option("--n-test", tr.n_test, "Hold out this many samples of --data (seeded)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    t->add_option("--arch", tr.arch, "Architecture preset")
        ->check(CLI::IsMember({"desk", "paper", "tiny"}))
        ->capture_default_str();
    t->add_option("--epochs", tr.cfg.epochs, "Epochs")->check(CLI::Range(1, 1000000))->capture_default_str();
    t->add_option("--lr", tr.cfg.step_size, "Step size")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--c", tr.cfg.C, "Regularization trade-off C")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--batch", tr.cfg.batch, "Batch size")->check(CLI::Range(1, 1000000))->capture_default_str();
    t->add_option("--seed", tr.cfg.seed, "Seed for init, shuffling and split")->capture_default_str();
    t->add_option("--optimizer", tr.optimizer, "sgd or adam")
        ->check(CLI::IsMember({"sgd", "adam"}))
        ->capture_default_str();
    t->add_option("--loss-scale", tr.cfg.ssvm.loss_scale, "Task-loss weight in loss-augmented inference")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    t->add_option("--margin-rule", tr.margin_rule, "hinge or literal")
        ->check(CLI::IsMember({"hinge", "literal"}))
        ->capture_default_str();
    t->add_flag("--update-per-init", tr.cfg.update_per_init, "Update after every initialization of every sample");
    t->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Write the checkpoint every k epochs")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    add_acm_flags(t, tr.cfg.acm, tr.cfg.radius_frac);

    InferArgs inf;
    auto* in = app.add_subcommand("infer", "Segment one image");
    with_config(in);
    in->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
    in->add_option("--image", inf.image, "Input PNG")->required();
    in->add_option("--gt", inf.gt, "Ground-truth polygon JSON; selects the winner by IoU");
    in->add_option("--out", inf.out, "Output polygon JSON")->capture_default_str();
    in->add_option("--dump-maps", inf.dump_maps, "Directory for the four prior-map PNGs");
    in->add_option("--trace", inf.trace, "Energy trace CSV of the winning run");
    add_acm_flags(in, inf.acm, inf.radius_frac);
    inf.out = "pred.json";

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Mean IoU over a dataset");
    with_config(e);
    e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--csv", ev.csv, "Per-sample CSV")->capture_default_str();
    add_acm_flags(e, ev.acm, ev.radius_frac);
    ev.csv = "eval.csv";

    RenderArgs rd;
    auto* r = app.add_subcommand("render", "Draw contours over an image");
    with_config(r);
    r->add_option("--image", rd.image, "Input PNG")->required();
    r->add_option("--pred", rd.pred, "Predicted polygon JSON (yellow)");
    r->add_option("--gt", rd.gt, "Ground-truth polygon JSON (green)");
    r->add_option("--init", rd.inits, "Initial contour JSON (blue); repeatable");
    r->add_flag("--default-inits", rd.default_inits, "Also draw the five standard initial circles");
    r->add_option("--out", rd.out, "Output PNG")->required();

    GradArgs gc;
    auto* c = app.add_subcommand("grad-check", "Finite-difference gradient oracles");
    with_config(c);
    c->add_option("--seed", gc.opts.seed, "Seed")->capture_default_str();
    c->add_option("--samples", gc.opts.backbone_samples, "Backbone weights to probe")
        ->check(CLI::Range(1, 100000))
        ->capture_default_str();
    c->add_option("--report", gc.report, "Report JSON path");
    c->add_flag("--inject-sign-flip", gc.opts.inject_sign_flip, "Test hook: corrupt the backbone gradient")
        ->group("");

    try {
        std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& ex) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp& ex) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& ex) {
        err << "usage error: " << ex.what() << "\n(run with --help for usage)\n";
        return kUsage;
    } catch (const UsageError& ex) {
        err << "usage error: " << ex.what() << '\n';
        return kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    print_config(out, *sub);
    try {
        if (sub == g) return cmd_gen_data(gen, out);
        if (sub == t) return cmd_train(tr, out);
        if (sub == in) return cmd_infer(inf, out);
        if (sub == e) return cmd_eval(ev, out);
        if (sub == r) {
            if (rd.pred.empty() && rd.gt.empty() && rd.inits.empty() && !rd.default_inits) {
                throw UsageError("render: nothing to draw");
            }
            return cmd_render(rd, out);
        }
        if (sub == c) return cmd_grad_check(gc, out, err);
    } catch (const UsageError& ex) {
        err << "usage error: " << ex.what() << '\n';
        return kUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace acmseg::cli
