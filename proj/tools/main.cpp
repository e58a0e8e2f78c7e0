#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "groundcap/gradcheck.hpp"
#include "groundcap/model.hpp"
#include "groundcap/shapesworld.hpp"
#include "groundcap/trainer.hpp"
#include "groundcap/vocab.hpp"

using nlohmann::json;
using namespace groundcap;

namespace {

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    json j = json::parse(in);
    if (!j.is_object()) throw std::runtime_error("config file must hold one JSON object");
    return j;
}

/// Config precedence: a config-file value applies only when the flag was not
/// given on the command line; built-in defaults fill the rest.
template <typename T>
void overlay(const CLI::Option* opt, const json& file, const char* key, T& target) {
    if (opt != nullptr && opt->count() > 0) return;
    if (file.contains(key)) target = file.at(key).get<T>();
}

SemiWeakSplit parse_split(const std::string& text) {
    SemiWeakSplit s;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(text);
    if (!(in >> s.full_fraction >> sep1 >> s.box_only_fraction >> sep2 >>
          s.text_only_fraction) ||
        sep1 != '/' || sep2 != '/' || !(in >> std::ws).eof())
        throw std::runtime_error("split must look like '0.2/0.4/0.4', got '" + text + "'");
    return s;
}

Box parse_box_arg(const std::string& text) {
    if (text == "global") return global_box();
    Box b;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream in(text);
    if (!(in >> b.cx >> c1 >> b.cy >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' ||
        c3 != ',' || !(in >> std::ws).eof())
        throw std::runtime_error("box must be 'cx,cy,w,h' or 'global', got '" + text + "'");
    if (!box_valid(b)) throw std::runtime_error("box out of range: '" + text + "'");
    return b;
}

bool parse_on_off(const std::string& text, const char* flag) {
    if (text == "on") return true;
    if (text == "off") return false;
    throw std::runtime_error(std::string(flag) + " takes 'on' or 'off', got '" + text + "'");
}

json model_json(const ModelConfig& mc) {
    return json{{"image_size", mc.image_size}, {"patch", mc.patch},
                {"d", mc.d},                   {"heads", mc.heads},
                {"d_ff", mc.d_ff},             {"vision_layers", mc.vision_layers},
                {"text_layers", mc.text_layers}, {"max_caption", mc.max_caption},
                {"max_text", mc.max_text},     {"ln_eps", mc.ln_eps},
                {"init_gain", mc.init_gain}};
}

/// Model knobs come only from the config file's "model" object; the flag set
/// stays the documented desk-scale surface.
ModelConfig resolve_model_config(const json& file) {
    ModelConfig mc;
    if (!file.contains("model")) return mc;
    const json& m = file.at("model");
    if (m.contains("image_size")) mc.image_size = m.at("image_size").get<int>();
    if (m.contains("patch")) mc.patch = m.at("patch").get<int>();
    if (m.contains("d")) mc.d = m.at("d").get<int>();
    if (m.contains("heads")) mc.heads = m.at("heads").get<int>();
    if (m.contains("d_ff")) mc.d_ff = m.at("d_ff").get<int>();
    if (m.contains("vision_layers")) mc.vision_layers = m.at("vision_layers").get<int>();
    if (m.contains("text_layers")) mc.text_layers = m.at("text_layers").get<int>();
    if (m.contains("max_caption")) mc.max_caption = m.at("max_caption").get<int>();
    if (m.contains("max_text")) mc.max_text = m.at("max_text").get<int>();
    if (m.contains("ln_eps")) mc.ln_eps = m.at("ln_eps").get<double>();
    if (m.contains("init_gain")) mc.init_gain = m.at("init_gain").get<double>();
    return mc;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

/// The provenance contract: print the resolved configuration and seed on
/// every run, and echo the same JSON into the output directory when the
/// command owns one.
void announce(const json& resolved, uint64_t seed, const std::string& out_dir) {
    std::cout << "resolved config: " << resolved.dump() << "\n";
    std::cout << "seed: " << seed << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_text(std::filesystem::path(out_dir) / "resolved_config.json",
                   resolved.dump(2) + "\n");
    }
}

std::string box_text(const Box& b) {
    std::ostringstream s;
    s << "(" << b.cx << ", " << b.cy << ", " << b.w << ", " << b.h << ")";
    return s.str();
}

void print_scene(const Scene& scene) {
    std::cout << "scene with " << scene.objects.size() << " objects:\n";
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const ObjectSpec& o = scene.objects[i];
        std::cout << "  [" << i << "] " << (o.large ? "large " : "small ")
                  << color_word(o.color) << " " << shape_word(o.shape) << " at "
                  << box_text(o.box) << "\n";
    }
}

Models load_models(const ModelConfig& mc, uint64_t seed, const std::string& checkpoint) {
    Models m = Models::init(mc, seed);
    if (checkpoint.empty()) {
        std::cout << "note: no --checkpoint given; using untrained weights\n";
        return m;
    }
    CheckpointMeta meta = peek_checkpoint(checkpoint);
    if (meta.config_hash != mc.hash())
        throw std::runtime_error("checkpoint architecture hash does not match this model "
                                 "configuration; re-train or pass the matching --config");
    load_checkpoint(checkpoint, m.named_parameters());
    return m;
}

json eval_json(const EvalReport& r) {
    return json{{"acc05", r.acc05},       {"bleu4", r.bleu4}, {"cider", r.cider},
                {"attr_acc", r.attr_acc}, {"mean_nll", r.mean_nll}, {"n", r.n}};
}

void print_eval(const EvalReport& r) {
    std::cout << "eval: acc@0.5 " << r.acc05 << "  bleu4 " << r.bleu4 << "  cider " << r.cider
              << "  attr_acc " << r.attr_acc << "  mean_nll " << r.mean_nll << "  n " << r.n
              << "\n";
}

// ---- Subcommand bodies ------------------------------------------------------

struct GenDataArgs {
    std::string out_dir;
    std::string config_path;
    uint64_t seed = 42;
    int n_train = 2000;
    int n_test = 500;
    bool embed_pixels = false;
    int image_size = 64;
};

int run_gen_data(const GenDataArgs& a) {
    json resolved{{"command", "gen-data"},   {"out_dir", a.out_dir},
                  {"seed", a.seed},          {"train", a.n_train},
                  {"test", a.n_test},        {"embed_pixels", a.embed_pixels},
                  {"image_size", a.image_size}};
    announce(resolved, a.seed, a.out_dir);
    DatasetBundle bundle = build_dataset(a.n_train, a.n_test, a.seed);
    std::filesystem::path dir(a.out_dir);
    save_jsonl((dir / "train.jsonl").string(), bundle.train, a.embed_pixels, a.image_size);
    save_jsonl((dir / "test.jsonl").string(), bundle.eval, a.embed_pixels, a.image_size);
    std::cout << "wrote " << bundle.train.size() << " train records to "
              << (dir / "train.jsonl").string() << "\n";
    std::cout << "wrote " << bundle.eval.size() << " test records to "
              << (dir / "test.jsonl").string() << "\n";
    return 0;
}

struct TrainArgs {
    TrainConfig cfg;
    std::string config_path;
    std::string out_dir;
    std::string split_text = "0.2/0.4/0.4";
    std::string grad_through_box = "on";
    std::string regime = "supervised_full";
    std::string train_data;
    std::string eval_data;
    int gen_train = 2000;
    int gen_test = 500;
};

int run_train(TrainArgs& a, const json& file) {
    a.cfg.regime = regime_from_word(a.regime);
    a.cfg.split = parse_split(a.split_text);
    a.cfg.grad_through_box = parse_on_off(a.grad_through_box, "--grad-through-box");
    a.cfg.train_path = a.train_data;
    a.cfg.eval_path = a.eval_data;
    a.cfg.validate();
    ModelConfig mc = resolve_model_config(file);

    json resolved{{"command", "train"},
                  {"out_dir", a.out_dir},
                  {"seed", a.cfg.seed},
                  {"regime", a.regime},
                  {"split", a.split_text},
                  {"epochs", a.cfg.epochs},
                  {"batch", a.cfg.batch},
                  {"lr", a.cfg.peak_lr},
                  {"warmup_steps", a.cfg.warmup_steps},
                  {"weight_decay", a.cfg.weight_decay},
                  {"w_giou", a.cfg.w_giou},
                  {"w_l1", a.cfg.w_l1},
                  {"w_nll", a.cfg.w_nll},
                  {"w_cyc_vg_ic", a.cfg.w_cyc_vg_ic},
                  {"w_cyc_ic_vg", a.cfg.w_cyc_ic_vg},
                  {"grad_through_box", a.grad_through_box},
                  {"eval_every", a.cfg.eval_every},
                  {"beam", a.cfg.eval_beam},
                  {"train_data", a.train_data},
                  {"eval_data", a.eval_data},
                  {"gen_train", a.gen_train},
                  {"gen_test", a.gen_test},
                  {"model", model_json(mc)}};
    announce(resolved, a.cfg.seed, a.out_dir);

    std::vector<DatasetRecord> train_records, eval_records;
    if (!a.train_data.empty()) {
        train_records = load_jsonl(a.train_data);
        if (a.eval_data.empty())
            throw std::runtime_error("--train-data needs a matching --eval-data");
        eval_records = load_jsonl(a.eval_data);
    } else {
        std::cout << "note: no --train-data given; generating " << a.gen_train << "/"
                  << a.gen_test << " records from seed " << a.cfg.seed << "\n";
        DatasetBundle bundle = build_dataset(a.gen_train, a.gen_test, a.cfg.seed);
        train_records = std::move(bundle.train);
        eval_records = std::move(bundle.eval);
    }

    Models m = Models::init(mc, a.cfg.seed);
    std::filesystem::path dir(a.out_dir);
    TrainResult result =
        train(m, a.cfg, train_records, eval_records, (dir / "checkpoint.ckpt").string(),
              &std::cout);
    result.log.save((dir / "metrics.csv").string());
    write_text(dir / "eval_report.json", eval_json(result.final_eval).dump(2) + "\n");
    print_eval(result.final_eval);
    std::cout << "wrote " << (dir / "checkpoint.ckpt").string() << ", "
              << (dir / "metrics.csv").string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    int beam = 3;
};

int run_eval(const EvalArgs& a, const json& file) {
    ModelConfig mc = resolve_model_config(file);
    json resolved{{"command", "eval"}, {"checkpoint", a.checkpoint}, {"data", a.data},
                  {"beam", a.beam},    {"seed", a.seed},             {"out_dir", a.out_dir},
                  {"model", model_json(mc)}};
    announce(resolved, a.seed, a.out_dir);
    Models m = load_models(mc, a.seed, a.checkpoint);
    std::vector<DatasetRecord> records = load_jsonl(a.data);
    EvalReport report = evaluate(m, records, a.beam);
    print_eval(report);
    if (!a.out_dir.empty())
        write_text(std::filesystem::path(a.out_dir) / "eval_report.json",
                   eval_json(report).dump(2) + "\n");
    return 0;
}

int run_gradcheck_cmd(uint64_t seed, double tol) {
    json resolved{{"command", "gradcheck"}, {"seed", seed}, {"tol", tol}};
    announce(resolved, seed, "");
    GradCheckReport report = run_gradcheck(seed);
    for (const GradCheckEntry& e : report.entries)
        std::cout << "  " << e.name << ": max rel err " << e.max_rel_err << " over "
                  << e.elements << " elements\n";
    if (const GradCheckEntry* worst = report.worst_entry())
        std::cout << "worst: " << worst->name << " at " << worst->max_rel_err << "\n";
    if (!report.passed(tol)) {
        std::cerr << "gradcheck FAILED against tolerance " << tol << "\n";
        return 1;
    }
    std::cout << "gradcheck passed against tolerance " << tol << "\n";
    return 0;
}

struct DemoGroundArgs {
    uint64_t scene_seed = 7;
    std::string expression;
    std::string checkpoint;
    std::string config_path;
};

int run_demo_ground(const DemoGroundArgs& a, const json& file) {
    ModelConfig mc = resolve_model_config(file);
    json resolved{{"command", "demo-ground"},
                  {"scene_seed", a.scene_seed},
                  {"expression", a.expression},
                  {"checkpoint", a.checkpoint},
                  {"model", model_json(mc)}};
    announce(resolved, a.scene_seed, "");
    RngStream rng(a.scene_seed);
    Scene scene = sample_scene(rng);
    print_scene(scene);
    std::vector<int> matches = match_expression(scene, a.expression);
    if (matches.size() != 1) {
        std::ostringstream msg;
        msg << "expression '" << a.expression << "' matches " << matches.size()
            << " objects in this scene; pick one that matches exactly one";
        throw std::runtime_error(msg.str());
    }
    Box gt = scene.objects[static_cast<size_t>(matches[0])].box;
    Models m = load_models(mc, a.scene_seed, a.checkpoint);
    NoGradScope ng;
    Tensor v = m.encode_image(render(scene, mc.image_size));
    Tensor pred_t = m.ground(v, Vocab::instance().encode(a.expression));
    Box pred = to_box(pred_t);
    std::cout << "expression:   \"" << a.expression << "\"\n";
    std::cout << "predicted box: " << box_text(pred) << "\n";
    std::cout << "ground truth:  " << box_text(gt) << "\n";
    std::cout << "iou: " << iou(pred, gt) << "\n";
    return 0;
}

struct DemoCaptionArgs {
    uint64_t scene_seed = 7;
    std::string box_text = "global";
    std::string checkpoint;
    std::string config_path;
    int beam = 3;
};

int run_demo_caption(const DemoCaptionArgs& a, const json& file) {
    ModelConfig mc = resolve_model_config(file);
    json resolved{{"command", "demo-caption"}, {"scene_seed", a.scene_seed},
                  {"box", a.box_text},         {"beam", a.beam},
                  {"checkpoint", a.checkpoint}, {"model", model_json(mc)}};
    announce(resolved, a.scene_seed, "");
    Box box = parse_box_arg(a.box_text);
    RngStream rng(a.scene_seed);
    Scene scene = sample_scene(rng);
    print_scene(scene);
    Models m = load_models(mc, a.scene_seed, a.checkpoint);
    NoGradScope ng;
    Tensor v = m.encode_image(render(scene, mc.image_size));
    GenResult gen = m.generate(v, box, a.beam);
    std::cout << "conditioning box: " << box_text(box) << "\n";
    std::cout << "caption: \"" << Vocab::instance().decode(gen.tokens) << "\"\n";
    std::cout << "logprob: " << gen.logprob << (gen.terminated ? "" : "  (unterminated)")
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cycle-consistency training for visual grounding and regional captioning "
                 "on the ShapesWorld synthetic benchmark"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    GenDataArgs gd;
    CLI::App* gen = app.add_subcommand("gen-data", "Generate dataset JSONL files");
    gen->add_option("--out-dir", gd.out_dir, "Output directory")->required();
    auto* gd_seed = gen->add_option("--seed", gd.seed, "Dataset seed")->capture_default_str();
    auto* gd_train =
        gen->add_option("--train", gd.n_train, "Training record count")->capture_default_str();
    auto* gd_test =
        gen->add_option("--test", gd.n_test, "Test record count")->capture_default_str();
    gen->add_flag("--embed-pixels", gd.embed_pixels,
                  "Embed base64 pixel dumps in the JSONL (debugging)");
    auto* gd_img = gen->add_option("--image-size", gd.image_size,
                                   "Render size for embedded pixels")->capture_default_str();
    gen->add_option("--config", gd.config_path, "JSON config file");

    // train --------------------------------------------------------------
    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model under a regime");
    train_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->required();
    train_cmd->add_option("--config", tr.config_path, "JSON config file");
    auto* tr_seed =
        train_cmd->add_option("--seed", tr.cfg.seed, "Run seed")->capture_default_str();
    auto* tr_regime =
        train_cmd
            ->add_option("--regime", tr.regime,
                         "sup20_only | pseudo_label | semi_weak_cycle | supervised_full | "
                         "supervised_full_plus_cycle")
            ->capture_default_str();
    auto* tr_split = train_cmd
                         ->add_option("--split", tr.split_text,
                                      "full/box_only/text_only fractions, e.g. 0.2/0.4/0.4")
                         ->capture_default_str();
    auto* tr_epochs =
        train_cmd->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
    auto* tr_batch =
        train_cmd->add_option("--batch", tr.cfg.batch, "Batch size")->capture_default_str();
    auto* tr_lr = train_cmd->add_option("--lr", tr.cfg.peak_lr, "Peak learning rate")
                      ->capture_default_str();
    auto* tr_warm = train_cmd->add_option("--warmup", tr.cfg.warmup_steps, "Warmup steps")
                        ->capture_default_str();
    auto* tr_wd = train_cmd->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW decay")
                      ->capture_default_str();
    auto* tr_wgiou =
        train_cmd->add_option("--w-giou", tr.cfg.w_giou, "GIoU weight")->capture_default_str();
    auto* tr_wl1 = train_cmd->add_option("--w-l1", tr.cfg.w_l1, "Smooth-L1 weight")
                       ->capture_default_str();
    auto* tr_wnll = train_cmd->add_option("--w-nll", tr.cfg.w_nll, "Caption NLL weight")
                        ->capture_default_str();
    auto* tr_wvi = train_cmd
                       ->add_option("--w-cyc-vg-ic", tr.cfg.w_cyc_vg_ic,
                                    "Ground-then-caption cycle weight")
                       ->capture_default_str();
    auto* tr_wiv = train_cmd
                       ->add_option("--w-cyc-ic-vg", tr.cfg.w_cyc_ic_vg,
                                    "Caption-then-ground cycle weight")
                       ->capture_default_str();
    auto* tr_gtb = train_cmd
                       ->add_option("--grad-through-box", tr.grad_through_box,
                                    "Backprop through predicted box coordinates: on|off")
                       ->capture_default_str();
    auto* tr_ee = train_cmd
                      ->add_option("--eval-every", tr.cfg.eval_every,
                                   "Steps between metric rows (0 = once per epoch)")
                      ->capture_default_str();
    auto* tr_beam = train_cmd->add_option("--beam", tr.cfg.eval_beam, "Evaluation beam width")
                        ->capture_default_str();
    auto* tr_td = train_cmd->add_option("--train-data", tr.train_data,
                                        "Training JSONL (omit to generate from seed)");
    auto* tr_ed = train_cmd->add_option("--eval-data", tr.eval_data, "Evaluation JSONL");
    auto* tr_gt = train_cmd
                      ->add_option("--gen-train", tr.gen_train,
                                   "Generated training records when no --train-data")
                      ->capture_default_str();
    auto* tr_ge = train_cmd
                      ->add_option("--gen-test", tr.gen_test,
                                   "Generated eval records when no --train-data")
                      ->capture_default_str();

    // eval ---------------------------------------------------------------
    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
    eval_cmd->add_option("--data", ev.data, "Evaluation JSONL")->required();
    auto* ev_beam =
        eval_cmd->add_option("--beam", ev.beam, "Beam width")->capture_default_str();
    auto* ev_seed = eval_cmd->add_option("--seed", ev.seed, "Init seed (weights overwritten)")
                        ->capture_default_str();
    eval_cmd->add_option("--out-dir", ev.out_dir, "Directory for eval_report.json");
    eval_cmd->add_option("--config", ev.config_path, "JSON config file");

    // gradcheck ------------------------------------------------------------
    uint64_t gc_seed = 12345;
    double gc_tol = 1e-4;
    CLI::App* gc = app.add_subcommand(
        "gradcheck", "Finite-difference check of every primitive and loss (d=8 miniature)");
    gc->add_option("--seed", gc_seed, "Probe seed")->capture_default_str();
    gc->add_option("--tol", gc_tol, "Max relative error tolerance")->capture_default_str();

    // demo-ground ----------------------------------------------------------
    DemoGroundArgs dg;
    CLI::App* demo_g = app.add_subcommand("demo-ground",
                                          "Ground an expression in a sampled scene");
    auto* dg_seed = demo_g->add_option("--scene-seed", dg.scene_seed, "Scene seed")
                        ->capture_default_str();
    demo_g->add_option("--expression", dg.expression, "Referring expression")->required();
    demo_g->add_option("--checkpoint", dg.checkpoint, "Trained checkpoint");
    demo_g->add_option("--config", dg.config_path, "JSON config file");

    // demo-caption ---------------------------------------------------------
    DemoCaptionArgs dc;
    CLI::App* demo_c = app.add_subcommand("demo-caption",
                                          "Caption a region of a sampled scene");
    auto* dc_seed = demo_c->add_option("--scene-seed", dc.scene_seed, "Scene seed")
                        ->capture_default_str();
    auto* dc_box = demo_c->add_option("--box", dc.box_text, "'cx,cy,w,h' or 'global'")
                       ->capture_default_str();
    auto* dc_beam =
        demo_c->add_option("--beam", dc.beam, "Beam width")->capture_default_str();
    demo_c->add_option("--checkpoint", dc.checkpoint, "Trained checkpoint");
    demo_c->add_option("--config", dc.config_path, "JSON config file");

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

    try {
        if (*gen) {
            json file = load_config_file(gd.config_path);
            overlay(gd_seed, file, "seed", gd.seed);
            overlay(gd_train, file, "train", gd.n_train);
            overlay(gd_test, file, "test", gd.n_test);
            overlay(gd_img, file, "image_size", gd.image_size);
            return run_gen_data(gd);
        }
        if (*train_cmd) {
            json file = load_config_file(tr.config_path);
            overlay(tr_seed, file, "seed", tr.cfg.seed);
            overlay(tr_regime, file, "regime", tr.regime);
            overlay(tr_split, file, "split", tr.split_text);
            overlay(tr_epochs, file, "epochs", tr.cfg.epochs);
            overlay(tr_batch, file, "batch", tr.cfg.batch);
            overlay(tr_lr, file, "lr", tr.cfg.peak_lr);
            overlay(tr_warm, file, "warmup_steps", tr.cfg.warmup_steps);
            overlay(tr_wd, file, "weight_decay", tr.cfg.weight_decay);
            overlay(tr_wgiou, file, "w_giou", tr.cfg.w_giou);
            overlay(tr_wl1, file, "w_l1", tr.cfg.w_l1);
            overlay(tr_wnll, file, "w_nll", tr.cfg.w_nll);
            overlay(tr_wvi, file, "w_cyc_vg_ic", tr.cfg.w_cyc_vg_ic);
            overlay(tr_wiv, file, "w_cyc_ic_vg", tr.cfg.w_cyc_ic_vg);
            overlay(tr_gtb, file, "grad_through_box", tr.grad_through_box);
            overlay(tr_ee, file, "eval_every", tr.cfg.eval_every);
            overlay(tr_beam, file, "beam", tr.cfg.eval_beam);
            overlay(tr_td, file, "train_data", tr.train_data);
            overlay(tr_ed, file, "eval_data", tr.eval_data);
            overlay(tr_gt, file, "gen_train", tr.gen_train);
            overlay(tr_ge, file, "gen_test", tr.gen_test);
            return run_train(tr, file);
        }
        if (*eval_cmd) {
            json file = load_config_file(ev.config_path);
            overlay(ev_beam, file, "beam", ev.beam);
            overlay(ev_seed, file, "seed", ev.seed);
            return run_eval(ev, file);
        }
        if (*gc) return run_gradcheck_cmd(gc_seed, gc_tol);
        if (*demo_g) {
            json file = load_config_file(dg.config_path);
            overlay(dg_seed, file, "scene_seed", dg.scene_seed);
            return run_demo_ground(dg, file);
        }
        if (*demo_c) {
            json file = load_config_file(dc.config_path);
            overlay(dc_seed, file, "scene_seed", dc.scene_seed);
            overlay(dc_box, file, "box", dc.box_text);
            overlay(dc_beam, file, "beam", dc.beam);
            return run_demo_caption(dc, file);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
