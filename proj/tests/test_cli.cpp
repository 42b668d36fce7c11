#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nopkit/cli.hpp"

using namespace nop;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = "cli_test_out";

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    REQUIRE(in.good());
    std::vector<char> bytes(std::size_t(in.tellg()));
    in.seekg(0);
    in.read(bytes.data(), std::streamsize(bytes.size()));
    return bytes;
}

RunConfig config_from(const std::vector<std::string>& sets) {
    RunConfig cfg = load_run_config("", sets);
    return cfg;
}

} // namespace

TEST_CASE("raw float64 blocks round-trip and sha1 matches known vectors") {
    fs::create_directories(kRoot);
    std::vector<double> v = {0.0, -1.5, 3.141592653589793, 1e-300, 1e300};
    std::string p = kRoot + "/block.bin";
    write_f64(p, v.data(), v.size());
    std::vector<double> r = read_f64(p);
    REQUIRE(r.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(r[i] == v[i]);

    CHECK(sha1_hex(nullptr, 0) == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    const unsigned char abc[] = {'a', 'b', 'c'};
    CHECK(sha1_hex(abc, 3) == "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST_CASE("manifest files survive a round trip") {
    fs::create_directories(kRoot);
    std::string p = kRoot + "/manifest.txt";
    write_manifest(p, {{"format_version", "1"}, {"grid_sizes", "64 64"}, {"name", "a b = c"}});
    auto kv = read_manifest(p);
    CHECK(kv.at("format_version") == "1");
    CHECK(kv.at("grid_sizes") == "64 64");
    CHECK(kv.at("name") == "a b = c");
    CHECK_THROWS_AS(read_manifest(kRoot + "/nope.txt"), ConfigError);
}

TEST_CASE("dataset directories round-trip bit-exactly and reads are gated") {
    Grid g = Grid::uniform_1d(32, 0.0, 2.0 * 3.14159265358979323846, true);
    BuildOptions opt;
    opt.t_end = 0.2;
    Dataset ds = build_dataset("burgers", 3, g, 7, opt);
    std::string dir = kRoot + "/ds_roundtrip";
    save_dataset(dir, ds);
    Dataset back = load_dataset(dir);
    REQUIRE(back.inputs.size() == 3);
    CHECK(back.manifest.problem == ds.manifest.problem);
    CHECK(back.manifest.seed == 7);
    CHECK(back.manifest.grid_sizes == ds.manifest.grid_sizes);
    CHECK(same_grid(back.inputs[0].grid, ds.inputs[0].grid));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < ds.inputs[i].values.size(); ++k) {
            CHECK(back.inputs[i].values.data()[k] == ds.inputs[i].values.data()[k]);
            CHECK(back.outputs[i].values.data()[k] == ds.outputs[i].values.data()[k]);
        }

    // future format version must be refused
    auto kv = read_manifest(dir + "/manifest.txt");
    std::vector<std::pair<std::string, std::string>> lines;
    for (auto& [k, v] : kv) lines.push_back({k, k == "format_version" ? "2" : v});
    write_manifest(dir + "/manifest.txt", lines);
    CHECK_THROWS_AS(load_dataset(dir), ConfigError);
    lines.clear();
    for (auto& [k, v] : kv) lines.push_back({k, v});
    write_manifest(dir + "/manifest.txt", lines);

    // bit flip in a block must be caught by the content hash
    {
        std::fstream f(dir + "/inputs.bin", std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(11);
        char c = 0x5A;
        f.write(&c, 1);
    }
    CHECK_THROWS_AS(load_dataset(dir), ConfigError);
}

TEST_CASE("checkpoints restore the exact model") {
    ModelConfig mc;
    mc.variant = Variant::fno;
    mc.dims = 1;
    mc.d_v = 8;
    mc.layers = 2;
    mc.kmax = {4};
    mc.q_hidden = 16;
    mc.seed = 5;
    OperatorModel m = make_model(mc);
    std::string dir = kRoot + "/ckpt";
    save_checkpoint(dir, m);
    OperatorModel back = load_checkpoint(dir);
    CHECK(back.cfg.variant == Variant::fno);
    CHECK(back.cfg.d_v == 8);
    CHECK(back.cfg.kmax == std::vector<std::size_t>{4});
    auto pa = named_parameters(m), pb = named_parameters(back);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second.size() == pb[i].second.size());
        for (std::size_t k = 0; k < pa[i].second.size(); ++k)
            CHECK(pa[i].second.data()[k] == pb[i].second.data()[k]);
    }
    Grid g = Grid::uniform_1d(32, 0.0, 1.0, true);
    Rng rng(3, 0);
    FieldSample a = sample_grf(MeasureSpec::standard(MeasureKind::burgers_ic), g, rng);
    ModelOutput o1 = model_forward(m, a), o2 = model_forward(back, a);
    for (std::size_t k = 0; k < o1.values.size(); ++k)
        CHECK(o1.values.data()[k] == o2.values.data()[k]);
}

TEST_CASE("run config: unknown keys are named, overrides apply, sections validate") {
    CHECK_THROWS_WITH_AS(config_from({"data.prblem=burgers"}),
                         "unknown config key data.prblem", ConfigError);
    CHECK_THROWS_AS(config_from({"bogus.x=1"}), ConfigError);
    RunConfig cfg = config_from({"data.problem=burgers", "data.n=12", "seed=9",
                                 "model.kmax=[8]", "train.lr=0.002", "out=somewhere"});
    CHECK(cfg.seed == 9);
    CHECK(cfg.out == "somewhere");
    CHECK(cfg.data.at("problem") == "burgers"); // unquoted strings fall back to raw text
    CHECK(cfg.data.at("n") == 12);
    ModelConfig mc = model_config_from(cfg);
    CHECK(mc.kmax == std::vector<std::size_t>{8});
    CHECK(mc.seed == 9); // inherits the global seed
    TrainConfig tc = train_config_from(cfg);
    CHECK(tc.initial_lr == 0.002);
    CHECK(tc.seed == 9);
    CHECK_THROWS_AS(model_config_from(config_from({"model.variant=resnet"})), ConfigError);
}

TEST_CASE("gen-data: deterministic artifacts, downsampling, bad problem name") {
    RunConfig cfg = config_from({"data.problem=burgers", "data.n=4", "data.size=32",
                                 "data.t_end=0.2", "seed=7", "out=" + kRoot + "/gen1"});
    std::string dir = cmd_gen_data(cfg);
    CHECK(fs::exists(dir + "/manifest.txt"));
    CHECK(fs::exists(dir + "/inputs.bin"));
    CHECK(fs::exists(dir + "/outputs.bin"));
    CHECK(fs::exists(dir + "/config.json"));

    RunConfig cfg2 = cfg;
    cfg2.out = kRoot + "/gen2";
    std::string dir2 = cmd_gen_data(cfg2);
    CHECK(slurp(dir + "/inputs.bin") == slurp(dir2 + "/inputs.bin"));
    CHECK(slurp(dir + "/outputs.bin") == slurp(dir2 + "/outputs.bin"));
    CHECK(slurp(dir + "/manifest.txt") == slurp(dir2 + "/manifest.txt"));

    RunConfig down = config_from({"data.problem=burgers", "data.n=2", "data.size=64",
                                  "data.t_end=0.2", "data.downsample=2", "seed=7",
                                  "out=" + kRoot + "/gen_down"});
    Dataset low = load_dataset(cmd_gen_data(down));
    CHECK(low.inputs[0].grid.sizes[0] == 32);
    CHECK(low.manifest.source_resolution == 64);

    RunConfig bad = config_from({"data.problem=wave", "out=" + kRoot + "/gen_bad"});
    std::string msg;
    CHECK(run_command("gen-data", bad, msg) == 2);
    CHECK(msg.find("wave") != std::string::npos);
}

TEST_CASE("train, eval, superres, spectra, invert command pipeline") {
    // dataset
    RunConfig gen = config_from({"data.problem=burgers", "data.n=10", "data.size=32",
                                 "data.t_end=0.2", "seed=21", "out=" + kRoot + "/pipe"});
    std::string ds_dir = cmd_gen_data(gen);

    // train a small model for a few epochs
    RunConfig tr = config_from(
        {"train.dataset=" + ds_dir, "train.test_count=2", "train.epochs=5",
         "train.batch_size=4", "model.d_v=8", "model.layers=2", "model.kmax=[4]",
         "model.q_hidden=16", "seed=21", "out=" + kRoot + "/pipe/train"});
    std::string ckpt = cmd_train(tr);
    CHECK(fs::exists(ckpt + "/manifest.txt"));
    CHECK(fs::exists(kRoot + "/pipe/train/history.csv"));
    CHECK(fs::exists(kRoot + "/pipe/train/config.json"));

    // eval the checkpoint; a barely-trained model sits near error 1 on this task
    RunConfig ev = config_from({"eval.checkpoint=" + ckpt, "eval.dataset=" + ds_dir,
                                "eval.noise=0.1", "seed=21", "out=" + kRoot + "/pipe/eval"});
    std::string report = cmd_eval(ev);
    CHECK(fs::exists(report));
    CHECK(fs::exists(kRoot + "/pipe/eval/report.txt"));
    CHECK(fs::exists(kRoot + "/pipe/eval/robustness.csv"));
    std::ifstream rep(report);
    std::string header, row;
    std::getline(rep, header);
    std::getline(rep, row);
    double err = std::stod(row.substr(row.find(',') + 1));
    CHECK(std::isfinite(err));
    CHECK(err < 5.0);

    // superres on the same checkpoint at a finer grid
    RunConfig gen_hi = config_from({"data.problem=burgers", "data.n=4", "data.size=64",
                                    "data.t_end=0.2", "seed=22", "out=" + kRoot + "/pipe_hi"});
    std::string hi_dir = cmd_gen_data(gen_hi);
    RunConfig sup = config_from({"eval.checkpoint=" + ckpt, "eval.dataset=" + hi_dir,
                                 "seed=21", "out=" + kRoot + "/pipe/sup"});
    CHECK(cmd_superres(sup) == kRoot + "/pipe/sup/superres.csv");

    // a deeponet checkpoint must be refused at a different resolution
    ModelConfig dc;
    dc.variant = Variant::deeponet;
    dc.dims = 1;
    dc.sensors = 32;
    dc.basis = 8;
    dc.net_width = 16;
    dc.seed = 2;
    save_checkpoint(kRoot + "/pipe/deeponet_ckpt", make_model(dc));
    RunConfig sup_bad =
        config_from({"eval.checkpoint=" + kRoot + "/pipe/deeponet_ckpt",
                     "eval.dataset=" + hi_dir, "seed=21", "out=" + kRoot + "/pipe/sup_bad"});
    std::string msg;
    CHECK(run_command("superres", sup_bad, msg) == 2);
    CHECK(msg.find("fixed-sensor") != std::string::npos);

    // spectra over an NS one-step dataset
    RunConfig gen_ns = config_from({"data.problem=ns_onestep", "data.n=2", "data.size=32",
                                    "data.t_end=0.5", "seed=23", "out=" + kRoot + "/pipe_ns"});
    std::string ns_dir = cmd_gen_data(gen_ns);
    RunConfig sp = config_from({"eval.dataset=" + ns_dir, "out=" + kRoot + "/pipe/spectra"});
    std::string slopes = cmd_spectra(sp);
    CHECK(fs::exists(slopes));
    CHECK(fs::exists(kRoot + "/pipe/spectra/spectrum_0.txt"));
    std::ifstream spec0(kRoot + "/pipe/spectra/spectrum_0.txt");
    double k0, m0;
    spec0 >> k0 >> m0;
    CHECK(spec0.good());

    // a small inversion run without a surrogate
    RunConfig inv = config_from({"invert.size=16", "invert.t_end=0.05", "invert.burn_in=20",
                                 "invert.retained=50", "invert.beta=0.2", "seed=24",
                                 "out=" + kRoot + "/pipe/invert"});
    std::string inv_csv = cmd_invert(inv);
    CHECK(fs::exists(inv_csv));
    CHECK(fs::exists(kRoot + "/pipe/invert/posterior_mean.bin"));
    CHECK(read_f64(kRoot + "/pipe/invert/posterior_mean.bin").size() == 16 * 16);

    // missing inputs are configuration errors
    RunConfig missing = config_from({"out=" + kRoot + "/pipe/none"});
    CHECK(run_command("train", missing, msg) == 2);
    CHECK(msg.find("train.dataset") != std::string::npos);
    RunConfig gone = config_from(
        {"train.dataset=" + kRoot + "/does_not_exist", "out=" + kRoot + "/pipe/none"});
    CHECK(run_command("train", gone, msg) == 2);
}

TEST_CASE("noptool binary maps errors to exit codes") {
    std::string tool = "../tools/noptool";
    if (!fs::exists(tool)) return; // only meaningful inside the build tree
    int rc = std::system((tool + " gen-data --set data.problem=wave --out " + kRoot +
                          "/bin_bad 2>/dev/null")
                             .c_str());
    CHECK(WEXITSTATUS(rc) == 2);
    rc = std::system((tool + " gen-data --set data.problem=burgers --set data.n=2" +
                      " --set data.size=32 --set data.t_end=0.2 --out " + kRoot + "/bin_ok" +
                      " >/dev/null")
                         .c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    rc = std::system((tool + " frobnicate 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc) != 0);
}
