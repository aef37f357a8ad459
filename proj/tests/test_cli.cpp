// End-to-end checks of the command-line tool: each case drives the installed
// binary as a subprocess and inspects its outputs through the library.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dumotion/data.hpp"
#include "dumotion/metrics.hpp"
#include "dumotion/tensor_io.hpp"
#include "dumotion/training.hpp"
#include "support/test_util.hpp"

using namespace dumotion;
using testutil::TempDir;

namespace {

namespace fs = std::filesystem;

int run(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(DUMOTION_BIN) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_text(p); }

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
    REQUIRE(out.good());
}

// small paired dataset config shared by the pipeline cases
const char* kDataCfg =
    "[data]\n"
    "samples = 10\n"
    "frames = 24\n"
    "face_dims = 3\n"
    "body_dims = 4\n"
    "content_dims = 5\n"
    "semantics_dims = 6\n"
    "seed = 42\n";

const char* kTrainCfg =
    "[model]\n"
    "d = 16\n"
    "layers = 1\n"
    "heads = 2\n"
    "cond_dims = 8\n"
    "dropout = 0\n"
    "[diffusion]\n"
    "steps = 20\n"
    "[train]\n"
    "iterations = 4\n"
    "batch = 2\n"
    "lr = 1e-3\n";

}  // namespace

TEST_CASE("usage errors exit with the usage code") {
    TempDir dir("cliusage");
    const fs::path log = dir.path() / "log";
    CHECK(run("--help", log) == 0);
    CHECK(run("", log) == 2);                       // a subcommand is required
    CHECK(run("synth-data", log) == 2);             // --out is required
    CHECK(run("frobnicate --out x", log) == 2);     // unknown subcommand
    CHECK(run("synth-data --out x --bogus", log) == 2);
}

TEST_CASE("config errors exit with the config code") {
    TempDir dir("clicfg");
    const fs::path log = dir.path() / "log";
    const fs::path out = dir.path() / "ds";
    CHECK(run("synth-data --out " + out.string() + " --set data.bogus=1", log) == 3);
    CHECK(slurp(log).find("config error") != std::string::npos);
    CHECK(run("synth-data --out " + out.string() + " --set no_equals_here", log) == 3);
    CHECK(run("synth-data --out " + out.string() + " --set data.samples=abc", log) == 3);
    // sections outside the schema are rejected wholesale
    write_file(dir.path() / "bad.ini", "[nonsense]\nkey = 1\n");
    CHECK(run("synth-data --config " + (dir.path() / "bad.ini").string() + " --out " +
                  out.string(),
              log) == 3);
    // plot demands one of its two modes
    CHECK(run("plot --out " + (dir.path() / "p.svg").string(), log) == 3);
}

TEST_CASE("missing paths exit with the path code") {
    TempDir dir("clipath");
    const fs::path log = dir.path() / "log";
    CHECK(run("pretrain --data " + (dir.path() / "absent").string() + " --out " +
                  (dir.path() / "run").string(),
              log) == 4);
    CHECK(slurp(log).find("path error") != std::string::npos);
    CHECK(run("plot --loss " + (dir.path() / "absent.csv").string() + " --out " +
                  (dir.path() / "p.svg").string(),
              log) == 4);
}

TEST_CASE("synth-data is reproducible and splits on request") {
    TempDir dir("clisynth");
    const fs::path log = dir.path() / "log";
    write_file(dir.path() / "data.ini", kDataCfg);
    const std::string cfg = " --config " + (dir.path() / "data.ini").string();

    const fs::path a = dir.path() / "a", b = dir.path() / "b";
    REQUIRE(run("synth-data" + cfg + " --out " + a.string(), log) == 0);
    CHECK(slurp(log).find("wrote 10 samples") != std::string::npos);
    REQUIRE(run("synth-data" + cfg + " --out " + b.string(), log) == 0);

    const Dataset da = load_dataset(a), db = load_dataset(b);
    CHECK(da.content_hash() == db.content_hash());
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "sample_3_face.f32") == slurp(b / "sample_3_face.f32"));

    // a seed override changes the content
    const fs::path c = dir.path() / "c";
    REQUIRE(run("synth-data" + cfg + " --seed 43 --out " + c.string(), log) == 0);
    CHECK(load_dataset(c).content_hash() != da.content_hash());

    const fs::path sp = dir.path() / "split";
    REQUIRE(run("synth-data" + cfg +
                    " --set data.split=true --set data.train_fraction=0.8"
                    " --set data.val_fraction=0.1 --set data.test_fraction=0.1 --out " +
                    sp.string(),
                log) == 0);
    CHECK(load_dataset(sp / "train").samples.size() == 8);
    CHECK(load_dataset(sp / "val").samples.size() == 1);
    CHECK(load_dataset(sp / "test").samples.size() == 1);
    CHECK(load_dataset(sp / "val").manifest.split_tag == "val");
}

TEST_CASE("the full pipeline runs: train, finetune, sample, evaluate, plot") {
    TempDir dir("clipipe");
    const fs::path log = dir.path() / "log";
    write_file(dir.path() / "data.ini", kDataCfg);
    write_file(dir.path() / "train.ini", kTrainCfg);

    const fs::path ds = dir.path() / "ds";
    REQUIRE(run("synth-data --config " + (dir.path() / "data.ini").string() + " --out " +
                    ds.string(),
                log) == 0);

    // pretrain
    const fs::path pre = dir.path() / "pre";
    REQUIRE(run("--threads 2 pretrain --config " + (dir.path() / "train.ini").string() +
                    " --data " + ds.string() + " --out " + pre.string(),
                log) == 0);
    CHECK(slurp(log).find("checkpoint: ") != std::string::npos);
    const Checkpoint ck = load_checkpoint(pre / "checkpoint");
    CHECK(ck.iteration == 4);
    CHECK(ck.schedule_T == 20);
    CHECK(read_loss_csv(pre / "loss.csv").size() == 4);

    // finetune with snapshots; its config speaks only [peft] and [train]
    write_file(dir.path() / "fine.ini",
               "[peft]\nrank = 2\n[train]\niterations = 2\nbatch = 2\neval_every = 1\n");
    const fs::path fine = dir.path() / "fine";
    REQUIRE(run("--threads 2 finetune --config " + (dir.path() / "fine.ini").string() +
                    " --parent " + (pre / "checkpoint").string() + " --data " + ds.string() +
                    " --out " + fine.string(),
                log) == 0);
    CHECK(slurp(log).find("trainable of") != std::string::npos);
    const Checkpoint fck = load_checkpoint(fine / "checkpoint");
    CHECK(fck.peft.has_value());
    CHECK(fck.parent_id == ck.id());
    // snapshot dirs count run-local steps; the stored iteration is lineage-absolute
    CHECK(load_checkpoint(fine / "snap_000001").iteration == ck.iteration + 1);

    // sample a couple of clips with the pretrained model
    const fs::path gen = dir.path() / "gen";
    REQUIRE(run("sample --checkpoint " + (pre / "checkpoint").string() + " --data " +
                    ds.string() + " --count 2 --out " + gen.string(),
                log) == 0);
    const Dataset gd = load_dataset(gen);
    REQUIRE(gd.samples.size() == 2);
    CHECK(gd.manifest.split_tag == "generated");
    CHECK(gd.samples[0].motion.frames() == 24);
    CHECK(gd.samples[0].motion.face.cols() == 3);

    // an emotion label the table does not know is a runtime error
    CHECK(run("sample --checkpoint " + (fine / "checkpoint").string() + " --data " +
                  ds.string() + " --count 1 --emotion jubilant --out " +
                  (dir.path() / "bad").string(),
              log) == 5);

    // evaluate the dataset against itself: a perfect generator
    const fs::path report = dir.path() / "report.txt";
    const fs::path csv = dir.path() / "per_sample.csv";
    REQUIRE(run("evaluate --set extractor.window=8 --set extractor.stride=4"
                " --set extractor.iterations=10 --generated " +
                    ds.string() + " --reference " + ds.string() + " --out " + report.string() +
                    " --csv " + csv.string(),
                log) == 0);
    const MetricReport r = read_report(report);
    REQUIRE(r.mse.has_value());
    CHECK(*r.mse == 0.0);
    CHECK(*r.lvd == 0.0);
    CHECK(*r.fmd < 1e-6);
    CHECK(*r.fgd < 1e-6);
    CHECK(slurp(csv).find("sample,bc,mse,lvd") == 0);

    // mismatched pair sizes are a runtime error
    CHECK(run("evaluate --generated " + gen.string() + " --reference " + ds.string(), log) == 5);

    // plots render to SVG
    const fs::path loss_svg = dir.path() / "loss.svg";
    REQUIRE(run("plot --loss " + (pre / "loss.csv").string() + " --out " + loss_svg.string(),
                log) == 0);
    CHECK(slurp(loss_svg).rfind("<svg", 0) == 0);
    CHECK(slurp(loss_svg).find("L_H") != std::string::npos);
    const fs::path vel_svg = dir.path() / "vel.svg";
    REQUIRE(run("plot --generated " + gen.string() + " --reference " + ds.string() +
                    " --index 1 --out " + vel_svg.string(),
                log) == 0);
    CHECK(slurp(vel_svg).rfind("<svg", 0) == 0);
}

TEST_CASE("ablate sweeps every variant section and audits parameter counts") {
    TempDir dir("cliablate");
    const fs::path log = dir.path() / "log";
    write_file(dir.path() / "data.ini", kDataCfg);
    write_file(dir.path() / "train.ini", kTrainCfg);

    const fs::path ds = dir.path() / "ds";
    REQUIRE(run("synth-data --config " + (dir.path() / "data.ini").string() + " --out " +
                    ds.string(),
                log) == 0);
    const fs::path pre = dir.path() / "pre";
    REQUIRE(run("--threads 2 pretrain --config " + (dir.path() / "train.ini").string() +
                    " --data " + ds.string() + " --out " + pre.string(),
                log) == 0);

    write_file(dir.path() / "grid.ini",
               "[train]\n"
               "iterations = 1\n"
               "batch = 2\n"
               "[x_adapter]\n"
               "variant = x_adapter\n"
               "rank = 4\n"
               "[serial]\n"
               "variant = x_adapter\n"
               "form = serial\n"
               "scale = fixed_one\n"
               "rank = 4\n"
               "[lora]\n"
               "variant = lora\n"
               "rank = 4\n"
               "[prefix]\n"
               "variant = prefix\n"
               "prefix_length = 4\n");

    const fs::path out = dir.path() / "sweep";
    REQUIRE(run("--threads 2 ablate --config " + (dir.path() / "grid.ini").string() +
                    " --parent " + (pre / "checkpoint").string() + " --data " + ds.string() +
                    " --out " + out.string(),
                log) == 0);

    const std::string table = slurp(out / "ablation.txt");
    for (const char* name : {"x_adapter", "serial", "lora", "prefix"}) {
        CAPTURE(name);
        CHECK(table.find(name) != std::string::npos);
        CHECK(load_checkpoint(out / name).peft.has_value());
    }
    CHECK(table.find("MISMATCH") == std::string::npos);
    // every variant row audits "ok": one per variant plus the header column
    size_t oks = 0;
    for (size_t p = table.find(" ok"); p != std::string::npos; p = table.find(" ok", p + 1))
        ++oks;
    CHECK(oks == 4);

    // a grid without variant sections fails at runtime
    write_file(dir.path() / "empty.ini", "[train]\niterations = 1\n");
    CHECK(run("ablate --config " + (dir.path() / "empty.ini").string() + " --parent " +
                  (pre / "checkpoint").string() + " --data " + ds.string() + " --out " +
                  (dir.path() / "none").string(),
              log) == 5);
}
