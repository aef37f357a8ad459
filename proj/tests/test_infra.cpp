#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <vector>

#include "dumotion/autodiff.hpp"
#include "dumotion/config.hpp"
#include "dumotion/optim.hpp"
#include "dumotion/params.hpp"
#include "dumotion/rng.hpp"
#include "dumotion/tensor_io.hpp"
#include "dumotion/threads.hpp"
#include "support/test_util.hpp"

using namespace dumotion;
using testutil::max_abs_diff;
using testutil::TempDir;

// ---------- rng ----------

TEST_CASE("rng is a pure function of its seed") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        const uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_equal = all_equal && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("derive_seed separates streams") {
    const uint64_t root = 7;
    CHECK(derive_seed(root, 1) != derive_seed(root, 2));
    CHECK(derive_seed(root, 1) != derive_seed(root + 1, 1));
    CHECK(derive_seed(root, 1) == derive_seed(root, 1));
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(5);
    const int n = 100000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

// ---------- config ----------

TEST_CASE("config parses sections, comments, and typed values") {
    Config c = Config::parse_string(
        "[model]\n"
        "d = 64   # width\n"
        "dropout = 0.25\n"
        "use_biflow = true\n"
        "name = toy\n"
        "layers = 2, 3, 5\n");
    CHECK(c.get_int("model", "d") == 64);
    CHECK(c.get_float("model", "dropout") == doctest::Approx(0.25));
    CHECK(c.get_bool("model", "use_biflow"));
    CHECK(c.get_str("model", "name") == "toy");
    CHECK(c.get_int_list("model", "layers") == std::vector<long>{2, 3, 5});
    CHECK(c.get_int("model", "missing", 9) == 9);
    CHECK_FALSE(c.has("model", "missing"));
}

TEST_CASE("config --set overrides file values") {
    Config c = Config::parse_string("[train]\nlr = 0.1\n");
    c.set_dotted("train.lr=0.5");
    c.set_dotted("train.batch=8");
    CHECK(c.get_float("train", "lr") == doctest::Approx(0.5));
    CHECK(c.get_int("train", "batch") == 8);
}

TEST_CASE("config schema rejects unknown keys and bad values") {
    using T = Config::Type;
    const std::vector<Config::SchemaEntry> schema = {{"train", "lr", T::Float},
                                                     {"train", "batch", T::Int}};
    Config ok = Config::parse_string("[train]\nlr = 0.1\nbatch = 4\n");
    CHECK_NOTHROW(ok.validate(schema));
    Config unknown_key = Config::parse_string("[train]\nlr = 0.1\nbogus = 1\n");
    CHECK_THROWS_AS(unknown_key.validate(schema), ConfigError);
    Config unknown_section = Config::parse_string("[mystery]\nlr = 0.1\n");
    CHECK_THROWS_AS(unknown_section.validate(schema), ConfigError);
    Config bad_value = Config::parse_string("[train]\nbatch = soon\n");
    CHECK_THROWS_AS(bad_value.validate(schema), ConfigError);
}

TEST_CASE("config canonical form is order independent") {
    Config a = Config::parse_string("[b]\nx = 1\n[a]\ny = 2\n");
    Config b = Config::parse_string("[a]\ny = 2\n[b]\nx = 1\n");
    CHECK(a.canonical() == b.canonical());
}

// ---------- tensor io ----------

TEST_CASE("f32 files round-trip bitwise") {
    TempDir tmp("tio");
    Rng rng(3);
    MatF m = rng.normal_matrix<float>(7, 5);
    m(0, 0) = 1.0f / 3.0f;
    m(6, 4) = -0.0f;
    write_f32(tmp / "t.f32", m);
    const MatF back = read_f32(tmp / "t.f32", 7, 5);
    CHECK(std::memcmp(m.data(), back.data(), sizeof(float) * 35) == 0);
}

TEST_CASE("f32 reader rejects size mismatches") {
    TempDir tmp("tio2");
    write_f32(tmp / "t.f32", MatF::Zero(3, 3));
    CHECK_THROWS_AS(read_f32(tmp / "t.f32", 3, 4), ShapeError);
    CHECK_THROWS_AS(read_f32(tmp / "t.f32", 2, 3), ShapeError);
    CHECK_THROWS_AS(read_f32(tmp / "missing.f32", 1, 1), IoError);
}

TEST_CASE("atomic text write round-trips and leaves no temp files") {
    TempDir tmp("tio3");
    const std::string body = "alpha\nbeta\n";
    atomic_write_text(tmp / "a.txt", body);
    CHECK(read_text(tmp / "a.txt") == body);
    size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(tmp.path())) {
        (void)e;
        ++files;
    }
    CHECK(files == 1);
}

// ---------- threads ----------

TEST_CASE("parallel_for covers every index exactly once") {
    set_max_threads(3);
    std::vector<int> hits(257, 0);
    parallel_for(hits.size(), [&](size_t i) { hits[i] += 1; });
    set_max_threads(0);
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("parallel_for propagates the lowest-index exception") {
    set_max_threads(4);
    auto run = [] {
        parallel_for(64, [](size_t i) {
            if (i == 11 || i == 50) throw IoError("boom " + std::to_string(i));
        });
    };
    CHECK_THROWS_WITH_AS(run(), "boom 11", IoError);
    set_max_threads(0);
}

// ---------- params ----------

TEST_CASE("initialization depends on names, not creation order") {
    ParamStore<float> a, b;
    add_linear(a, 9, "enc/fc1", 4, 6);
    add_linear(a, 9, "enc/fc2", 6, 2);
    add_linear(b, 9, "enc/fc2", 6, 2);  // reversed creation order
    add_linear(b, 9, "enc/fc1", 4, 6);
    CHECK(max_abs_diff(a.at("enc/fc1/W"), b.at("enc/fc1/W")) == 0.0);
    CHECK(max_abs_diff(a.at("enc/fc2/W"), b.at("enc/fc2/W")) == 0.0);
}

TEST_CASE("param hash tracks content") {
    ParamStore<float> ps;
    add_linear(ps, 1, "p", 3, 3);
    const std::string before = ps.hash_of("p/W");
    ps.entries()[0].value(0, 0) += 1.0f;
    CHECK(ps.hash_of("p/W") != before);
    CHECK_THROWS_AS(ps.at("nope"), Error);
}

// ---------- autodiff: finite differences ----------

namespace {

// Builds the graph twice: once tracked for analytic gradients, then many
// times untracked for central differences on sampled leaf entries.
void check_gradients(std::vector<MatD*> leaves,
                     const std::function<Var<double>(Tape<double>&)>& build,
                     double tol = 1e-6) {
    Tape<double> tape(true);
    Var<double> root = build(tape);
    REQUIRE(tape.val(root).size() == 1);
    tape.backward(root);
    std::vector<MatD> grads;
    for (MatD* leaf : leaves) grads.push_back(tape.grad(tape.find_leaf(leaf)));

    auto eval = [&]() {
        Tape<double> t(false);
        return t.val(build(t))(0, 0);
    };
    const double h = 1e-6;
    Rng pick(1234);
    for (size_t li = 0; li < leaves.size(); ++li) {
        MatD& leaf = *leaves[li];
        const Index n = leaf.size();
        const Index samples = std::min<Index>(n, 12);
        for (Index s = 0; s < samples; ++s) {
            const Index idx = static_cast<Index>(pick.below(static_cast<uint64_t>(n)));
            double* cell = leaf.data() + idx;
            const double keep = *cell;
            *cell = keep + h;
            const double up = eval();
            *cell = keep - h;
            const double down = eval();
            *cell = keep;
            const double fd = (up - down) / (2 * h);
            const double an = grads[li](idx / leaf.cols(), idx % leaf.cols());
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            INFO("leaf ", li, " entry ", idx, " fd=", fd, " analytic=", an);
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("gradients: linear algebra ops") {
    Rng rng(21);
    MatD a = rng.normal_matrix<double>(3, 4);
    MatD b = rng.normal_matrix<double>(4, 5);
    MatD c = rng.normal_matrix<double>(3, 5);
    MatD r = rng.normal_matrix<double>(1, 5);
    MatD s = rng.normal_matrix<double>(3, 1);
    check_gradients({&a, &b, &c, &r, &s}, [&](Tape<double>& t) {
        auto m = t.matmul(t.leaf(&a), t.leaf(&b));
        auto x = t.add(m, t.leaf(&c));
        x = t.add_rowvec(x, t.leaf(&r));
        x = t.rowwise_scale(x, t.leaf(&s));
        x = t.sub(x, t.hadamard(m, t.leaf(&c)));
        return t.mean_all(t.square(x));
    });
}

TEST_CASE("gradients: softmax, layer norm, transpose") {
    Rng rng(22);
    MatD a = rng.normal_matrix<double>(4, 6);
    MatD g = rng.normal_matrix<double>(1, 6);
    MatD be = rng.normal_matrix<double>(1, 6);
    check_gradients({&a, &g, &be}, [&](Tape<double>& t) {
        auto x = t.softmax_rows(t.leaf(&a));
        x = t.layer_norm(x, t.leaf(&g), t.leaf(&be));
        auto y = t.matmul(x, t.transpose(x));
        return t.sum_all(t.square(y));
    });
}

TEST_CASE("gradients: activations") {
    Rng rng(23);
    MatD a = rng.normal_matrix<double>(5, 5);
    // keep relu inputs away from the kink so central differences are valid
    for (Index i = 0; i < a.size(); ++i)
        if (std::abs(a.data()[i]) < 0.1) a.data()[i] += 0.3;
    check_gradients({&a}, [&](Tape<double>& t) {
        auto x = t.leaf(&a);
        auto y = t.add(t.relu(x), t.add(t.silu(x), t.add(t.gelu(x), t.tanh_(x))));
        return t.mean_all(t.square(y));
    });
}

TEST_CASE("gradients: slicing and concatenation") {
    Rng rng(24);
    MatD a = rng.normal_matrix<double>(6, 4);
    MatD b = rng.normal_matrix<double>(2, 4);
    MatD c = rng.normal_matrix<double>(6, 3);
    check_gradients({&a, &b, &c}, [&](Tape<double>& t) {
        auto top = t.slice_rows(t.leaf(&a), 0, 2);
        auto stacked = t.vconcat(t.add(top, t.leaf(&b)), t.slice_rows(t.leaf(&a), 2, 4));
        auto wide = t.hconcat(stacked, t.leaf(&c));
        auto cols = t.slice_cols(wide, 1, 5);
        return t.mean_all(t.square(cols));
    });
}

TEST_CASE("gradients: reductions, scaling, row normalization") {
    Rng rng(25);
    MatD a = rng.normal_matrix<double>(4, 5);
    MatD s = rng.normal_matrix<double>(1, 1);
    check_gradients({&a, &s}, [&](Tape<double>& t) {
        auto x = t.scale(t.leaf(&a), 1.7);
        x = t.scale_by(x, t.leaf(&s));
        auto n = t.l2_normalize_rows(x);
        auto m = t.mean_rows(n);
        return t.add(t.sum_all(t.square(m)), t.mean_all(x));
    });
}

TEST_CASE("tape rejects shape mismatches") {
    Tape<double> t(false);
    MatD a = MatD::Zero(2, 3), b = MatD::Zero(3, 2);
    CHECK_THROWS_AS(t.add(t.leaf(&a), t.leaf(&b)), ShapeError);
    CHECK_THROWS_AS(t.hadamard(t.leaf(&a), t.leaf(&b)), ShapeError);
}

// ---------- optimizer ----------

TEST_CASE("adam matches a hand-rolled reference") {
    ParamStore<float> ps;
    MatF& w = ps.add("w", 2, 2);
    w << 0.5f, -0.25f, 1.0f, 2.0f;
    MatF w0 = w;
    const double lr = 0.01, b1 = 0.9, b2 = 0.99, eps = 1e-8;
    Adam<float> opt(ps, lr, b1, b2);

    MatF m = MatF::Zero(2, 2), v = MatF::Zero(2, 2);
    MatF ref = w0;
    Rng rng(8);
    for (int t = 1; t <= 5; ++t) {
        MatF g = rng.normal_matrix<float>(2, 2);
        opt.step({g});
        for (Index i = 0; i < 4; ++i) {
            float* mm = m.data() + i;
            float* vv = v.data() + i;
            const float gg = g.data()[i];
            *mm = static_cast<float>(b1 * *mm + (1 - b1) * gg);
            *vv = static_cast<float>(b2 * *vv + (1 - b2) * gg * gg);
            const double mhat = *mm / (1 - std::pow(b1, t));
            const double vhat = *vv / (1 - std::pow(b2, t));
            ref.data()[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
    CHECK(max_abs_diff(ps.at("w"), ref) < 1e-6);
}

TEST_CASE("frozen parameters never move") {
    ParamStore<float> ps;
    ps.add("a", 2, 2).setConstant(1.0f);
    ps.add("b", 2, 2).setConstant(1.0f);
    Adam<float> opt(ps, 0.1);
    opt.set_frozen({"a"});
    MatF g = MatF::Ones(2, 2);
    for (int i = 0; i < 10; ++i) opt.step({g, g});
    CHECK(ps.at("a")(0, 0) == 1.0f);
    CHECK(ps.at("b")(0, 0) != 1.0f);
}

TEST_CASE("gradient clipping caps the global norm") {
    std::vector<MatF> grads = {MatF::Constant(2, 2, 3.0f), MatF::Constant(1, 2, -4.0f)};
    double norm2 = 0;
    for (const auto& g : grads) norm2 += g.cast<double>().squaredNorm();
    REQUIRE(std::sqrt(norm2) > 5.0);
    clip_grad_norm(grads, 5.0);
    norm2 = 0;
    for (const auto& g : grads) norm2 += g.cast<double>().squaredNorm();
    CHECK(std::sqrt(norm2) == doctest::Approx(5.0).epsilon(1e-6));
}
