#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "thzag/surrogate.hpp"
#include "thzag/turbulence.hpp"

using namespace thzag;
using namespace thzag::surrogate;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

flowfield::GridSpec coarse_grid() {
    flowfield::GridSpec g;
    g.n1 = 51;
    g.n2 = 26;
    return g;
}

flowfield::WakeModelParams silent_wake() {
    flowfield::WakeModelParams p;
    p.core_tke = 0.0;
    p.wake_tke = 0.0;
    return p;
}

TrainConfig quick_adam(int epochs) {
    TrainConfig c;
    c.max_epochs = epochs;
    c.optimizer = OptimizerKind::Adam;
    c.learning_rate = 2e-3;
    c.final_lr_fraction = 0.05;
    c.patience = 0;
    return c;
}

}  // namespace

TEST_CASE("noise schedule") {
    SUBCASE("two-step hand example") {
        const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
        CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(s.alpha_bar_at(2) == doctest::Approx(0.72).epsilon(1e-15));
        CHECK(s.alpha_bar_at(0) == 1.0);
        // Too short to reach the terminal bound.
        CHECK_THROWS_AS(s.validate(), ValidationError);
        CHECK_NOTHROW(s.validate(1.0));
    }
    SUBCASE("defaults reach pure noise") {
        const NoiseSchedule s = make_schedule();
        CHECK(s.steps == 200);
        CHECK_NOTHROW(s.validate());
        double product = 1.0;
        for (int t = 1; t <= s.steps; ++t) {
            const double beta = kDefaultBetaStart + (kDefaultBetaEnd - kDefaultBetaStart) * (t - 1) / 199.0;
            product *= 1.0 - beta;
            if (t > 1) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
        }
        CHECK(product <= 1e-4);
        CHECK(s.alpha_bar_at(200) == doctest::Approx(product).epsilon(1e-12));
        // Posterior variance: sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t).
        const int t = 57;
        const double beta = 1.0 - s.alpha_at(t);
        CHECK(s.sigma_at(t) * s.sigma_at(t) ==
              doctest::Approx(beta * (1 - s.alpha_bar_at(t - 1)) / (1 - s.alpha_bar_at(t))).epsilon(1e-12));
    }
    SUBCASE("a 200-step schedule ending at beta 0.02 stays too clean") {
        const NoiseSchedule s = make_schedule(200, 1e-4, 0.02);
        CHECK(s.alpha_bar_at(200) > 0.1);
        CHECK_THROWS_AS(s.validate(), ValidationError);
    }
    CHECK_THROWS_AS(make_schedule(1, 0.1, 0.2), DomainError);
    CHECK_THROWS_AS(make_schedule(10, 0.2, 0.1), DomainError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.1), DomainError);
}

TEST_CASE("forward corruption") {
    const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
    const Eigen::Vector3d x0(1.0, 2.0, 3.0), z(0.5, -0.5, 0.0);
    const Eigen::VectorXd xt = forward_corrupt(x0, 2, z, s);
    CHECK(xt[0] == doctest::Approx(std::sqrt(0.72) * 1.0 + std::sqrt(0.28) * 0.5).epsilon(1e-15));
    CHECK(xt[1] == doctest::Approx(std::sqrt(0.72) * 2.0 - std::sqrt(0.28) * 0.5).epsilon(1e-15));
    CHECK(xt[2] == doctest::Approx(std::sqrt(0.72) * 3.0).epsilon(1e-15));
    const Eigen::VectorXd pure = forward_corrupt(Eigen::Vector3d::Zero(), 1, z, s);
    CHECK(pure[0] == doctest::Approx(std::sqrt(0.1) * 0.5).epsilon(1e-15));
    // abar = 1 at the t = 0 extension leaves the data untouched.
    const double ab0 = s.alpha_bar_at(0);
    CHECK((std::sqrt(ab0) * x0 + std::sqrt(1.0 - ab0) * z - x0).norm() == 0.0);
    CHECK_THROWS_AS(forward_corrupt(x0, 0, z, s), DomainError);
    CHECK_THROWS_AS(forward_corrupt(x0, 3, z, s), DomainError);
}

TEST_CASE("timestep embedding") {
    const Eigen::VectorXd e = timestep_embedding(7, 8);
    REQUIRE(e.size() == 8);
    for (int j = 0; j < 4; ++j) {
        const double w = std::pow(10000.0, -static_cast<double>(j) / 4.0);
        CHECK(e[2 * j] == doctest::Approx(std::sin(7 * w)).epsilon(1e-15));
        CHECK(e[2 * j + 1] == doctest::Approx(std::cos(7 * w)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(timestep_embedding(1, 3), DomainError);
}

TEST_CASE("loss gradient matches central finite differences") {
    Architecture arch;
    arch.data_dim = 2;
    arch.cond_dim = 1;
    arch.embed_dim = 2;
    arch.hidden = {3, 3};
    Denoiser model(arch, 11);
    Rng rng(5);
    const int n = 4;
    Eigen::MatrixXd xt(2, n), c(1, n), z(2, n);
    std::vector<int> t{1, 7, 19, 3};
    for (int j = 0; j < n; ++j) {
        xt(0, j) = rng.normal();
        xt(1, j) = rng.normal();
        c(0, j) = rng.normal();
        z(0, j) = rng.normal();
        z(1, j) = rng.normal();
    }
    Eigen::VectorXd grad;
    model.loss(xt, c, t, z, &grad);
    REQUIRE(grad.size() == model.parameters().size());
    const double scale = grad.cwiseAbs().maxCoeff();
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index p = 0; p < grad.size(); ++p) {
        Denoiser plus = model, minus = model;
        plus.parameters()[p] += h;
        minus.parameters()[p] -= h;
        const double fd = (plus.loss(xt, c, t, z) - minus.loss(xt, c, t, z)) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[p]) / std::max(std::abs(grad[p]), 1e-3 * scale));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("training is deterministic per seed") {
    Architecture arch;
    arch.data_dim = 2;
    arch.cond_dim = 1;
    arch.embed_dim = 4;
    arch.hidden = {16};
    Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(2, 300), c = Eigen::MatrixXd::Random(1, 300);
    const NoiseSchedule s = make_schedule();
    TrainConfig cfg;
    cfg.max_epochs = 4;
    const TrainResult a = train_denoiser(x0, c, s, arch, cfg, 42);
    const TrainResult b = train_denoiser(x0, c, s, arch, cfg, 42);
    const TrainResult other = train_denoiser(x0, c, s, arch, cfg, 43);
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.epoch_loss != other.epoch_loss);
    CHECK_THROWS_AS(train_denoiser(x0, c.leftCols(10), s, arch, cfg, 1), DomainError);
}

TEST_CASE("point mass: loss vanishes and samples concentrate") {
    Architecture arch;
    arch.data_dim = 2;
    arch.cond_dim = 1;
    arch.embed_dim = 16;
    arch.hidden = {64, 64};
    const Eigen::Vector2d star(0.5, -0.3);
    Eigen::MatrixXd x0(2, 2048), c = Eigen::MatrixXd::Constant(1, 2048, 0.3);
    x0.colwise() = star;
    const NoiseSchedule s = make_schedule();
    const TrainResult r = train_denoiser(x0, c, s, arch, quick_adam(300), 8);
    CHECK(r.epoch_loss.back() < 0.05);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Eigen::VectorXd x = sample(Eigen::VectorXd::Constant(1, 0.3), r.model, s, seed);
        worst = std::max(worst, (x - star).norm());
    }
    CHECK(worst <= 0.1);
}

TEST_CASE("two-dimensional Gaussian moments") {
    Architecture arch;
    arch.data_dim = 2;
    arch.cond_dim = 0;
    arch.embed_dim = 16;
    arch.hidden = {64, 64};
    const Eigen::Vector2d mean(1.0, -2.0);
    Eigen::Matrix2d cov;
    cov << 1.0, 0.5, 0.5, 2.0;
    const Eigen::Matrix2d chol = cov.llt().matrixL();
    // Whiten the draws so the training set carries the target moments exactly;
    // the check then measures the model, not the finite training sample.
    Rng rng(21);
    const int n = 16384;
    Eigen::MatrixXd z(2, n);
    for (int j = 0; j < n; ++j) z.col(j) = Eigen::Vector2d(rng.normal(), rng.normal());
    const Eigen::MatrixXd zc = z.colwise() - z.rowwise().mean();
    const Eigen::Matrix2d zcov = zc * zc.transpose() / (n - 1);
    const Eigen::Matrix2d whiten = zcov.llt().matrixL().solve(Eigen::Matrix2d::Identity());
    const Eigen::MatrixXd x0 = (chol * whiten * zc).colwise() + mean;
    // The classic 1000-step schedule; the coarser field default shrinks the
    // sampled variance by several percent on this toy.
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    const TrainResult r = train_denoiser(x0, Eigen::MatrixXd(0, n), s, arch, quick_adam(60), 4);

    const int draws = 2000;
    std::vector<std::uint64_t> seeds;
    for (int j = 0; j < draws; ++j) seeds.push_back(splitmix64(1000 + j));
    const Eigen::MatrixXd xs = sample_batch(Eigen::MatrixXd(0, draws), r.model, s, seeds);
    const Eigen::Vector2d m = xs.rowwise().mean();
    const Eigen::MatrixXd centred = xs.colwise() - m;
    const Eigen::Matrix2d c = centred * centred.transpose() / (draws - 1);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(m[i] - mean[i]) <= 0.1 * std::abs(mean[i]));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(std::abs(c(i, j) - cov(i, j)) <= 0.15 * std::abs(cov(i, j)));
}

TEST_CASE("sampling determinism") {
    Architecture arch;
    arch.data_dim = 3;
    arch.cond_dim = 4;
    arch.hidden = {8};
    const Denoiser model(arch, 3);
    const NoiseSchedule s = make_schedule();
    const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
    CHECK(sample(c, model, s, 9) == sample(c, model, s, 9));
    CHECK(sample(c, model, s, 9) != sample(c, model, s, 10));
    CHECK(condition_stream(1, c, 0) != condition_stream(1, c, 1));
}

TEST_CASE("field dataset") {
    const channel::Scenario sc = channel::default_scenario();
    const flowfield::GridSpec grid = coarse_grid();
    const flowfield::WakeModelParams wake;
    const std::vector<flowfield::FlightCondition> conds{{0.5, 0.0}, {0.7, -10.0}};
    DatasetOptions opt;
    opt.points_per_ray = 5;
    opt.uniform_points = 30;

    const FieldDataset data = build_dataset(conds, grid, wake, 0.01, sc, opt, 0, 12);
    int rays = 0;
    for (int k = 0; k < sc.slot_count; ++k)
        if (!turbulence::clip_to_box(channel::slot_geometry(sc, k), grid.x1_min, grid.x1_max, grid.x2_min,
                                     grid.x2_max).empty())
            ++rays;
    CHECK(data.rows.size() == conds.size() * static_cast<std::size_t>(rays * 5 + 30));

    SUBCASE("rows match direct field sampling") {
        Rng pick(3);
        for (int q = 0; q < 10; ++q) {
            const auto& row = data.rows[pick.below(data.rows.size())];
            const auto field = flowfield::generate_wake_field({row[2], row[3]}, grid, wake, 0);
            const auto s = flowfield::sample_field(field, row[0], row[1]);
            CHECK(row[4] == s.temperature);
            CHECK(row[5] == s.pressure);
            CHECK(row[6] == turbulence::structure_parameter_b(field, row[0], row[1], 0.01));
        }
    }
    SUBCASE("deterministic per seed and round-trips through a file") {
        const FieldDataset again = build_dataset(conds, grid, wake, 0.01, sc, opt, 0, 12);
        CHECK(again.rows == data.rows);
        const fs::path p = fs::temp_directory_path() / "thzag_dataset.txt";
        data.save(p);
        CHECK(FieldDataset::load(p).rows == data.rows);
        fs::remove(p);
    }
    SUBCASE("a silent generator gives B = 0 everywhere") {
        const FieldDataset zero = build_dataset(conds, grid, silent_wake(), 0.01, sc, opt, 0, 12);
        for (const auto& row : zero.rows) CHECK(row[6] == 0.0);
    }
}

TEST_CASE("field surrogate: persistence, determinism and the zero-turbulence map") {
    const channel::Scenario sc = channel::default_scenario();
    const flowfield::GridSpec grid = coarse_grid();
    std::vector<flowfield::FlightCondition> conds;
    for (double m : {0.5, 0.7})
        for (double a : {-10.0, 0.0, 10.0}) conds.push_back({m, a});
    DatasetOptions opt;
    opt.points_per_ray = 6;
    opt.uniform_points = 40;
    const FieldDataset data = build_dataset(conds, grid, silent_wake(), 0.01, sc, opt, 0, 2);
    Architecture arch;
    arch.hidden = {32, 32};
    const SurrogateTraining trained = train_surrogate(data, make_schedule(), arch, quick_adam(15), 6);
    const SurrogateModel& model = trained.model;

    const channel::SlotGeometry path = channel::slot_geometry(sc, 14);
    PredictOptions po;
    po.n_path = 16;
    po.draws = 2;
    const double loss = predict_attenuation(0.6, 5.0, path, model, 100e9, sc.altitude_m, sc.ground_ref_m, po);
    CHECK(loss >= 0.0);
    CHECK(loss <= 0.5);
    CHECK(loss == predict_attenuation(0.6, 5.0, path, model, 100e9, sc.altitude_m, sc.ground_ref_m, po));

    const fs::path first = fs::temp_directory_path() / "thzag_model_a.txt";
    const fs::path second = fs::temp_directory_path() / "thzag_model_b.txt";
    model.save(first);
    const SurrogateModel loaded = SurrogateModel::load(first);
    loaded.save(second);
    CHECK(slurp(first) == slurp(second));
    CHECK(loaded.denoiser.parameters() == model.denoiser.parameters());
    CHECK(predict_path_integral(0.6, 5.0, path, loaded, sc.altitude_m, sc.ground_ref_m, po) ==
          predict_path_integral(0.6, 5.0, path, model, sc.altitude_m, sc.ground_ref_m, po));

    std::ofstream(second, std::ios::app) << "trailing garbage\n";
    CHECK_THROWS_AS(SurrogateModel::load(second), ValidationError);
    fs::remove(first);
    fs::remove(second);
}

TEST_CASE("normalization") {
    FieldDataset d;
    d.rows = {{0, 0, 0.5, 0, 280, 9e4, 1e-12}, {10, -5, 0.7, 10, 282, 9.1e4, 1e-10}};
    const Normalization n = Normalization::fit(d);
    const Eigen::MatrixXd t = n.targets(d);
    CHECK(t.row(0).mean() == doctest::Approx(0.0).scale(1.0));
    CHECK(t(2, 1) - t(2, 0) == doctest::Approx(2.0 / n.target_scale[2]).epsilon(1e-6));
    const auto phys = n.physical(t.col(1));
    CHECK(phys[0] == doctest::Approx(282.0));
    CHECK(phys[2] == doctest::Approx(1e-10).epsilon(1e-9));
}
