#include "thzag/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "thzag/turbulence.hpp"

namespace thzag::surrogate {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw DomainError("noise schedule needs T_steps >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw DomainError("noise schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double running = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
        const double alpha = 1.0 - beta;
        const double previous = running;
        running *= alpha;
        s.beta.push_back(beta);
        s.alpha.push_back(alpha);
        s.alpha_bar.push_back(running);
        s.sigma.push_back(std::sqrt((1.0 - previous) * (1.0 - alpha) / (1.0 - running)));
    }
    return s;
}

void NoiseSchedule::validate(double final_bound) const {
    if (steps < 2 || static_cast<int>(alpha.size()) != steps ||
        static_cast<int>(alpha_bar.size()) != steps || static_cast<int>(sigma.size()) != steps)
        throw ValidationError("noise schedule: inconsistent lengths");
    double running = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double a = alpha[t - 1];
        if (!(a > 0.0 && a < 1.0))
            throw ValidationError("noise schedule: alpha_" + std::to_string(t) + " outside (0, 1)");
        const double previous = running;
        running *= a;
        if (std::abs(running - alpha_bar[t - 1]) > 1e-12)
            throw ValidationError("noise schedule: alpha_bar_" + std::to_string(t) +
                                  " is not the running product");
        if (t > 1 && !(alpha_bar[t - 1] < alpha_bar[t - 2]))
            throw ValidationError("noise schedule: alpha_bar not strictly decreasing at " +
                                  std::to_string(t));
        const double var = (1.0 - previous) * (1.0 - a) / (1.0 - alpha_bar[t - 1]);
        if (std::abs(sigma[t - 1] * sigma[t - 1] - var) > 1e-12)
            throw ValidationError("noise schedule: sigma_" + std::to_string(t) + " inconsistent");
    }
    if (!(alpha_bar.back() <= final_bound))
        throw ValidationError("noise schedule: alpha_bar at T = " + format_exact(alpha_bar.back()) +
                              " exceeds " + format_exact(final_bound));
}

Eigen::VectorXd forward_corrupt(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& z,
                                const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps)
        throw DomainError("forward_corrupt: t = " + std::to_string(t) + " outside [1, " +
                          std::to_string(schedule.steps) + "]");
    if (x0.size() != z.size()) throw DomainError("forward_corrupt: x0 and z differ in size");
    const double ab = schedule.alpha_bar_at(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * z;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

Eigen::VectorXd timestep_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw DomainError("timestep embedding size must be even");
    Eigen::VectorXd e(dim);
    const int half = dim / 2;
    for (int j = 0; j < half; ++j) {
        const double w = std::pow(10000.0, -static_cast<double>(j) / half);
        e(2 * j) = std::sin(t * w);
        e(2 * j + 1) = std::cos(t * w);
    }
    return e;
}

namespace {

std::vector<int> layer_widths(const Architecture& arch) {
    std::vector<int> w{arch.input_dim()};
    w.insert(w.end(), arch.hidden.begin(), arch.hidden.end());
    w.push_back(arch.data_dim);
    return w;
}

Eigen::Index parameter_count(const Architecture& arch) {
    const std::vector<int> w = layer_widths(arch);
    Eigen::Index n = 0;
    for (std::size_t l = 1; l < w.size(); ++l) n += static_cast<Eigen::Index>(w[l]) * (w[l - 1] + 1);
    return n;
}

void check_architecture(const Architecture& arch) {
    if (arch.data_dim <= 0 || arch.cond_dim < 0 || arch.embed_dim <= 0 || arch.embed_dim % 2 != 0)
        throw DomainError("denoiser: invalid dimensions");
    for (int h : arch.hidden)
        if (h <= 0) throw DomainError("denoiser: hidden widths must be positive");
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Denoiser::Denoiser(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
    check_architecture(arch_);
    build_offsets();
    theta_ = Eigen::VectorXd::Zero(parameter_count(arch_));
    Rng rng(seed);
    const std::vector<int> w = layer_widths(arch_);
    for (std::size_t l = 1; l < w.size(); ++l) {
        const double limit = std::sqrt(6.0 / (w[l - 1] + w[l]));
        const Eigen::Index start = offsets_[l - 1];
        for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(w[l]) * w[l - 1]; ++p)
            theta_(start + p) = rng.uniform(-limit, limit);
    }
}

Denoiser::Denoiser(Architecture arch, Eigen::VectorXd parameters)
    : arch_(std::move(arch)), theta_(std::move(parameters)) {
    check_architecture(arch_);
    build_offsets();
    if (theta_.size() != parameter_count(arch_))
        throw ValidationError("denoiser: parameter count does not match architecture");
    if (!theta_.allFinite()) throw ValidationError("denoiser: non-finite parameters");
}

void Denoiser::build_offsets() {
    offsets_.clear();
    const std::vector<int> w = layer_widths(arch_);
    Eigen::Index at = 0;
    for (std::size_t l = 1; l < w.size(); ++l) {
        offsets_.push_back(at);
        at += static_cast<Eigen::Index>(w[l]) * (w[l - 1] + 1);
    }
}

Eigen::MatrixXd Denoiser::assemble_input(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                                         const std::vector<int>& t) const {
    const Eigen::Index n = xt.cols();
    if (xt.rows() != arch_.data_dim || cond.rows() != arch_.cond_dim || cond.cols() != n ||
        static_cast<Eigen::Index>(t.size()) != n)
        throw DomainError("denoiser: input shapes do not match the architecture");
    Eigen::MatrixXd in(arch_.input_dim(), n);
    in.topRows(arch_.data_dim) = xt;
    in.middleRows(arch_.data_dim, arch_.cond_dim) = cond;
    int cached_t = -1;
    Eigen::VectorXd emb;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (t[j] != cached_t) {
            cached_t = t[j];
            emb = timestep_embedding(cached_t, arch_.embed_dim);
        }
        in.block(arch_.data_dim + arch_.cond_dim, j, arch_.embed_dim, 1) = emb;
    }
    return in;
}

Eigen::MatrixXd Denoiser::predict(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                                  const std::vector<int>& t) const {
    const std::vector<int> w = layer_widths(arch_);
    Eigen::MatrixXd a = assemble_input(xt, cond, t);
    for (std::size_t l = 1; l < w.size(); ++l) {
        const Eigen::Map<const Eigen::MatrixXd> W(theta_.data() + offsets_[l - 1], w[l], w[l - 1]);
        const Eigen::Map<const Eigen::VectorXd> b(theta_.data() + offsets_[l - 1] + W.size(), w[l]);
        Eigen::MatrixXd z = W * a;
        z.colwise() += b;
        if (l + 1 < w.size())
            a = z.unaryExpr([](double v) { return v * logistic(v); });
        else
            a = std::move(z);
    }
    return a;
}

Eigen::MatrixXd Denoiser::predict(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                                  int t) const {
    return predict(xt, cond, std::vector<int>(static_cast<std::size_t>(xt.cols()), t));
}

double Denoiser::loss(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& cond,
                      const std::vector<int>& t, const Eigen::MatrixXd& noise,
                      Eigen::VectorXd* gradient) const {
    const std::vector<int> w = layer_widths(arch_);
    const std::size_t layers = w.size() - 1;
    std::vector<Eigen::MatrixXd> act(layers + 1), pre(layers + 1);
    act[0] = assemble_input(xt, cond, t);
    for (std::size_t l = 1; l <= layers; ++l) {
        const Eigen::Map<const Eigen::MatrixXd> W(theta_.data() + offsets_[l - 1], w[l], w[l - 1]);
        const Eigen::Map<const Eigen::VectorXd> b(theta_.data() + offsets_[l - 1] + W.size(), w[l]);
        pre[l] = W * act[l - 1];
        pre[l].colwise() += b;
        if (l < layers)
            act[l] = pre[l].unaryExpr([](double v) { return v * logistic(v); });
        else
            act[l] = pre[l];
    }
    const Eigen::MatrixXd diff = act[layers] - noise;
    const double count = static_cast<double>(diff.size());
    const double value = diff.squaredNorm() / count;
    if (!gradient) return value;

    gradient->setZero(theta_.size());
    Eigen::MatrixXd delta = diff * (2.0 / count);
    for (std::size_t l = layers; l >= 1; --l) {
        const Eigen::Index start = offsets_[l - 1];
        Eigen::Map<Eigen::MatrixXd> dW(gradient->data() + start, w[l], w[l - 1]);
        Eigen::Map<Eigen::VectorXd> db(gradient->data() + start + dW.size(), w[l]);
        dW.noalias() = delta * act[l - 1].transpose();
        db = delta.rowwise().sum();
        if (l == 1) break;
        const Eigen::Map<const Eigen::MatrixXd> W(theta_.data() + start, w[l], w[l - 1]);
        Eigen::MatrixXd upstream = W.transpose() * delta;
        delta = upstream.cwiseProduct(pre[l - 1].unaryExpr([](double v) {
            const double s = logistic(v);
            return s * (1.0 + v * (1.0 - s));
        }));
    }
    return value;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train_denoiser(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond,
                           const NoiseSchedule& schedule, const Architecture& arch,
                           const TrainConfig& config, std::uint64_t seed) {
    const Eigen::Index n = x0.cols();
    if (n == 0) throw DomainError("train: empty dataset");
    if (cond.cols() != n) throw DomainError("train: targets and conditions differ in count");
    if (x0.rows() != arch.data_dim || cond.rows() != arch.cond_dim)
        throw DomainError("train: data dimensions do not match the architecture");
    if (config.batch_size < 1 || config.max_epochs < 1 || !(config.learning_rate > 0))
        throw DomainError("train: invalid optimizer configuration");
    schedule.validate();

    Rng rng(seed);
    TrainResult result;
    result.model = Denoiser(arch, rng.next());
    Eigen::VectorXd& theta = result.model.parameters();
    Eigen::VectorXd grad(theta.size()), m1 = Eigen::VectorXd::Zero(theta.size()),
        m2 = Eigen::VectorXd::Zero(theta.size());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long long step = 0;
    const long long batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const long long total_steps = batches_per_epoch * config.max_epochs;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        for (Eigen::Index i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
        double epoch_sum = 0.0;
        for (Eigen::Index begin = 0; begin < n; begin += config.batch_size) {
            const Eigen::Index size = std::min<Eigen::Index>(config.batch_size, n - begin);
            Eigen::MatrixXd xt(arch.data_dim, size), c(arch.cond_dim, size), z(arch.data_dim, size);
            std::vector<int> t(static_cast<std::size_t>(size));
            for (Eigen::Index j = 0; j < size; ++j) {
                const Eigen::Index src = order[begin + j];
                t[j] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
                for (int d = 0; d < arch.data_dim; ++d) z(d, j) = rng.normal();
                const double ab = schedule.alpha_bar_at(t[j]);
                xt.col(j) = std::sqrt(ab) * x0.col(src) + std::sqrt(1.0 - ab) * z.col(j);
                c.col(j) = cond.col(src);
            }
            const double value = result.model.loss(xt, c, t, z, &grad);
            if (!std::isfinite(value) || !grad.allFinite())
                throw NumericalError("train: loss became non-finite in epoch " +
                                     std::to_string(epoch + 1));
            epoch_sum += value * static_cast<double>(size);

            double lr = config.learning_rate;
            if (config.final_lr_fraction != 1.0) {
                const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
                const double f = config.final_lr_fraction;
                lr *= f + (1.0 - f) * 0.5 * (1.0 + std::cos(kPi * progress));
            }
            ++step;
            if (config.optimizer == OptimizerKind::SgdMomentum) {
                m1 = config.momentum * m1 - lr * grad;
                theta += m1;
            } else {
                m1 = config.adam_beta1 * m1 + (1.0 - config.adam_beta1) * grad;
                m2 = config.adam_beta2 * m2 + (1.0 - config.adam_beta2) * grad.cwiseAbs2();
                const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
                theta.array() -= lr * (m1.array() / c1) /
                                 ((m2.array() / c2).sqrt() + config.adam_epsilon);
            }
        }
        const double mean = epoch_sum / static_cast<double>(n);
        if (!std::isfinite(mean))
            throw NumericalError("train: loss became non-finite in epoch " + std::to_string(epoch + 1));
        result.epoch_loss.push_back(mean);

        // Early stop: the best loss of the last `patience` epochs improved on
        // the best before them by less than `tolerance` (relative).
        const int e = static_cast<int>(result.epoch_loss.size());
        if (config.patience > 0 && e > config.patience) {
            const auto split = result.epoch_loss.end() - config.patience;
            const double before = *std::min_element(result.epoch_loss.begin(), split);
            const double recent = *std::min_element(split, result.epoch_loss.end());
            if ((before - recent) / before < config.tolerance) {
                result.early_stopped = true;
                break;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::uint64_t condition_stream(std::uint64_t seed, const Eigen::VectorXd& cond, std::uint64_t draw) {
    std::uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
    for (Eigen::Index i = 0; i < cond.size(); ++i) h = hash_double(cond(i), h);
    return splitmix64(h + draw);
}

Eigen::MatrixXd sample_batch(const Eigen::MatrixXd& cond, const Denoiser& model,
                             const NoiseSchedule& schedule,
                             const std::vector<std::uint64_t>& stream_seeds) {
    const Eigen::Index n = cond.cols();
    const int d = model.architecture().data_dim;
    if (static_cast<Eigen::Index>(stream_seeds.size()) != n)
        throw DomainError("sample: one stream seed per condition column required");
    if (cond.rows() != model.architecture().cond_dim)
        throw DomainError("sample: condition dimension does not match the model");
    std::vector<Rng> streams;
    streams.reserve(stream_seeds.size());
    for (std::uint64_t s : stream_seeds) streams.emplace_back(s);

    Eigen::MatrixXd x(d, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (int r = 0; r < d; ++r) x(r, j) = streams[j].normal();
    for (int t = schedule.steps; t >= 1; --t) {
        const Eigen::MatrixXd eps = model.predict(x, cond, t);
        const double a = schedule.alpha_at(t);
        const double coef = (1.0 - a) / std::sqrt(1.0 - schedule.alpha_bar_at(t));
        x = (x - coef * eps) / std::sqrt(a);
        if (t > 1) {
            const double sigma = schedule.sigma_at(t);
            for (Eigen::Index j = 0; j < n; ++j)
                for (int r = 0; r < d; ++r) x(r, j) += sigma * streams[j].normal();
        }
        if (!x.allFinite())
            throw NumericalError("sample: non-finite state at step t = " + std::to_string(t));
    }
    return x;
}

Eigen::VectorXd sample(const Eigen::VectorXd& cond, const Denoiser& model,
                       const NoiseSchedule& schedule, std::uint64_t seed) {
    const Eigen::MatrixXd c = cond;
    return sample_batch(c, model, schedule, {condition_stream(seed, cond)}).col(0);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void FieldDataset::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset " + path.string());
    out << "# x1 x2 M alpha T P B\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << format_exact(row[c]);
        out << '\n';
    }
    if (!out) throw ValidationError("failed writing dataset " + path.string());
}

FieldDataset FieldDataset::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read dataset " + path.string());
    FieldDataset data;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::array<double, 7> row{};
        for (double& v : row)
            if (!(fields >> v))
                throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                      ": expected 7 columns x1 x2 M alpha T P B");
        std::string extra;
        if (fields >> extra)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": trailing data after 7 columns");
        for (double v : row)
            if (!std::isfinite(v))
                throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                      ": non-finite value");
        data.rows.push_back(row);
    }
    if (data.rows.empty()) throw ValidationError("dataset " + path.string() + " has no rows");
    return data;
}

FieldDataset build_dataset(const std::vector<flowfield::FlightCondition>& conditions,
                           const flowfield::GridSpec& grid,
                           const flowfield::WakeModelParams& params, double c0,
                           const channel::Scenario& scenario, const DatasetOptions& options,
                           std::uint64_t field_seed, std::uint64_t seed) {
    FieldDataset data;
    std::vector<channel::SlotGeometry> paths;
    for (int k = 0; k < scenario.slot_count; ++k) paths.push_back(channel::slot_geometry(scenario, k));
    for (const auto& cond : conditions) {
        const flowfield::FieldGrid field = flowfield::generate_wake_field(cond, grid, params, field_seed);
        Rng rng(hash_double(cond.attack_deg, hash_double(cond.mach, seed)));
        auto emit = [&](double x1, double x2) {
            const flowfield::FieldSample s = flowfield::sample_field(field, x1, x2);
            const double b = turbulence::structure_parameter_b(field, x1, x2, c0);
            data.rows.push_back({x1, x2, cond.mach, cond.attack_deg, s.temperature, s.pressure, b});
        };
        for (const auto& path : paths) {
            const turbulence::PathInterval span =
                turbulence::clip_to_box(path, grid.x1_min, grid.x1_max, grid.x2_min, grid.x2_max);
            if (span.empty()) continue;
            for (int q = 0; q < options.points_per_ray; ++q) {
                const double u = rng.uniform(span.begin, span.end);
                const turbulence::BodyPoint p = turbulence::to_body(path, path.at(u));
                emit(p.x1, p.x2);
            }
        }
        for (int q = 0; q < options.uniform_points; ++q) {
            const double x1 = rng.uniform(grid.x1_min, grid.x1_max);
            const double x2 = rng.uniform(grid.x2_min, grid.x2_max);
            emit(x1, x2);
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

void mean_scale(const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
    mean = m.rowwise().mean();
    scale.resize(m.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double var = (m.row(r).array() - mean(r)).square().mean();
        scale(r) = var > 0 ? std::sqrt(var) : 1.0;
    }
}

Eigen::MatrixXd raw_targets(const FieldDataset& data, double b_floor) {
    Eigen::MatrixXd m(3, static_cast<Eigen::Index>(data.rows.size()));
    for (std::size_t j = 0; j < data.rows.size(); ++j) {
        const auto& r = data.rows[j];
        m(0, j) = r[4];
        m(1, j) = r[5];
        m(2, j) = std::log10(std::max(r[6], 0.0) + b_floor);
    }
    return m;
}

Eigen::MatrixXd raw_conditions(const FieldDataset& data) {
    Eigen::MatrixXd m(4, static_cast<Eigen::Index>(data.rows.size()));
    for (std::size_t j = 0; j < data.rows.size(); ++j)
        for (int c = 0; c < 4; ++c) m(c, j) = data.rows[j][c];
    return m;
}

}  // namespace

Normalization Normalization::fit(const FieldDataset& data) {
    if (data.rows.empty()) throw DomainError("normalization: empty dataset");
    Normalization n;
    mean_scale(raw_targets(data, n.b_floor), n.target_mean, n.target_scale);
    mean_scale(raw_conditions(data), n.cond_mean, n.cond_scale);
    return n;
}

Eigen::MatrixXd Normalization::targets(const FieldDataset& data) const {
    Eigen::MatrixXd m = raw_targets(data, b_floor);
    return (m.colwise() - target_mean).array().colwise() / target_scale.array();
}

Eigen::MatrixXd Normalization::conditions(const FieldDataset& data) const {
    Eigen::MatrixXd m = raw_conditions(data);
    return (m.colwise() - cond_mean).array().colwise() / cond_scale.array();
}

Eigen::VectorXd Normalization::condition(double x1, double x2, double mach, double attack) const {
    Eigen::VectorXd c(4);
    c << x1, x2, mach, attack;
    return (c - cond_mean).array() / cond_scale.array();
}

std::array<double, 3> Normalization::physical(const Eigen::VectorXd& s) const {
    const Eigen::VectorXd raw = s.array() * target_scale.array() + target_mean.array();
    return {raw(0), raw(1), std::max(0.0, std::pow(10.0, raw(2)) - b_floor)};
}

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "thzag-ddpm-surrogate 1";

void write_vector(std::ostream& out, const char* key, const Eigen::VectorXd& v) {
    out << key << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_exact(v(i));
    out << '\n';
}

class Reader {
public:
    Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

    std::istringstream line(const std::string& key) {
        std::string text;
        if (!std::getline(in_, text)) fail("unexpected end of file, expected '" + key + "'");
        ++line_no_;
        std::istringstream fields(text);
        std::string found;
        fields >> found;
        if (found != key) fail("expected '" + key + "', found '" + found + "'");
        return fields;
    }

    Eigen::VectorXd vector(const std::string& key) {
        auto fields = line(key);
        long long n = -1;
        fields >> n;
        if (n < 0) fail("bad length for '" + key + "'");
        Eigen::VectorXd v(n);
        for (long long i = 0; i < n; ++i)
            if (!(fields >> v(i))) fail("too few values for '" + key + "'");
        return v;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError(name_ + ":" + std::to_string(line_no_) + ": " + what);
    }

private:
    std::istream& in_;
    std::string name_;
    int line_no_ = 0;
};

}  // namespace

void SurrogateModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write surrogate model " + path.string());
    const Architecture& arch = denoiser.architecture();
    out << kMagic << '\n';
    out << "schedule linear " << schedule.steps << ' ' << format_exact(schedule.beta_start) << ' '
        << format_exact(schedule.beta_end) << '\n';
    out << "architecture silu " << arch.data_dim << ' ' << arch.cond_dim << ' ' << arch.embed_dim
        << ' ' << arch.hidden.size();
    for (int h : arch.hidden) out << ' ' << h;
    out << '\n';
    out << "training_seed " << training_seed << '\n';
    out << "b_floor " << format_exact(norm.b_floor) << '\n';
    write_vector(out, "target_mean", norm.target_mean);
    write_vector(out, "target_scale", norm.target_scale);
    write_vector(out, "cond_mean", norm.cond_mean);
    write_vector(out, "cond_scale", norm.cond_scale);
    out << "domain " << format_exact(domain.x1_lo) << ' ' << format_exact(domain.x1_hi) << ' '
        << format_exact(domain.x2_lo) << ' ' << format_exact(domain.x2_hi) << '\n';
    write_vector(out, "parameters", denoiser.parameters());
    if (!out) throw ValidationError("failed writing surrogate model " + path.string());
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read surrogate model " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) throw ValidationError(path.string() + ": not a surrogate model file");
    Reader r(in, path.string());
    SurrogateModel m;

    auto sched = r.line("schedule");
    std::string kind;
    int steps = 0;
    double b0 = 0, b1 = 0;
    if (!(sched >> kind >> steps >> b0 >> b1) || kind != "linear") r.fail("bad schedule line");
    m.schedule = make_schedule(steps, b0, b1);

    auto arch_line = r.line("architecture");
    Architecture arch;
    std::string activation;
    std::size_t depth = 0;
    if (!(arch_line >> activation >> arch.data_dim >> arch.cond_dim >> arch.embed_dim >> depth) ||
        activation != "silu")
        r.fail("bad architecture line");
    arch.hidden.assign(depth, 0);
    for (int& h : arch.hidden)
        if (!(arch_line >> h)) r.fail("bad hidden widths");

    auto seed_line = r.line("training_seed");
    if (!(seed_line >> m.training_seed)) r.fail("bad training seed");
    auto floor_line = r.line("b_floor");
    if (!(floor_line >> m.norm.b_floor)) r.fail("bad b_floor");
    m.norm.target_mean = r.vector("target_mean");
    m.norm.target_scale = r.vector("target_scale");
    m.norm.cond_mean = r.vector("cond_mean");
    m.norm.cond_scale = r.vector("cond_scale");
    if (m.norm.target_mean.size() != arch.data_dim || m.norm.target_scale.size() != arch.data_dim ||
        m.norm.cond_mean.size() != arch.cond_dim || m.norm.cond_scale.size() != arch.cond_dim)
        r.fail("normalization sizes do not match the architecture");
    auto dom = r.line("domain");
    if (!(dom >> m.domain.x1_lo >> m.domain.x1_hi >> m.domain.x2_lo >> m.domain.x2_hi))
        r.fail("bad domain line");
    m.denoiser = Denoiser(arch, r.vector("parameters"));
    std::string rest;
    while (std::getline(in, rest))
        if (rest.find_first_not_of(" \t\r") != std::string::npos) r.fail("unexpected trailing content");
    return m;
}

SurrogateTraining train_surrogate(const FieldDataset& data, const NoiseSchedule& schedule,
                                  const Architecture& arch, const TrainConfig& config,
                                  std::uint64_t seed) {
    if (arch.data_dim != 3 || arch.cond_dim != 4)
        throw DomainError("field surrogate needs data_dim 3 and cond_dim 4");
    SurrogateTraining out;
    out.model.schedule = schedule;
    out.model.norm = Normalization::fit(data);
    out.model.training_seed = seed;
    DomainBox box{data.rows[0][0], data.rows[0][0], data.rows[0][1], data.rows[0][1]};
    for (const auto& row : data.rows) {
        box.x1_lo = std::min(box.x1_lo, row[0]);
        box.x1_hi = std::max(box.x1_hi, row[0]);
        box.x2_lo = std::min(box.x2_lo, row[1]);
        box.x2_hi = std::max(box.x2_hi, row[1]);
    }
    out.model.domain = box;
    TrainResult trained = train_denoiser(out.model.norm.targets(data), out.model.norm.conditions(data),
                                         schedule, arch, config, seed);
    out.model.denoiser = std::move(trained.model);
    out.epoch_loss = std::move(trained.epoch_loss);
    out.early_stopped = trained.early_stopped;
    return out;
}

// ---------------------------------------------------------------------------
// Attenuation prediction
// ---------------------------------------------------------------------------

std::vector<double> predict_path_integrals(const std::vector<flowfield::FlightCondition>& conditions,
                                           const std::vector<channel::SlotGeometry>& paths,
                                           const SurrogateModel& model, double altitude_m,
                                           double ground_ref_m, const PredictOptions& options) {
    if (conditions.size() != paths.size())
        throw DomainError("predict: one path per condition required");
    if (options.n_path < 2 || options.draws < 1)
        throw DomainError("predict: need n_path >= 2 and draws >= 1");
    if (!(altitude_m > ground_ref_m)) throw DomainError("predict: requires H > h0");
    const int n_path = options.n_path, draws = options.draws;

    struct Segment {
        double begin = 0, end = 0;
    };
    std::vector<Segment> segments(paths.size());
    std::vector<Eigen::VectorXd> columns;
    std::vector<std::uint64_t> streams;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const turbulence::PathInterval span = turbulence::clip_to_box(
            paths[p], model.domain.x1_lo, model.domain.x1_hi, model.domain.x2_lo, model.domain.x2_hi);
        segments[p] = {span.begin, span.end};
        if (span.empty()) continue;
        const double step = (span.end - span.begin) / (n_path - 1);
        for (int q = 0; q < n_path; ++q) {
            const turbulence::BodyPoint b =
                turbulence::to_body(paths[p], paths[p].at(span.begin + q * step));
            const Eigen::VectorXd c =
                model.norm.condition(b.x1, b.x2, conditions[p].mach, conditions[p].attack_deg);
            for (int d = 0; d < draws; ++d) {
                columns.push_back(c);
                streams.push_back(condition_stream(options.seed, c, static_cast<std::uint64_t>(d)));
            }
        }
    }

    Eigen::MatrixXd samples;
    if (!columns.empty()) {
        Eigen::MatrixXd cond(4, static_cast<Eigen::Index>(columns.size()));
        for (std::size_t j = 0; j < columns.size(); ++j) cond.col(static_cast<Eigen::Index>(j)) = columns[j];
        samples = sample_batch(cond, model.denoiser, model.schedule, streams);
    }

    std::vector<double> out(paths.size(), 0.0);
    Eigen::Index col = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        if (!(segments[p].end > segments[p].begin)) continue;
        std::vector<double> b_values(static_cast<std::size_t>(n_path));
        for (int q = 0; q < n_path; ++q) {
            // Average the chains in the standardized (log B) domain.
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
            for (int d = 0; d < draws; ++d) mean += samples.col(col++);
            mean /= draws;
            b_values[q] = model.norm.physical(mean)[2];
        }
        int q = 0;
        auto b_at = [&](const channel::Point2&) {
            return b_values[static_cast<std::size_t>(q++)];
        };
        turbulence::RytovOptions ro;
        ro.n_quad = n_path;
        out[p] = turbulence::weighted_path_integral(b_at, paths[p], altitude_m, ground_ref_m,
                                                    segments[p].begin, segments[p].end, ro);
    }
    return out;
}

double predict_path_integral(double mach, double attack_deg, const channel::SlotGeometry& path,
                             const SurrogateModel& model, double altitude_m, double ground_ref_m,
                             const PredictOptions& options) {
    return predict_path_integrals({{mach, attack_deg}}, {path}, model, altitude_m, ground_ref_m,
                                  options)[0];
}

double predict_attenuation(double mach, double attack_deg, const channel::SlotGeometry& path,
                           const SurrogateModel& model, double f_hz, double altitude_m,
                           double ground_ref_m, const PredictOptions& options) {
    const double integral =
        predict_path_integral(mach, attack_deg, path, model, altitude_m, ground_ref_m, options);
    const double sigma2 = turbulence::rytov_prefactor(f_hz, altitude_m, ground_ref_m) * integral;
    return turbulence::attenuation_from_sigma2(sigma2, f_hz, path.range_m).loss_db;
}

}  // namespace thzag::surrogate
