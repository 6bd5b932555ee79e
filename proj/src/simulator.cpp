#include "velo/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "velo/error.hpp"

namespace velo::sim {

namespace {

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double RhoSchedule::operator()(double t) const {
    double rho = initial_level;
    double previous = initial_level;
    for (const auto& [time, level] : changes) {
        rho += (level - previous) * logistic((t - time) / width);
        previous = level;
    }
    return std::clamp(rho, 0.0, 1.0);
}

std::string RhoSchedule::describe() const {
    std::ostringstream out;
    out << std::setprecision(6) << initial_level;
    for (const auto& [time, level] : changes) {
        out << '>' << level << '@' << time;
    }
    out << "|w=" << width;
    return out.str();
}

RhoSchedule boost_gene_schedule(double t_boost, double rho_low, double rho_high, double sharpness) {
    if (!(rho_low >= 0.0 && rho_low < rho_high && rho_high <= 1.0)) {
        throw DomainError("boost_gene_schedule: need 0 <= rho_low < rho_high <= 1");
    }
    if (!(sharpness > 0.0)) {
        throw DomainError("boost_gene_schedule: sharpness must be positive");
    }
    RhoSchedule s;
    s.initial_level = rho_low;
    s.changes = {{t_boost, rho_high}};
    s.width = 1.0 / sharpness;
    return s;
}

void LineageTree::validate() const {
    if (branches.empty()) {
        throw DomainError("lineage tree: no branches");
    }
    if (genes.empty()) {
        throw DomainError("lineage tree: no genes");
    }
    int roots = 0;
    for (std::size_t b = 0; b < branches.size(); ++b) {
        const auto& br = branches[b];
        if (!(br.duration > 0.0) || !(br.weight >= 0.0)) {
            throw DomainError("lineage tree: branch '" + br.name + "' needs positive duration and non-negative weight");
        }
        if (br.parent < 0) {
            ++roots;
            if (br.start < 0.0) {
                throw DomainError("lineage tree: root must start at a non-negative time");
            }
            continue;
        }
        if (br.parent >= static_cast<int>(b)) {
            throw DomainError("lineage tree: branch '" + br.name + "' must come after its parent");
        }
        const auto& parent = branches[br.parent];
        if (br.start < parent.start || br.start > parent.start + parent.duration) {
            throw DomainError("lineage tree: split time of '" + br.name + "' lies outside its parent");
        }
    }
    if (roots != 1) {
        throw DomainError("lineage tree: exactly one root branch is required");
    }
    double total_weight = 0.0;
    for (const auto& br : branches) {
        total_weight += br.weight;
    }
    if (!(total_weight > 0.0)) {
        throw DomainError("lineage tree: branch weights sum to zero");
    }
    if (schedules.size() != branches.size()) {
        throw DomainError("lineage tree: need one schedule list per branch");
    }
    for (const auto& per_branch : schedules) {
        if (per_branch.size() != genes.size()) {
            throw DomainError("lineage tree: need one schedule per gene in every branch");
        }
        for (const auto& s : per_branch) {
            if (!(s.width > 0.0)) {
                throw DomainError("lineage tree: schedule widths must be positive");
            }
        }
    }
    for (const auto& g : genes) {
        if (!(g.beta > 0.0) || !(g.gamma > 0.0) || !(g.alpha >= 0.0)) {
            throw DomainError("lineage tree: gene '" + g.name + "' has invalid rates");
        }
    }
}

namespace {

OdeRates scheduled_rates(const GeneSetup& gene, const RhoSchedule& schedule) {
    OdeRates rates;
    const double alpha = gene.alpha;
    rates.alpha_tilde = [alpha, schedule](double t) { return alpha * schedule(t); };
    rates.beta = gene.beta;
    rates.gamma = gene.gamma;
    return rates;
}

std::string path_description(const LineageTree& tree, std::size_t gene) {
    std::ostringstream out;
    for (std::size_t b = 0; b < tree.branches.size(); ++b) {
        if (b > 0) {
            out << ';';
        }
        out << tree.branches[b].name << ':' << tree.schedules[b][gene].describe();
    }
    return out.str();
}

}  // namespace

Simulation simulate(const LineageTree& tree, int n_cells, double noise_fraction, std::uint64_t seed,
                    double max_step) {
    tree.validate();
    if (n_cells < 1) {
        throw DomainError("simulate: need at least one cell");
    }
    if (!(noise_fraction >= 0.0)) {
        throw DomainError("simulate: noise fraction must be non-negative");
    }
    const auto n_branches = tree.branches.size();
    const auto n_genes = static_cast<Eigen::Index>(tree.genes.size());

    std::vector<double> weights;
    for (const auto& br : tree.branches) {
        weights.push_back(br.weight);
    }

    Simulation out;
    auto& truth = out.truth;
    truth.time.resize(n_cells);
    truth.branch.resize(n_cells);
    truth.genes = tree.genes;
    truth.noise_fraction = noise_fraction;
    for (const auto& br : tree.branches) {
        truth.branch_names.push_back(br.name);
    }

    // Per-cell generators keep the draw for cell i independent of every other cell.
    std::vector<std::mt19937_64> cell_rngs;
    cell_rngs.reserve(n_cells);
    for (int i = 0; i < n_cells; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i), 0x5eedu};
        cell_rngs.emplace_back(seq);
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        const int b = pick(cell_rngs.back());
        const auto& br = tree.branches[b];
        std::uniform_real_distribution<double> when(br.start, br.start + br.duration);
        truth.branch[i] = b;
        truth.time[i] = when(cell_rngs.back());
    }

    truth.u_clean.resize(n_cells, n_genes);
    truth.s_clean.resize(n_cells, n_genes);
    truth.rho.resize(n_cells, n_genes);

    for (Eigen::Index g = 0; g < n_genes; ++g) {
        const auto& gene = tree.genes[g];
        // State of this gene at the start of every branch.
        std::vector<KineticState> start_state(n_branches);
        for (std::size_t b = 0; b < n_branches; ++b) {
            const auto& br = tree.branches[b];
            if (br.parent < 0) {
                start_state[b] = gene.initial;
                continue;
            }
            const auto& parent = tree.branches[br.parent];
            if (br.start > parent.start) {
                const auto rates = scheduled_rates(gene, tree.schedules[br.parent][g]);
                start_state[b] = rk4_reference(rates, start_state[br.parent], {parent.start, br.start}, max_step).back();
            } else {
                start_state[b] = start_state[br.parent];
            }
        }

        for (std::size_t b = 0; b < n_branches; ++b) {
            const auto& br = tree.branches[b];
            std::vector<int> members;
            for (int i = 0; i < n_cells; ++i) {
                if (truth.branch[i] == static_cast<int>(b)) {
                    members.push_back(i);
                }
            }
            if (members.empty()) {
                continue;
            }
            std::stable_sort(members.begin(), members.end(),
                             [&](int a, int c) { return truth.time[a] < truth.time[c]; });
            // Strictly increasing grid starting at the branch start; tied cell
            // times share one grid point.
            std::vector<double> grid{br.start};
            std::vector<std::size_t> slot(members.size());
            for (std::size_t k = 0; k < members.size(); ++k) {
                const double t = truth.time[members[k]];
                if (t > grid.back()) {
                    grid.push_back(t);
                }
                slot[k] = grid.size() - 1;
            }
            const auto& schedule = tree.schedules[b][g];
            const auto traj = rk4_reference(scheduled_rates(gene, schedule), start_state[b], grid, max_step);
            for (std::size_t k = 0; k < members.size(); ++k) {
                const int i = members[k];
                truth.u_clean(i, g) = traj[slot[k]].u;
                truth.s_clean(i, g) = traj[slot[k]].s;
                truth.rho(i, g) = schedule(truth.time[i]);
            }
        }
        truth.schedules.push_back(path_description(tree, g));
    }

    truth.sigma_u.resize(n_genes);
    truth.sigma_s.resize(n_genes);
    for (Eigen::Index g = 0; g < n_genes; ++g) {
        truth.sigma_u[g] = noise_fraction * (truth.u_clean.col(g).maxCoeff() - truth.u_clean.col(g).minCoeff());
        truth.sigma_s[g] = noise_fraction * (truth.s_clean.col(g).maxCoeff() - truth.s_clean.col(g).minCoeff());
    }

    auto& data = out.data;
    data.unspliced.resize(n_cells, n_genes);
    data.spliced.resize(n_cells, n_genes);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < n_cells; ++i) {
        auto& rng = cell_rngs[i];
        for (Eigen::Index g = 0; g < n_genes; ++g) {
            const double u = truth.u_clean(i, g) + truth.sigma_u[g] * normal(rng);
            const double s = truth.s_clean(i, g) + truth.sigma_s[g] * normal(rng);
            data.unspliced(i, g) = std::max(0.0, u);
            data.spliced(i, g) = std::max(0.0, s);
        }
    }
    for (int i = 0; i < n_cells; ++i) {
        data.cell_ids.push_back("cell_" + std::to_string(i));
    }
    for (const auto& gene : tree.genes) {
        data.gene_names.push_back(gene.name);
    }
    std::vector<std::string> labels;
    for (int i = 0; i < n_cells; ++i) {
        labels.push_back(truth.branch_names[truth.branch[i]]);
    }
    data.labels = std::move(labels);
    data.provenance.push_back("simulate;seed=" + std::to_string(seed) + ";noise=" + std::to_string(noise_fraction));
    return out;
}

std::vector<int> capture_time_labels(const Vector& times, int n_bins) {
    if (n_bins < 2) {
        throw DomainError("capture_time_labels: need at least two bins");
    }
    const auto n = static_cast<std::size_t>(times.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    std::vector<int> labels(n);
    for (std::size_t rank = 0; rank < n; ++rank) {
        labels[order[rank]] = static_cast<int>(rank * static_cast<std::size_t>(n_bins) / n);
    }
    // Equal times must share a label.
    for (std::size_t rank = 1; rank < n; ++rank) {
        if (times[order[rank]] == times[order[rank - 1]]) {
            labels[order[rank]] = labels[order[rank - 1]];
        }
    }
    return labels;
}

namespace {

struct PresetBuilder {
    std::mt19937_64 rng;
    LineageTree tree;
    double width = 0.1;

    explicit PresetBuilder(std::uint64_t seed) : rng(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }

    GeneSetup rates(const std::string& kind) {
        GeneSetup g;
        g.name = "gene_" + std::to_string(tree.genes.size());
        g.kind = kind;
        g.alpha = log_uniform(1.0, 10.0);
        g.beta = log_uniform(0.5, 2.0);
        g.gamma = log_uniform(0.2, 1.0);
        return g;
    }

    RhoSchedule step(double initial, std::vector<std::pair<double, double>> changes) const {
        RhoSchedule s;
        s.initial_level = initial;
        s.changes = std::move(changes);
        s.width = width;
        return s;
    }

    // Adds one gene with the same schedule in every branch.
    void add_shared(GeneSetup gene, const RhoSchedule& schedule) {
        tree.genes.push_back(std::move(gene));
        for (auto& per_branch : tree.schedules) {
            per_branch.push_back(schedule);
        }
    }

    void add_standard() {
        const double on = uniform(0.0, 6.0);
        const double off = std::min(18.0, on + uniform(5.0, 10.0));
        add_shared(rates("standard"), step(0.0, {{on, 1.0}, {off, 0.0}}));
    }

    void add_early_repression() {
        auto gene = rates("early_repression");
        gene.initial = steady_state(gene.alpha, gene.beta, gene.gamma);
        add_shared(std::move(gene), step(1.0, {{uniform(0.5, 2.0), 0.0}}));
    }

    void add_late_induction() {
        add_shared(rates("late_induction"), step(0.0, {{uniform(11.0, 16.0), 1.0}}));
    }

    void add_boost() {
        auto gene = rates("boost");
        const double low = uniform(0.2, 0.35);
        gene.initial = steady_state(low * gene.alpha, gene.beta, gene.gamma);
        const double sharpness = uniform(0.7, 1.2);
        add_shared(std::move(gene), boost_gene_schedule(uniform(9.0, 13.0), low, 1.0, sharpness));
    }

    void single_lineage(double t_max) {
        tree.branches = {{"root", -1, 0.0, t_max, 1.0}};
        tree.schedules.assign(1, {});
    }
};

}  // namespace

Preset make_preset(const std::string& name, std::uint64_t seed) {
    Preset preset;
    preset.name = name;
    preset.noise_fraction = 0.1;
    preset.t_max = 20.0;
    PresetBuilder builder(seed);

    if (name == "S1" || name == "S3") {
        builder.single_lineage(preset.t_max);
        for (int g = 0; g < 60; ++g) builder.add_standard();
        for (int g = 0; g < 20; ++g) builder.add_early_repression();
        for (int g = 0; g < 20; ++g) builder.add_late_induction();
        if (name == "S3") {
            for (int g = 0; g < 10; ++g) builder.add_boost();
        }
        preset.n_cells = 2000;
    } else if (name == "S2") {
        const double split = 0.5 * preset.t_max;
        builder.tree.branches = {{"root", -1, 0.0, split, 1.0},
                                 {"branch_a", 0, split, preset.t_max - split, 1.0},
                                 {"branch_b", 0, split, preset.t_max - split, 1.0}};
        builder.tree.schedules.assign(3, {});
        for (int g = 0; g < 18; ++g) builder.add_standard();
        for (int g = 0; g < 6; ++g) builder.add_early_repression();
        for (int g = 0; g < 6; ++g) builder.add_late_induction();
        auto& tree = builder.tree;
        // Branch markers: silent in the root, induced after the split in one branch only.
        for (int g = 0; g < 35; ++g) {
            tree.genes.push_back(builder.rates("branch_marker"));
            const double on = split + builder.uniform(0.0, 2.0);
            const bool in_a = g % 2 == 0;
            tree.schedules[0].push_back(builder.step(0.0, {}));
            tree.schedules[1].push_back(in_a ? builder.step(0.0, {{on, 1.0}}) : builder.step(0.0, {}));
            tree.schedules[2].push_back(in_a ? builder.step(0.0, {}) : builder.step(0.0, {{on, 1.0}}));
        }
        // Divergent repression: on in the root, switched off after the split in one branch only.
        for (int g = 0; g < 35; ++g) {
            tree.genes.push_back(builder.rates("branch_repression"));
            const double on = builder.uniform(0.0, 5.0);
            const double off = split + builder.uniform(0.0, 2.0);
            const bool off_in_a = g % 2 == 0;
            tree.schedules[0].push_back(builder.step(0.0, {{on, 1.0}}));
            tree.schedules[1].push_back(off_in_a ? builder.step(0.0, {{on, 1.0}, {off, 0.0}})
                                                 : builder.step(0.0, {{on, 1.0}}));
            tree.schedules[2].push_back(off_in_a ? builder.step(0.0, {{on, 1.0}})
                                                 : builder.step(0.0, {{on, 1.0}, {off, 0.0}}));
        }
        preset.n_cells = 3000;
    } else {
        throw DomainError("make_preset: unknown preset '" + name + "' (expected S1, S2 or S3)");
    }
    preset.tree = std::move(builder.tree);
    preset.tree.validate();
    return preset;
}

}  // namespace velo::sim
