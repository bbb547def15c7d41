#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ofcre/objectives.hpp"

using namespace ofcre;

namespace {

ad::Tensor identity(int n) {
    ad::Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

ad::Tensor random_tensor(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    ad::Tensor t(r, c);
    for (double& x : t.v) x = d(rng);
    return t;
}

std::vector<double> random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = d(rng);
    return v;
}

// Naive reference for the hardest-triplet loss: direct loops, direct exp/log.
double hsmt_reference(const std::vector<std::vector<double>>& zs, const std::vector<std::string>& labels,
                      std::vector<std::optional<double>>* per_anchor = nullptr) {
    const size_t b = zs.size();
    if (per_anchor) per_anchor->assign(b, std::nullopt);
    double acc = 0.0;
    int engaged = 0;
    for (size_t i = 0; i < b; ++i) {
        double max_pos = -1.0, min_neg = -1.0;
        for (size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            double ss = 0.0;
            for (size_t k = 0; k < zs[i].size(); ++k) {
                const double d = zs[i][k] - zs[j][k];
                ss += d * d;
            }
            const double dist = std::sqrt(ss);
            if (labels[j] == labels[i])
                max_pos = max_pos < 0 ? dist : std::max(max_pos, dist);
            else
                min_neg = min_neg < 0 ? dist : std::min(min_neg, dist);
        }
        if (max_pos < 0 || min_neg < 0) continue;
        const double loss = std::log(1.0 + std::exp(max_pos - min_neg));
        if (per_anchor) (*per_anchor)[i] = loss;
        acc += loss;
        ++engaged;
    }
    return engaged == 0 ? 0.0 : acc / engaged;
}

}  // namespace

TEST_CASE("euclidean distance basics and oracle") {
    CHECK(euclidean_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == doctest::Approx(5.0));
    std::vector<double> a{1.5, -2.0, 0.25};
    CHECK(euclidean_distance(a, a) == 0.0);
    CHECK_THROWS_AS(euclidean_distance(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                    std::invalid_argument);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 8);
        auto x = random_vec(n, rng), y = random_vec(n, rng);
        double ss = 0.0;
        for (int i = 0; i < n; ++i) ss += (x[static_cast<size_t>(i)] - y[static_cast<size_t>(i)]) *
                                          (x[static_cast<size_t>(i)] - y[static_cast<size_t>(i)]);
        CHECK(euclidean_distance(x, y) == doctest::Approx(std::sqrt(ss)).epsilon(1e-12));
        CHECK(euclidean_distance(x, y) == doctest::Approx(euclidean_distance(y, x)));
    }
}

TEST_CASE("hsmt reproduces the 1-D fixture anchor value") {
    std::vector<std::vector<double>> zs{{0.0}, {1.0}, {4.0}};
    std::vector<std::string> labels{"A", "A", "B"};
    std::vector<std::optional<double>> per_anchor;
    const double mean = hsmt_loss_value(zs, labels, &per_anchor);

    REQUIRE(per_anchor.size() == 3);
    REQUIRE(per_anchor[0].has_value());
    CHECK(*per_anchor[0] == doctest::Approx(std::log(1.0 + std::exp(-3.0))).epsilon(1e-12));
    CHECK(*per_anchor[0] == doctest::Approx(0.048587).epsilon(1e-4));
    CHECK_FALSE(per_anchor[2].has_value());  // lone B has no positives

    std::vector<std::optional<double>> ref_anchor;
    CHECK(mean == doctest::Approx(hsmt_reference(zs, labels, &ref_anchor)).epsilon(1e-12));
}

TEST_CASE("hsmt symmetric case gives log 2 and single-label batches give zero") {
    // anchor with positive and negative at the same distance
    std::vector<std::vector<double>> zs{{0.0}, {2.0}, {-2.0}};
    std::vector<std::string> labels{"A", "A", "B"};
    std::vector<std::optional<double>> per_anchor;
    hsmt_loss_value(zs, labels, &per_anchor);
    REQUIRE(per_anchor[0].has_value());
    CHECK(*per_anchor[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK(hsmt_loss_value({{0.0}, {1.0}, {5.0}}, {"A", "A", "A"}) == 0.0);
}

TEST_CASE("hsmt equals the brute-force oracle and is permutation invariant") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 60; ++trial) {
        const int b = 2 + static_cast<int>(rng() % 5);
        std::vector<std::vector<double>> zs;
        std::vector<std::string> labels;
        for (int i = 0; i < b; ++i) {
            zs.push_back(random_vec(3, rng));
            labels.push_back(rng() % 2 ? "A" : (rng() % 2 ? "B" : "C"));
        }
        const double got = hsmt_loss_value(zs, labels);
        CHECK(got == doctest::Approx(hsmt_reference(zs, labels)).epsilon(1e-10));
        CHECK(got >= 0.0);

        std::vector<size_t> perm(static_cast<size_t>(b));
        std::iota(perm.begin(), perm.end(), 0);
        for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
        std::vector<std::vector<double>> pz;
        std::vector<std::string> pl;
        for (size_t i : perm) {
            pz.push_back(zs[i]);
            pl.push_back(labels[i]);
        }
        CHECK(hsmt_loss_value(pz, pl) == doctest::Approx(got).epsilon(1e-10));
    }
}

TEST_CASE("hsmt strictly decreases as the hardest negative recedes") {
    std::vector<std::string> labels{"A", "A", "B"};
    double prev = std::numeric_limits<double>::infinity();
    for (double shift = 2.0; shift < 12.0; shift += 1.5) {
        const double cur = hsmt_loss_value({{0.0}, {1.0}, {shift}}, labels);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("bilinear score fixtures and oracle") {
    const int n = 4;
    ad::Tensor w = identity(n);
    std::vector<double> e1(n, 0.0), e2(n, 0.0);
    e1[0] = 1.0;
    e2[1] = 1.0;
    CHECK(bilinear_score(e1, e1, w, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    CHECK(bilinear_score(e1, e2, w, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(bilinear_score(e1, e2, w, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(bilinear_score(e1, e2, w, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(bilinear_score(std::vector<double>{1.0}, e2, w, 1.0), std::invalid_argument);

    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        ad::Tensor rw = random_tensor(n, n, rng, 0.5);
        auto z = random_vec(n, rng), d = random_vec(n, rng);
        const double tau = 0.5 + 0.1 * static_cast<double>(rng() % 10);
        double s = 0.0;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) s += z[static_cast<size_t>(r)] * rw.at(r, c) * d[static_cast<size_t>(c)];
        const double got = bilinear_score(z, d, rw, tau);
        CHECK(got == doctest::Approx(std::exp(s / tau)).epsilon(1e-10));
        CHECK(got > 0.0);
    }
}

TEST_CASE("class weight fixtures") {
    std::vector<std::string> balanced{"A", "A", "B", "B"};
    CHECK(class_weight(balanced, 0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 4; ++i) CHECK(class_weight(balanced, i) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<std::string> skewed{"A", "B", "B", "B"};
    CHECK(class_weight(skewed, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(class_weight(skewed, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    std::vector<std::string> mono{"A", "A", "A"};
    CHECK(class_weight(mono, 1) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<std::string> balanced6{"A", "A", "A", "B", "B", "B"};
    for (int i = 0; i < 6; ++i) CHECK(class_weight(balanced6, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("class weight equals a brute-force negative sum on random batches") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 60; ++trial) {
        const int b = 2 + static_cast<int>(rng() % 7);
        std::vector<std::string> labels;
        for (int i = 0; i < b; ++i) labels.push_back(std::string(1, static_cast<char>('A' + rng() % 3)));
        for (int anchor = 0; anchor < b; ++anchor) {
            auto count = [&](const std::string& l) {
                int c = 0;
                for (const auto& x : labels) c += x == l;
                return c;
            };
            double denom = count(labels[static_cast<size_t>(anchor)]);
            for (int j = 0; j < b; ++j)
                if (labels[static_cast<size_t>(j)] != labels[static_cast<size_t>(anchor)])
                    denom += static_cast<double>(count(labels[static_cast<size_t>(anchor)])) /
                             count(labels[static_cast<size_t>(j)]);
            const double expect = b / denom;
            CHECK(class_weight(labels, anchor) == doctest::Approx(expect).epsilon(1e-12));
            CHECK(class_weight(labels, anchor) > 0.0);
        }
    }
}

TEST_CASE("wmi singleton batch is exactly zero") {
    std::map<std::string, std::vector<std::vector<double>>> descs{{"A", {{0.2, 0.4}}}};
    CHECK(wmi_loss_value({{1.0, -1.0}}, {"A"}, descs, identity(2), 1.0) == 0.0);
}

TEST_CASE("wmi reproduces the two-sample fixture") {
    // h(z_A, d_A) = e, h(z_A, d_B) = 1 via unit basis vectors and W = I.
    std::vector<std::vector<double>> zs{{1.0, 0.0}, {0.0, 1.0}};
    std::vector<std::string> labels{"A", "B"};
    std::map<std::string, std::vector<std::vector<double>>> descs{{"A", {{1.0, 0.0}}},
                                                                  {"B", {{0.0, 1.0}}}};
    std::vector<double> per_anchor;
    const double mean = wmi_loss_value(zs, labels, descs, identity(2), 1.0, &per_anchor);
    const double expect = std::log(1.0 + std::exp(-1.0));
    REQUIRE(per_anchor.size() == 2);
    CHECK(per_anchor[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(per_anchor[0] == doctest::Approx(0.3133).epsilon(1e-3));
    CHECK(mean == doctest::Approx(expect).epsilon(1e-12));  // fixture is symmetric
}

TEST_CASE("duplicated descriptions leave the wmi value unchanged") {
    std::mt19937_64 rng(41);
    const int dim = 3;
    ad::Tensor w = random_tensor(dim, dim, rng, 0.4);
    std::vector<std::vector<double>> zs{random_vec(dim, rng), random_vec(dim, rng), random_vec(dim, rng)};
    std::vector<std::string> labels{"A", "B", "A"};
    std::map<std::string, std::vector<std::vector<double>>> k1{{"A", {random_vec(dim, rng)}},
                                                               {"B", {random_vec(dim, rng)}}};
    std::map<std::string, std::vector<std::vector<double>>> k2;
    for (const auto& [l, ds] : k1) k2[l] = {ds[0], ds[0]};
    CHECK(wmi_loss_value(zs, labels, k2, w, 0.7) ==
          doctest::Approx(wmi_loss_value(zs, labels, k1, w, 0.7)).epsilon(1e-10));
}

TEST_CASE("wmi matches the direct-substitution oracle on random batches") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 40; ++trial) {
        const int dim = 3;
        const int b = 2 + static_cast<int>(rng() % 5);
        const int k = 1 + static_cast<int>(rng() % 3);
        ad::Tensor w = random_tensor(dim, dim, rng, 0.4);
        const double tau = 0.6 + 0.1 * static_cast<double>(rng() % 8);
        std::vector<std::vector<double>> zs;
        std::vector<std::string> labels;
        for (int i = 0; i < b; ++i) {
            zs.push_back(random_vec(dim, rng));
            labels.push_back(std::string(1, static_cast<char>('A' + rng() % 3)));
        }
        std::map<std::string, std::vector<std::vector<double>>> descs;
        for (const auto& l : labels)
            if (!descs.count(l))
                for (int j = 0; j < k; ++j) descs[l].push_back(random_vec(dim, rng));

        double expect = 0.0;
        for (int i = 0; i < b; ++i) {
            std::vector<double> own, negs;
            for (const auto& d : descs[labels[static_cast<size_t>(i)]])
                own.push_back(bilinear_score(zs[static_cast<size_t>(i)], d, w, tau));
            for (int j = 0; j < b; ++j) {
                if (j == i || labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) continue;
                for (const auto& d : descs[labels[static_cast<size_t>(j)]])
                    negs.push_back(bilinear_score(zs[static_cast<size_t>(i)], d, w, tau));
            }
            expect += wmi_anchor_from_scores(own, negs, class_weight(labels, i));
        }
        expect /= b;
        const double got = wmi_loss_value(zs, labels, descs, w, tau);
        CHECK(got == doctest::Approx(expect).epsilon(1e-9));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("wmi is invariant to a common positive rescaling of scores") {
    std::vector<double> own{2.0, 0.5};
    std::vector<double> negs{1.0, 3.0, 0.25};
    const double base = wmi_anchor_from_scores(own, negs, 1.3);
    for (double c : {0.01, 0.5, 7.0, 250.0}) {
        std::vector<double> so = own, sn = negs;
        for (double& x : so) x *= c;
        for (double& x : sn) x *= c;
        CHECK(wmi_anchor_from_scores(so, sn, 1.3) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("wmi raises a hard error naming the label with missing descriptions") {
    std::map<std::string, std::vector<std::vector<double>>> descs{{"A", {{1.0, 0.0}}}};
    try {
        wmi_loss_value({{1.0, 0.0}, {0.0, 1.0}}, {"A", "missing_label"}, descs, identity(2), 1.0);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("missing_label") != std::string::npos);
    }
}

TEST_CASE("info_nce bound term is never positive") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 40; ++trial) {
        const int dim = 3;
        const int b = 1 + static_cast<int>(rng() % 6);
        ad::Tensor w = random_tensor(dim, dim, rng, 0.5);
        std::vector<std::vector<double>> zs;
        std::vector<std::vector<std::vector<double>>> descs;
        for (int i = 0; i < b; ++i) {
            zs.push_back(random_vec(dim, rng));
            std::vector<std::vector<double>> ds;
            for (int j = 0; j <= static_cast<int>(rng() % 3); ++j) ds.push_back(random_vec(dim, rng));
            descs.push_back(ds);
        }
        const double bound = info_nce(zs, descs, w, 0.8);
        CHECK(bound <= 1e-12);
        CHECK(std::log(static_cast<double>(b)) + bound <= std::log(static_cast<double>(b)) + 1e-12);
    }
}

namespace {

// Graph-path batch over constant embeddings; shared by the total-loss tests.
struct Fixture {
    ad::Graph graph;
    ModelState model;
    Batch batch;
};

void build_fixture(Fixture& f, std::mt19937_64& rng, int dim, int b, int k, bool with_candidates) {
    f.model.bilinear_raw = ad::Param("bilinear_raw", dim, dim);
    f.model.bilinear_raw.value = random_tensor(dim, dim, rng, 0.4);
    f.model.bilinear_cand = ad::Param("bilinear_cand", dim, dim);
    f.model.bilinear_cand.value = random_tensor(dim, dim, rng, 0.4);
    f.model.tau = 0.9;
    for (int i = 0; i < b; ++i) {
        const std::string label = std::string(1, static_cast<char>('A' + rng() % 3));
        f.batch.items.push_back(
            BatchItem{"i" + std::to_string(i), f.graph.input(random_vec(dim, rng)), label});
    }
    for (const BatchItem& item : f.batch.items) {
        if (f.batch.raw_descriptions.count(item.label)) continue;
        std::vector<ad::Vec> raw, cand;
        for (int j = 0; j < k; ++j) raw.push_back(f.graph.input(random_vec(dim, rng)));
        f.batch.raw_descriptions.emplace(item.label, raw);
        if (with_candidates) {
            for (int j = 0; j < k; ++j) cand.push_back(f.graph.input(random_vec(dim, rng)));
            f.batch.candidate_descriptions.emplace(item.label, cand);
        }
    }
}

}  // namespace

TEST_CASE("total loss is the exact weighted component sum") {
    std::mt19937_64 rng(61);
    ExperimentConfig cfg;
    cfg.encoder_dim = 4;
    CHECK(cfg.alpha_x == 1.0);
    CHECK(cfg.alpha_xd == 2.0);
    CHECK(cfg.alpha_xc == 2.0);

    Fixture f;
    build_fixture(f, rng, 4, 5, 2, true);
    TotalLoss tl = total_loss(f.graph, f.model, f.batch, cfg);
    const double recomputed = cfg.alpha_x * tl.report.hsmt + cfg.alpha_xd * tl.report.wmi_sd +
                              cfg.alpha_xc * tl.report.wmi_sc;
    CHECK(tl.report.total == doctest::Approx(recomputed).epsilon(1e-15));
    CHECK(tl.report.anchors.size() == 5);

    const std::string line = tl.report.to_json_line(7);
    CHECK(line.find("\"step\":7") != std::string::npos);
    CHECK(line.find("wmi_sd") != std::string::npos);
}

TEST_CASE("zeroed coefficients remove their terms exactly") {
    std::mt19937_64 rng(67);
    ExperimentConfig cfg;
    cfg.alpha_xd = 0.0;
    cfg.alpha_xc = 0.0;

    Fixture f;
    build_fixture(f, rng, 4, 5, 2, true);
    TotalLoss tl = total_loss(f.graph, f.model, f.batch, cfg);

    std::vector<std::vector<double>> zs;
    std::vector<std::string> labels;
    for (const BatchItem& item : f.batch.items) {
        auto v = f.graph.value(item.z);
        zs.emplace_back(v.begin(), v.end());
        labels.push_back(item.label);
    }
    CHECK(tl.report.total == doctest::Approx(hsmt_loss_value(zs, labels)).epsilon(1e-12));
    CHECK(tl.report.wmi_sd == 0.0);
    CHECK(tl.report.wmi_sc == 0.0);
}

TEST_CASE("candidate channel falls back to raw descriptions when absent") {
    std::mt19937_64 rng(71);
    Fixture f;
    build_fixture(f, rng, 4, 4, 2, false);  // no candidate lists at all
    ExperimentConfig cfg;
    TotalLoss tl = total_loss(f.graph, f.model, f.batch, cfg);
    CHECK(std::isfinite(tl.report.wmi_sc));
    // Same descriptions but a different bilinear matrix: the channels differ.
    CHECK(tl.report.wmi_sc != doctest::Approx(tl.report.wmi_sd).epsilon(1e-12));
}

TEST_CASE("total-loss gradients match finite differences on constant embeddings") {
    std::mt19937_64 rng(73);
    ExperimentConfig cfg;
    const int dim = 4;

    for (int trial = 0; trial < 5; ++trial) {
        ModelState model;
        model.bilinear_raw = ad::Param("bilinear_raw", dim, dim);
        model.bilinear_raw.value = random_tensor(dim, dim, rng, 0.4);
        model.bilinear_cand = ad::Param("bilinear_cand", dim, dim);
        model.bilinear_cand.value = random_tensor(dim, dim, rng, 0.4);
        model.tau = 0.9;

        const int b = 3 + static_cast<int>(rng() % 3);
        std::vector<std::vector<double>> zs;
        std::vector<std::string> labels;
        std::map<std::string, std::vector<std::vector<double>>> raws, cands;
        for (int i = 0; i < b; ++i) {
            zs.push_back(random_vec(dim, rng));
            labels.push_back(std::string(1, static_cast<char>('A' + rng() % 2)));
        }
        for (const auto& l : labels) {
            if (raws.count(l)) continue;
            raws[l] = {random_vec(dim, rng), random_vec(dim, rng)};
            cands[l] = {random_vec(dim, rng)};
        }

        auto loss_value = [&]() {
            ad::Graph g;
            Batch batch;
            for (int i = 0; i < b; ++i)
                batch.items.push_back(BatchItem{"i" + std::to_string(i), g.input(zs[static_cast<size_t>(i)]),
                                                labels[static_cast<size_t>(i)]});
            for (const auto& [l, ds] : raws) {
                std::vector<ad::Vec> vs;
                for (const auto& d : ds) vs.push_back(g.input(d));
                batch.raw_descriptions.emplace(l, vs);
            }
            for (const auto& [l, ds] : cands) {
                std::vector<ad::Vec> vs;
                for (const auto& d : ds) vs.push_back(g.input(d));
                batch.candidate_descriptions.emplace(l, vs);
            }
            ad::Graph* gp = &g;
            TotalLoss tl = total_loss(*gp, model, batch, cfg);
            return std::make_pair(g.value0(tl.value), std::move(g));
        };

        // analytic
        {
            ad::Graph g;
            Batch batch;
            for (int i = 0; i < b; ++i)
                batch.items.push_back(BatchItem{"i" + std::to_string(i), g.input(zs[static_cast<size_t>(i)]),
                                                labels[static_cast<size_t>(i)]});
            for (const auto& [l, ds] : raws) {
                std::vector<ad::Vec> vs;
                for (const auto& d : ds) vs.push_back(g.input(d));
                batch.raw_descriptions.emplace(l, vs);
            }
            for (const auto& [l, ds] : cands) {
                std::vector<ad::Vec> vs;
                for (const auto& d : ds) vs.push_back(g.input(d));
                batch.candidate_descriptions.emplace(l, vs);
            }
            TotalLoss tl = total_loss(g, model, batch, cfg);
            g.backward(tl.value);
        }

        const double h = 1e-5;
        for (ad::Param* p : {&model.bilinear_raw, &model.bilinear_cand}) {
            for (size_t i = 0; i < p->value.v.size(); ++i) {
                const double keep = p->value.v[i];
                p->value.v[i] = keep + h;
                const double hi = loss_value().first;
                p->value.v[i] = keep - h;
                const double lo = loss_value().first;
                p->value.v[i] = keep;
                const double expect = (hi - lo) / (2.0 * h);
                const double got = p->grad.v[i];
                const double tol = std::max(1e-8, 1e-3 * std::max(std::abs(got), std::abs(expect)));
                CHECK(std::abs(got - expect) <= tol);
            }
            p->zero_grad();
        }
    }
}
