#include <cmath>

#include "doctest.h"
#include "mfc/constraints.hpp"
#include "mfc/rng.hpp"

using namespace mfc;
using namespace mfc::constraints;
using num::Tensor;

namespace {

AuxConfig small_cfg() {
    AuxConfig c;
    c.n_base_speakers = 20;
    return c;
}

Tensor random_mel(int T, int B, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(T) * B);
    for (auto& x : v) x = rng.uniform(-1.2, 1.2);
    return Tensor::matrix(T, B, std::move(v));
}

}  // namespace

TEST_CASE("triplet loss hand values") {
    auto vec = [](std::vector<double> v) { return Tensor::vector(std::move(v)); };

    CHECK(loss_triplet(vec({1, 0}), vec({1, 0}), {vec({0, 1})}).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_triplet(vec({1, 0}), vec({0, 1}), {vec({1, 0})}).item() ==
          doctest::Approx(2.0).epsilon(1e-12));

    const double expected = 1.0 - 1.0 / std::sqrt(2.0);  // negatives cancel
    CHECK(loss_triplet(vec({1, 1}), vec({1, 0}), {vec({0, 1}), vec({-1, 0})}).item() ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.29289321881).epsilon(1e-9));

    CHECK_THROWS_AS(loss_triplet(vec({0, 0}), vec({1, 0}), {vec({0, 1})}), NumericalError);
    CHECK_THROWS_AS(loss_triplet(vec({1, 0}), vec({1, 0}), {}), ContractViolation);
}

TEST_CASE("triplet loss is invariant to positive scaling") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(6), p(6), n1(6), n2(6);
        for (auto* v : {&a, &p, &n1, &n2}) {
            for (auto& x : *v) x = rng.uniform(-1, 1);
        }
        const double alpha = rng.uniform(0.1, 5.0), beta = rng.uniform(0.1, 5.0),
                     gamma = rng.uniform(0.1, 5.0);
        auto scaled = [](const std::vector<double>& v, double s) {
            std::vector<double> o(v);
            for (auto& x : o) x *= s;
            return Tensor::vector(o);
        };
        const double base = loss_triplet(Tensor::vector(a), Tensor::vector(p),
                                         {Tensor::vector(n1), Tensor::vector(n2)}).item();
        const double sc = loss_triplet(scaled(a, alpha), scaled(p, beta),
                                       {scaled(n1, gamma), scaled(n2, gamma)}).item();
        CHECK(sc == doctest::Approx(base).epsilon(1e-9));
        CHECK(base >= 0.0);
        CHECK(base <= 3.0);  // (1 - cos) in [0,2], mean negative cos in [-1,1]
    }
}

TEST_CASE("speaker cosine loss identities and bounds") {
    auto vec = [](std::vector<double> v) { return Tensor::vector(std::move(v)); };
    CHECK(loss_spk_cos(vec({2, 1}), vec({2, 1})).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_spk_cos(vec({1, 0}), vec({0, 3})).item() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loss_spk_cos(vec({1, 2}), vec({-1, -2})).item() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(loss_spk_cos(vec({0, 0}), vec({1, 0})), NumericalError);

    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(5), b(5);
        for (auto& x : a) x = rng.uniform(-2, 2);
        for (auto& x : b) x = rng.uniform(-2, 2);
        const double v = loss_spk_cos(Tensor::vector(a), Tensor::vector(b)).item();
        CHECK(v >= -1e-12);
        CHECK(v <= 2.0 + 1e-12);
    }
}

TEST_CASE("classifier cross entropy") {
    AuxConfig cfg = small_cfg();
    SpeakerClassifier cls(cfg, 3);
    cls.set_pretrained(true);

    // uniform logits: force the network output to a constant by zeroing params
    for (auto& [name, t] : cls.params().items()) {
        const_cast<Tensor&>(t).mutable_value().assign(t.value().size(), 0.0);
    }
    Tensor mel = random_mel(40, cfg.mel_bins, 5);
    CHECK(loss_spk_ce(cls, mel, 7).item() == doctest::Approx(std::log(20.0)).epsilon(1e-9));

    Tensor p = cls.probs(mel);
    double s = 0;
    for (int i = 0; i < 20; ++i) s += p.at(i);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

    // a confidently correct classifier drives the loss toward zero:
    // out.b is the logit bias, crank class 7
    cls.params().get("out.b").mutable_value()[7] = 50.0;
    CHECK(loss_spk_ce(cls, mel, 7).item() == doctest::Approx(0.0).epsilon(1e-6));

    // target speakers are outside the classifier's label set
    CHECK_THROWS_AS(loss_spk_ce(cls, mel, 20), ContractViolation);
    CHECK_THROWS_AS(loss_spk_ce(cls, mel, -1), ContractViolation);
}

TEST_CASE("style loss identity, levels, and lifecycle") {
    AuxConfig cfg = small_cfg();
    Ser ser(cfg, 11);
    Tensor mel = random_mel(24, cfg.mel_bins, 7);

    CHECK_THROWS_AS(loss_style(ser, mel, mel, {}), LifecycleError);
    ser.set_pretrained(true);

    auto parts = loss_style(ser, mel, mel, {});
    CHECK(parts.total.item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.l.has_value());
    CHECK(parts.m.has_value());
    CHECK(parts.h.has_value());

    StyleLevels mh{false, true, true};
    auto parts_mh = loss_style(ser, mel, random_mel(24, cfg.mel_bins, 8), mh);
    CHECK_FALSE(parts_mh.l.has_value());
    CHECK(parts_mh.total.item() ==
          doctest::Approx(parts_mh.m->item() + parts_mh.h->item()).epsilon(1e-12));
    CHECK(parts_mh.total.item() > 0.0);

    CHECK_THROWS_AS(loss_style(ser, mel, mel, {false, false, false}), ContractViolation);
}

TEST_CASE("content loss identity and lifecycle") {
    AuxConfig cfg = small_cfg();
    ContentModel cm(cfg, 13);
    Tensor mel = random_mel(20, cfg.mel_bins, 9);
    CHECK_THROWS_AS(loss_content(cm, mel, mel), LifecycleError);
    cm.set_pretrained(true);
    CHECK(loss_content(cm, mel, mel).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_content(cm, mel, random_mel(20, cfg.mel_bins, 10)).item() > 0.0);
}

TEST_CASE("discriminator losses with forced scores") {
    AuxConfig cfg = small_cfg();
    Discriminator disc(cfg, 17);
    disc.set_pretrained(true);
    // zero the network so the score equals the output bias
    for (auto& [name, t] : disc.params().items()) {
        const_cast<Tensor&>(t).mutable_value().assign(t.value().size(), 0.0);
    }
    Tensor real = random_mel(16, cfg.mel_bins, 21);
    Tensor fake = random_mel(16, cfg.mel_bins, 22);

    disc.params().get("out.b").mutable_value()[0] = 0.0;  // D(anything) = 0
    CHECK(loss_adv(disc, fake).item() == doctest::Approx(1.0).epsilon(1e-12));

    disc.params().get("out.b").mutable_value()[0] = 1.0;  // D(anything) = 1
    CHECK(loss_adv(disc, fake).item() == doctest::Approx(0.0).epsilon(1e-12));

    disc.params().get("out.b").mutable_value()[0] = 0.5;
    CHECK(loss_adv(disc, fake).item() == doctest::Approx(0.25).epsilon(1e-12));

    // perfect discriminator: D(real)=1, D(fake)=0 is not expressible with a
    // constant net; check the two halves separately instead
    disc.params().get("out.b").mutable_value()[0] = 1.0;
    const double rf_real_perfect = loss_real_fake(disc, real, fake).item();
    CHECK(rf_real_perfect == doctest::Approx(1.0).epsilon(1e-12));  // 0 + D(fake)^2 = 1
    disc.params().get("out.b").mutable_value()[0] = 0.0;
    const double rf_fake_perfect = loss_real_fake(disc, real, fake).item();
    CHECK(rf_fake_perfect == doctest::Approx(1.0).epsilon(1e-12));  // (1-0)^2 + 0

    // literal unsquared variant: |D(fake)| instead of D(fake)^2
    disc.params().get("out.b").mutable_value()[0] = 0.5;
    CHECK(loss_real_fake(disc, real, fake, false).item() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(loss_real_fake(disc, real, fake, true).item() == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("embeddings and features are deterministic and shaped") {
    AuxConfig cfg = small_cfg();
    SpeakerIndicator ind(cfg, 29);
    ind.set_pretrained(true);
    Tensor mel = random_mel(80, cfg.mel_bins, 31);
    Tensor z1 = ind.embed(mel);
    Tensor z2 = ind.embed(mel);
    REQUIRE(z1.shape() == std::vector<int>{cfg.ind_emb});
    CHECK(z1.value() == z2.value());

    AsrStandin asr(cfg, 31);
    asr.set_pretrained(true);
    Tensor f = asr.features(mel);
    CHECK(f.shape() == std::vector<int>{80, cfg.content_dim});

    Ser ser(cfg, 37);
    ser.set_pretrained(true);
    auto sf = ser.features(mel);
    CHECK(sf.h_l.shape() == std::vector<int>{80, cfg.ser_hidden});
    CHECK(sf.h_m.shape() == std::vector<int>{80, cfg.ser_hidden});
    CHECK(sf.h_h.shape() == std::vector<int>{cfg.ser_hh_dim});
}

TEST_CASE("constraint losses pass gradient checks w.r.t. the predicted mel") {
    AuxConfig cfg = small_cfg();
    cfg.n_base_speakers = 6;
    const int T = 8, B = cfg.mel_bins;

    SpeakerClassifier cls(cfg, 41);
    SpeakerIndicator ind(cfg, 43);
    Ser ser(cfg, 47);
    ContentModel cm(cfg, 53);
    Discriminator disc(cfg, 59);
    for (AuxModel* m : {static_cast<AuxModel*>(&cls), static_cast<AuxModel*>(&ind),
                        static_cast<AuxModel*>(&ser), static_cast<AuxModel*>(&cm),
                        static_cast<AuxModel*>(&disc)}) {
        m->freeze();
    }

    Tensor source = random_mel(T, B, 61);
    Rng crng(67);
    std::vector<double> cent(static_cast<size_t>(cfg.ind_emb));
    for (auto& v : cent) v = crng.uniform(-1, 1);
    Tensor centroid = Tensor::vector(cent);

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f) {
        auto rep = num::grad_check(f, random_mel(T, B, 71), 1e-5, 1e-4);
        INFO(name, " max rel err ", rep.max_relative_error, " ", rep.message);
        CHECK(rep.pass);
    };

    check("spk_ce", [&](const Tensor& m) { return loss_spk_ce(cls, m, 2); });
    check("spk_cos", [&](const Tensor& m) { return loss_spk_cos(ind.embed(m), centroid); });
    check("style_lmh", [&](const Tensor& m) { return loss_style(ser, source, m, {}).total; });
    check("style_mh",
          [&](const Tensor& m) { return loss_style(ser, source, m, {false, true, true}).total; });
    check("content", [&](const Tensor& m) { return loss_content(cm, source, m); });
    check("adv", [&](const Tensor& m) { return loss_adv(disc, m); });
    check("real_fake_real_side", [&](const Tensor& m) { return loss_real_fake(disc, m, source); });
    check("triplet", [&](const Tensor& m) {
        return loss_triplet(ind.embed(m), ind.embed(source), {centroid});
    });
}

TEST_CASE("frozen side of style and content losses carries no gradient") {
    AuxConfig cfg = small_cfg();
    Ser ser(cfg, 73);
    ser.freeze();
    Tensor source = random_mel(10, cfg.mel_bins, 79);

    num::Tape tape;
    Tensor pred = random_mel(10, cfg.mel_bins, 83);
    pred.set_requires_grad(true);
    Tensor src_leaf = random_mel(10, cfg.mel_bins, 79);
    src_leaf.set_requires_grad(true);
    auto parts = loss_style(ser, src_leaf, pred, {});
    num::backward(parts.total);
    double src_grad_norm = 0;
    for (double g : src_leaf.grad()) src_grad_norm += g * g;
    CHECK(src_grad_norm == 0.0);  // source side evaluated as a constant
    double pred_grad_norm = 0;
    for (double g : pred.grad()) pred_grad_norm += g * g;
    CHECK(pred_grad_norm > 0.0);
}
