import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosca import autodiff as ad
from cosca import kernels
from cosca.losses import (
    KernelSpec,
    PseudoLabels,
    contrastive_loss,
    cross_entropy_logits,
    cross_entropy_source,
    discrepancy,
    mmd_loss,
    pseudo_label,
    siamese_distance,
)

from .conftest import rel_err, tape_grad


def T(x):
    return ad.Tensor(x)


def random_probs(rng, n, k):
    return rng.dirichlet(np.ones(k), size=n)


# ------------------------------------------------------------ cross-entropy


def naive_ce(p1, p2, y):
    total = 0.0
    for i in range(len(y)):
        total -= math.log(max(p1[i][y[i]], 1e-12)) + math.log(max(p2[i][y[i]], 1e-12))
    return total / len(y)


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        p = T([[1.0, 0.0], [0.0, 1.0]])
        assert cross_entropy_source(p, p, np.array([0, 1])).item() == 0.0

    def test_uniform_two_classes(self):
        p = T([[0.5, 0.5]])
        for y in (0, 1):
            assert cross_entropy_source(p, p, np.array([y])).item() == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_matches_naive_sum(self, rng):
        p1, p2 = random_probs(rng, 4, 3), random_probs(rng, 4, 3)
        y = rng.integers(0, 3, size=4)
        got = cross_entropy_source(T(p1), T(p2), y).item()
        assert abs(got - naive_ce(p1, p2, y)) < 1e-10

    def test_logit_form_agrees(self, rng):
        z1, z2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        y = rng.integers(0, 3, size=6)
        sm = lambda z: np.exp(z) / np.exp(z).sum(1, keepdims=True)
        got = cross_entropy_logits(T(z1), T(z2), y).item()
        assert abs(got - naive_ce(sm(z1), sm(z2), y)) < 1e-10

    def test_out_of_range_label(self):
        p = T([[0.5, 0.5]])
        with pytest.raises(ValueError):
            cross_entropy_source(p, p, np.array([2]))
        with pytest.raises(ValueError):
            cross_entropy_logits(p, p, np.array([-1]))


# --------------------------------------------------------------------- MMD


class TestMmd:
    def test_identical_batches(self, rng):
        f = rng.normal(size=(5, 4))
        assert mmd_loss(T(f), T(f)).item() == 0.0

    def test_orthogonal_unit_means(self):
        fs = T([[1.0, 0.0], [1.0, 0.0]])
        ft = T([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
        assert mmd_loss(fs, ft).item() == pytest.approx(2.0, abs=1e-12)

    def test_scale_invariance(self, rng):
        fs, ft = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
        base = mmd_loss(T(fs), T(ft)).item()
        assert mmd_loss(T(fs), T(3 * ft)).item() == pytest.approx(base, abs=1e-12)
        assert mmd_loss(T(0.2 * fs), T(ft)).item() == pytest.approx(base, abs=1e-12)

    def test_rbf_variant(self):
        fs = T([[1.0, 0.0]])
        ft = T([[0.0, 1.0]])
        got = mmd_loss(fs, ft, KernelSpec("rbf_mean", 0.5)).item()
        assert got == pytest.approx(2 - 2 * math.exp(-2 / (2 * 0.25)), abs=1e-12)

    def test_zero_mean_skips_normalisation(self):
        fs = T([[1.0, -1.0], [-1.0, 1.0]])
        ft = T([[0.0, 2.0]])
        assert mmd_loss(fs, ft).item() == pytest.approx(1.0, abs=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            mmd_loss(T(np.zeros((0, 2))), T(np.ones((2, 2))))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_nonnegative_and_scale_invariant(self, seed, scale):
        r = np.random.default_rng(seed)
        fs, ft = r.normal(size=(4, 3)), r.normal(size=(5, 3))
        base = mmd_loss(T(fs), T(ft)).item()
        assert base >= 0
        assert mmd_loss(T(fs), T(scale * ft)).item() == pytest.approx(base, abs=1e-9)


# ------------------------------------------------------------- discrepancy


def naive_discrepancy(p1, p2):
    n, k = p1.shape
    total = 0.0
    for i in range(n):
        d = 0.0
        for j in range(k):
            d += abs(p1[i, j] - p2[i, j])
        total += d / k
    return total / n


class TestDiscrepancy:
    def test_equal(self, rng):
        p = random_probs(rng, 5, 3)
        assert discrepancy(T(p), T(p)).item() == 0.0

    def test_maximum_two_classes(self):
        assert discrepancy(T([[1.0, 0.0]]), T([[0.0, 1.0]])).item() == 1.0

    def test_matches_double_loop(self, rng):
        p1, p2 = random_probs(rng, 7, 4), random_probs(rng, 7, 4)
        assert abs(discrepancy(T(p1), T(p2)).item() - naive_discrepancy(p1, p2)) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 6))
    def test_bounds(self, seed, k, n):
        r = np.random.default_rng(seed)
        p1, p2 = random_probs(r, n, k), random_probs(r, n, k)
        d = discrepancy(T(p1), T(p2)).item()
        assert 0.0 <= d <= 2.0 / k + 1e-15
        assert (d == 0.0) == bool(np.all(p1 == p2))

    def test_maximum_attained_by_disjoint_one_hots(self):
        k = 4
        p1 = np.eye(k)
        p2 = np.roll(np.eye(k), 1, axis=1)
        assert discrepancy(T(p1), T(p2)).item() == pytest.approx(2.0 / k)


# ------------------------------------------------------------ pseudo-labels


class TestPseudoLabel:
    def test_example(self):
        pl = pseudo_label(np.array([[0.9, 0.1]]), np.array([[0.8, 0.2]]))
        assert pl.labels[0] == 0
        assert pl.confidence[0] == pytest.approx(1.7)

    def test_tie_goes_to_lowest_index(self):
        pl = pseudo_label(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))
        assert pl.labels[0] == 0

    def test_matches_brute_force(self, rng):
        p1, p2 = random_probs(rng, 50, 5), random_probs(rng, 50, 5)
        pl = pseudo_label(p1, p2)
        for i in range(50):
            best, best_k = -1.0, -1
            for k in range(5):
                if p1[i, k] + p2[i, k] > best:
                    best, best_k = p1[i, k] + p2[i, k], k
            assert pl.labels[i] == best_k
            assert pl.confidence[i] == best

    def test_accepts_tensors(self, rng):
        p1, p2 = random_probs(rng, 3, 2), random_probs(rng, 3, 2)
        np.testing.assert_array_equal(pseudo_label(T(p1), T(p2)).labels, pseudo_label(p1, p2).labels)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, c):
        r = np.random.default_rng(seed)
        p1, p2 = random_probs(r, 8, 4), random_probs(r, 8, 4)
        np.testing.assert_array_equal(pseudo_label(c * p1, c * p2).labels, pseudo_label(p1, p2).labels)


# ------------------------------------------------------------------ siamese


class TestSiamese:
    def test_identical_same_class(self):
        f = T([0.3, -1.2])
        assert siamese_distance(f, f, True, 1.0).item() == 0.0

    def test_at_margin_different_class(self):
        assert siamese_distance(T([0.0, 0.0]), T([0.6, 0.8]), False, 1.0).item() == pytest.approx(0.0, abs=1e-15)

    def test_coincident_different_class(self):
        assert siamese_distance(T([1.0, 1.0]), T([1.0, 1.0]), False, 1.0).item() == 1.0

    def test_same_class_squared_distance(self):
        assert siamese_distance(T([0.0, 0.0]), T([3.0, 4.0]), True, 1.0).item() == 25.0

    def test_bad_margin(self):
        with pytest.raises(ValueError):
            siamese_distance(T([0.0]), T([1.0]), False, 0.0)


# -------------------------------------------------------------- contrastive


def exhaustive_contrastive(fs, ys, ft, yt, margin):
    def pair(a, b, same):
        d = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
        return d * d if same else max(0.0, margin - d) ** 2

    st_vals = [pair(fs[i], ft[j], ys[i] == yt[j]) for i in range(len(fs)) for j in range(len(ft))]
    tt_vals = [pair(ft[i], ft[j], yt[i] == yt[j]) for i in range(len(ft)) for j in range(i + 1, len(ft))]
    st_term = sum(st_vals) / len(st_vals) if st_vals else 0.0
    tt_term = sum(tt_vals) / len(tt_vals) if tt_vals else 0.0
    return st_term + tt_term


def labels_as_pseudo(y):
    y = np.asarray(y)
    return PseudoLabels(labels=y, confidence=np.full(len(y), 2.0))


class TestContrastive:
    def test_all_identical(self):
        f = np.ones((3, 2))
        got = contrastive_loss(T(f), np.zeros(3, int), T(f), labels_as_pseudo(np.zeros(3, int)), 1.0)
        assert got.item() == 0.0

    def test_single_pair(self):
        got = contrastive_loss(T([[0.0, 0.0]]), np.array([1]), T([[3.0, 4.0]]), labels_as_pseudo([1]), 1.0)
        assert got.item() == 25.0

    @pytest.mark.parametrize("backend", kernels.available_backends())
    def test_matches_exhaustive_enumeration(self, backend, rng, monkeypatch):
        monkeypatch.setattr(kernels, "_impl", getattr(kernels, "_compiled" if backend == "compiled" else "_pairs_py").pair_loss)
        for n in (1, 2, 4, 8):
            for _ in range(5):
                fs, ft = rng.normal(size=(n, 3)), rng.normal(size=(n, 3)) * 0.5
                ys, yt = rng.integers(0, 3, size=n), rng.integers(0, 3, size=n)
                m = float(rng.uniform(0.5, 2.5))
                got = contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), m).item()
                assert abs(got - exhaustive_contrastive(fs, ys, ft, yt, m)) < 1e-10

    def test_gradient_matches_siamese_composition(self, rng):
        # independent route: the loss rebuilt from per-pair siamese_distance on the tape
        fs = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        ft = ad.Tensor(rng.normal(size=(4, 4)) * 0.4, requires_grad=True)
        ys, yt = np.array([0, 1, 1]), np.array([1, 0, 1, 1])
        m = 1.3

        def composed():
            st_terms = [siamese_distance(ad.row(fs, i), ad.row(ft, j), ys[i] == yt[j], m)
                        for i in range(3) for j in range(4)]
            tt_terms = [siamese_distance(ad.row(ft, i), ad.row(ft, j), yt[i] == yt[j], m)
                        for i in range(4) for j in range(i + 1, 4)]
            total_st = st_terms[0]
            for t in st_terms[1:]:
                total_st = ad.add(total_st, t)
            total_tt = tt_terms[0]
            for t in tt_terms[1:]:
                total_tt = ad.add(total_tt, t)
            return ad.add(ad.mul(total_st, 1 / 12), ad.mul(total_tt, 1 / 6))

        fused = tape_grad(lambda: contrastive_loss(fs, ys, ft, labels_as_pseudo(yt), m), [fs, ft])
        ref = tape_grad(composed, [fs, ft])
        for a, b in zip(fused, ref):
            assert rel_err(a, b) < 1e-12

    def test_confidence_gating(self):
        fs = np.array([[0.0, 0.0]])
        ft = np.array([[3.0, 4.0], [0.0, 1.0]])
        pseudo = PseudoLabels(labels=np.array([0, 0]), confidence=np.array([0.5, 1.5]))
        got = contrastive_loss(T(fs), np.array([0]), T(ft), pseudo, 1.0, conf_threshold=1.0).item()
        assert got == pytest.approx(1.0)

    def test_pair_budget_subsamples(self, rng):
        fs, ft = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        ys, yt = rng.integers(0, 2, 8), rng.integers(0, 2, 8)
        full = contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), 1.0).item()
        same_budget = contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), 1.0, pair_budget=1000,
                                       rng=np.random.default_rng(0)).item()
        assert same_budget == full
        a = contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), 1.0, pair_budget=20,
                             rng=np.random.default_rng(5)).item()
        b = contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), 1.0, pair_budget=20,
                             rng=np.random.default_rng(5)).item()
        assert a == b and a != full
        with pytest.raises(ValueError):
            contrastive_loss(T(fs), ys, T(ft), labels_as_pseudo(yt), 1.0, pair_budget=20)

    def test_no_gradient_reaches_pseudo_label_source(self, rng):
        x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        fs = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        with ad.Tape() as tape:
            p = ad.softmax_rows(x)
            pseudo = pseudo_label(p.data, p.data)
            loss = contrastive_loss(fs, np.array([0, 1]), ad.Tensor(rng.normal(size=(4, 3))), pseudo, 1.0)
        assert x not in tape.backward(loss)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            contrastive_loss(T(np.zeros((0, 2))), np.zeros(0, int), T(np.ones((1, 2))), labels_as_pseudo([0]), 1.0)
