import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from conftest import ConstantModel
from diffmia.metrics import auc
from diffmia.model import EpsilonMLP
from diffmia.sampler import phi_step, psi_step
from diffmia.schedule import build_linear_schedule, q_sample
from diffmia.secmi import (AttackConfig, SecMINNs, SecMIStat, TErrorTable,
                           TErrorTransformer, attack_split, compute_t_errors,
                           delta_diagnostic, distance, read_error_vectors,
                           reconstruction_error, secmi_nns, secmi_stat, t_error, t_sweep,
                           train_attack_classifier)

SCHED = build_linear_schedule(100)
BIG = build_linear_schedule(1000)


def test_constant_model_t_error_vanishes(rng):
    m = ConstantModel(rng.normal(size=2))
    scores = t_error(m, SCHED, rng.normal(size=(6, 2)), AttackConfig(10, 3))
    assert np.all(scores < 1e-10)


def test_distances():
    assert distance([0.3, -0.4]) == pytest.approx(0.25, abs=1e-15)
    assert distance([0.3, -0.4], "l1") == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ValueError):
        distance([1.0], "ssim")


class Counting:
    def __init__(self, model):
        self.model, self.calls = model, []

    def __call__(self, x, t, cond=None):
        self.calls.append(t)
        return self.model(x, t, cond)


def test_query_accounting_at_large_scale():
    m = Counting(ConstantModel([0.0, 0.0]))
    t_error(m, BIG, np.zeros((3, 2)), AttackConfig(100, 10))
    assert len(m.calls) == math.ceil(100 / 10) + 2
    assert m.calls[-2:] == [100, 110]


@pytest.mark.parametrize("t,k", [(10, 1), (10, 3), (7, 10), (15, 4)])
def test_query_accounting_general(t, k):
    m = Counting(ConstantModel([0.0]))
    t_error(m, SCHED, np.zeros((1, 1)), AttackConfig(t, k))
    assert len(m.calls) == math.ceil(t / k) + 2


def straight_line_t_error(model, x0, t, k):
    """Per-sample reimplementation of the deterministic chain with scalar coefficients."""
    ab = lambda s: 1.0 if s == 0 else float(np.prod(1.0 - SCHED.betas[:s]))
    x = np.array(x0, dtype=float)
    s = 0
    while s < t:
        nxt = min(s + k, t)
        e = model(x, s)
        x = math.sqrt(ab(nxt)) * (x - math.sqrt(1 - ab(s)) * e) / math.sqrt(ab(s)) \
            + math.sqrt(1 - ab(nxt)) * e
        s = nxt
    e = model(x, t)
    up = math.sqrt(ab(t + k)) * (x - math.sqrt(1 - ab(t)) * e) / math.sqrt(ab(t)) \
        + math.sqrt(1 - ab(t + k)) * e
    e2 = model(up, t + k)
    back = math.sqrt(ab(t)) * (up - math.sqrt(1 - ab(t + k)) * e2) / math.sqrt(ab(t + k)) \
        + math.sqrt(1 - ab(t)) * e2
    return float(np.sum((back - x) ** 2))


@pytest.mark.parametrize("seed", [0, 1])
def test_t_error_two_path_oracle(seed):
    m = EpsilonMLP(2, (16, 16), 100, seed=seed)
    x = np.random.default_rng(seed).uniform(-1, 1, (3, 2))
    got = t_error(m, SCHED, x, AttackConfig(10, 3))
    want = [straight_line_t_error(m, xi, 10, 3) for xi in x]
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_t_error_golden_value():
    m = EpsilonMLP(2, (16, 16), 100, seed=0)
    # golden value produced by straight_line_t_error before the build was frozen
    assert t_error(m, SCHED, np.array([0.25, -0.5]), AttackConfig(10, 1)) == pytest.approx(
        straight_line_t_error(m, [0.25, -0.5], 10, 1), rel=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(0)
    with pytest.raises(ValueError):
        AttackConfig(10, 1, "cosine")
    with pytest.raises(ValueError):
        AttackConfig(threshold_mode="fixed")
    with pytest.raises(ValueError):
        AttackConfig(95, 10).validate(SCHED)


def test_overflow_is_reported():
    class Exploding:
        def __call__(self, x, t, cond=None):
            return np.full_like(np.asarray(x, dtype=float), np.inf)
    with pytest.raises(FloatingPointError, match="t_sec=10"):
        reconstruction_error(Exploding(), SCHED, np.zeros((1, 2)), AttackConfig(10))


def test_delta_vanishes_for_oracle_noise(rng):
    eps = rng.normal(size=(4, 2))
    m = ConstantModel(eps)
    d = delta_diagnostic(m, SCHED, rng.normal(size=(4, 2)), eps, 20)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_delta_zero_model_unit_noise():
    d = delta_diagnostic(ConstantModel([0.0, 0.0]), SCHED, np.zeros(2), np.array([0.6, 0.8]), 5)
    assert d == pytest.approx(1.0, abs=1e-14)


def test_delta_shrinks_with_training():
    from diffmia.data import generate_toy, split
    from diffmia.trainer import TrainConfig, train
    ds = split(generate_toy("gaussian_mixture", 128, seed=0, spread=0.3), 0.5, 0)
    # probe set: every member with 16 noise draws
    members = np.repeat(np.stack([s.x0 for s in ds.members()]), 16, axis=0)
    eps = np.random.default_rng(0).standard_normal(members.shape)
    medians = []
    for epochs in (10, 1500):
        ck = train(ds.members(), SCHED, TrainConfig(epochs=epochs, batch_size=64,
                                                    hidden_dims=(64, 64), learning_rate=2e-3))
        medians.append(np.median(np.abs(delta_diagnostic(ck.model, SCHED, members, eps, 10))))
    assert medians[1] < medians[0]


def table(scores, labels):
    n = len(scores)
    return TErrorTable(np.arange(n), np.full(n, 10), np.asarray(scores, float),
                       np.asarray(labels))


def test_secmi_stat_separable():
    rep = secmi_stat(table([0.1, 0.2, 0.3, 0.4], [1, 1, 0, 0]))
    assert rep.asr == 1.0 and rep.auc == 1.0
    assert 0.2 <= rep.threshold < 0.3


def test_secmi_stat_all_equal():
    assert secmi_stat(table([0.5] * 4, [1, 1, 0, 0])).asr == 0.5


def test_secmi_stat_interleaved():
    rep = secmi_stat(table([0.1, 0.3, 0.2, 0.4], [1, 1, 0, 0]))
    assert rep.asr == 0.75 and rep.auc == 0.75


def test_secmi_stat_fixed_threshold():
    rep = secmi_stat(table([0.1, 0.3, 0.2, 0.4], [1, 1, 0, 0]),
                     config=AttackConfig(threshold_mode="fixed", tau=0.15))
    assert rep.threshold == 0.15 and rep.asr == 0.75


def test_secmi_stat_requires_labels():
    with pytest.raises(ValueError):
        secmi_stat(TErrorTable(np.arange(2), np.full(2, 10), np.ones(2)))


def test_table_merge_is_order_independent(rng):
    a = TErrorTable(np.array([0, 1]), np.array([10, 10]), rng.random(2), np.array([1, 0]))
    b = TErrorTable(np.array([0, 2]), np.array([5, 10]), rng.random(2), np.array([1, 0]))
    ab, ba = a.merge(b), b.merge(a)
    assert ab.entries == ba.entries
    np.testing.assert_array_equal(ab.sample_ids, ba.sample_ids)
    np.testing.assert_array_equal(ab.labels, ba.labels)
    assert ab.at(10).entries == {(0, 10): a.scores[0], (1, 10): a.scores[1],
                                 (2, 10): b.scores[1]}
    clash = TErrorTable(np.array([0]), np.array([10]), np.array([9.0]))
    with pytest.raises(ValueError):
        a.merge(clash)


def test_error_vector_dump(tmp_path, rng):
    m = EpsilonMLP(3, (8,), 100, seed=0)
    tab = compute_t_errors(m, SCHED, rng.normal(size=(4, 3)), AttackConfig(10, 2),
                           sample_ids=[5, 6, 7, 8], keep_vectors=True)
    tab.write_error_vectors(tmp_path / "e.bin")
    ids, ts, vecs = read_error_vectors(tmp_path / "e.bin")
    assert ids.tolist() == [5, 6, 7, 8] and ts.tolist() == [10] * 4
    np.testing.assert_array_equal(vecs, tab.vectors)
    raw = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_error_vectors(tmp_path / "t.bin")


def test_scores_are_deterministic(rng):
    m = EpsilonMLP(2, (8,), 100, seed=1)
    x = rng.normal(size=(5, 2))
    a = compute_t_errors(m, SCHED, x, AttackConfig(10, 2))
    b = compute_t_errors(m, SCHED, x, AttackConfig(10, 2))
    assert a.scores.tobytes() == b.scores.tobytes()


def separable_vectors(n=40, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat([1, 0], n // 2)
    vecs = np.where(labels[:, None] == 1, 0.01, 1.0) * rng.uniform(0.5, 1.5, (n, 3))
    return vecs, labels


def test_attack_classifier_separable():
    vecs, labels = separable_vectors()
    clf = train_attack_classifier(vecs, labels, 0.5)
    assert clf.train_accuracy == 1.0
    rep = secmi_nns(clf, *_eval_part(clf, vecs, labels))
    assert rep.auc == 1.0


def _eval_part(clf, vecs, labels):
    ids = np.arange(len(vecs))
    keep = np.isin(ids, clf.eval_ids)
    return vecs[keep], labels[keep], ids[keep]


def test_attack_split_is_stratified():
    labels = np.repeat([1, 0], 50)
    mask = attack_split(np.arange(100), labels, 0.2, 3)
    assert mask[labels == 1].sum() == 10 and mask[labels == 0].sum() == 10


def test_secmi_nns_refuses_training_samples():
    vecs, labels = separable_vectors()
    clf = train_attack_classifier(vecs, labels, 0.2)
    with pytest.raises(ValueError):
        secmi_nns(clf, vecs, labels)


def test_shuffled_labels_give_no_signal():
    aucs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        vecs = np.abs(rng.normal(size=(200, 2)))
        labels = rng.permutation(np.repeat([1, 0], 100))
        clf = train_attack_classifier(vecs, labels, 0.2, seed=seed)
        aucs.append(secmi_nns(clf, *_eval_part(clf, vecs, labels)).auc)
    assert 0.4 <= np.median(aucs) <= 0.6


def test_nns_on_replicated_scalar_keeps_pace_with_stat():
    rng = np.random.default_rng(0)
    labels = np.repeat([1, 0], 100)
    score = np.where(labels == 1, rng.gamma(2.0, 0.5, 200), rng.gamma(2.0, 1.0, 200))
    vecs = np.repeat(score[:, None], 2, axis=1)
    nns, stat = [], []
    for seed in range(5):
        clf = train_attack_classifier(vecs, labels, 0.2, seed=seed)
        nns.append(secmi_nns(clf, *_eval_part(clf, vecs, labels)).auc)
        keep = np.isin(np.arange(200), clf.eval_ids)
        stat.append(auc(score[keep], labels[keep], "low_is_member"))
    assert np.median(nns) >= np.median(stat) - 0.05


def test_t_sweep_single_t_equals_stat(rng):
    m = EpsilonMLP(2, (8,), 100, seed=0)
    x, labels = rng.normal(size=(10, 2)), np.repeat([1, 0], 5)
    sweep = t_sweep(m, SCHED, x, labels, [10], AttackConfig(10, 2))
    rep = secmi_stat(compute_t_errors(m, SCHED, x, AttackConfig(10, 2), labels=labels))
    assert sweep == {10: (rep.asr, rep.auc)}


def test_untrained_model_has_no_signal():
    from diffmia.data import generate_toy, split
    aucs = []
    for seed in range(5):
        ds = split(generate_toy("gaussian_mixture", 128, seed=0, spread=0.3), 0.5, seed)
        m = EpsilonMLP(2, (64, 64), 100, seed=seed)
        sweep = t_sweep(m, SCHED, ds.X, ds.labels, [5, 10, 15], AttackConfig(10, 10))
        aucs.append([u for _, u in sweep.values()])
    med = np.median(aucs, axis=0)
    assert np.all((med >= 0.4) & (med <= 0.6))


def test_estimator_pipeline(rng):
    m = EpsilonMLP(2, (8,), 100, seed=0)
    x, y = rng.normal(size=(20, 2)), np.repeat([1, 0], 10)
    pipe = make_pipeline(TErrorTransformer(m, SCHED, 10, 2), SecMIStat())
    pipe.fit(x, y)
    direct = secmi_stat(compute_t_errors(m, SCHED, x, AttackConfig(10, 2), labels=y))
    assert np.mean(pipe.predict(x) == y) == pytest.approx(direct.asr)
    assert clone(pipe).get_params()["terrortransformer__t_sec"] == 10
    vec = TErrorTransformer(m, SCHED, 10, 2, output="abs_error").fit(x).transform(x)
    assert vec.shape == (20, 2) and np.all(vec >= 0)


def test_secmi_nns_estimator_api():
    vecs, labels = separable_vectors()
    est = SecMINNs(random_state=0).fit(vecs, labels)
    proba = est.predict_proba(vecs)
    assert proba.shape == (40, 2)
    assert np.all(est.predict(vecs) == labels)
    assert est.get_params()["hidden_layer_sizes"] == (32, 32)


@given(st.lists(st.floats(0, 10), min_size=2, max_size=30))
def test_secmi_stat_threshold_reproduces_asr(scores):
    labels = np.arange(len(scores)) % 2
    rep = secmi_stat(table(scores, labels))
    pred = np.asarray(scores) <= rep.threshold
    bal = 0.5 * (pred[labels == 1].mean() + (~pred[labels == 0]).mean())
    assert bal == pytest.approx(rep.asr)
