"""Full-scale gate checks, one per shipping criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line naming its criterion,
runs at the stated scale, and asserts the stated tolerance.  These are the
slow, end-to-end versions of properties the unit suites check in miniature.
"""

import functools
import itertools
import json
import os
import time

import numpy as np
import pytest

import admitsim.autograd as ag
from admitsim import cli, econ, fairness, policy
from admitsim.cohort import (
    GeneratorConfig,
    generate_cohort,
    temporal_split,
    validation_split,
)
from admitsim.matching import (
    Applicant,
    MatchInstance,
    ProgramSeats,
    check_stability,
    david_q_match,
    preference_reports,
    strategy_proofness_probe,
)
from admitsim.models import (
    featurize,
    fit_feature_schema,
    train_gbt,
    train_logreg,
)
from admitsim.models.adapters import build_risk_table
from admitsim.models.sequence import (
    LSTMClassifier,
    LSTMConfig,
    TransformerClassifier,
    TransformerConfig,
    predict_proba,
    train_sequence_model,
)
from admitsim.risk import RiskTable
from admitsim.seqenc import (
    CLS,
    NULL,
    PAD,
    UNK,
    build_vocabulary,
    compute_L,
    encode_cohort,
    event_tokens,
    fit_binning_rules,
    sequence_lengths,
)
from oracles import bootstrap_auc_se, pairwise_auc, pv_series, riemann_abroca
from test_autograd import check_against_numeric
from test_seqenc import build_counted_cohort


_CAPTURE_MANAGER = None


@pytest.fixture(scope="session", autouse=True)
def _grab_capture_manager(request):
    global _CAPTURE_MANAGER
    _CAPTURE_MANAGER = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _emit(line):
    """Print past pytest's output capture so the line always reaches the log."""
    if _CAPTURE_MANAGER is not None:
        with _CAPTURE_MANAGER.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


def criterion(number, label, budget_s):
    """Print one pass/fail line per criterion and enforce its runtime budget."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.time()
            try:
                fn(*args, **kwargs)
            except BaseException:
                _emit(f"[FAIL] criterion {number:2d}: {label} ({time.time() - start:.1f}s)")
                raise
            elapsed = time.time() - start
            if elapsed >= budget_s:
                _emit(f"[FAIL] criterion {number:2d}: {label} ({elapsed:.1f}s, budget {budget_s}s)")
                pytest.fail(f"criterion {number} exceeded its {budget_s}s budget: {elapsed:.1f}s")
            _emit(f"[PASS] criterion {number:2d}: {label} ({elapsed:.1f}s)")

        return wrapper

    return deco


# ---------------------------------------------------------------------------
# 1. fiscal golden numbers


@criterion(1, "econ golden numbers", budget_s=10)
def test_criterion_01_econ_golden_numbers():
    assert 86e6 <= econ.graduate_revenue(377) <= 87e6
    assert 30.8e6 <= econ.graduate_revenue(136) <= 31.8e6
    cost_341 = econ.override_cost(341)
    cost_36 = econ.override_cost(36)
    assert abs(cost_341 - 14.1e6) <= 0.05e6
    assert abs(cost_36 - 1.5e6) <= 0.05e6
    assert abs(cost_341 + cost_36 - 15.6e6) <= 0.05e6
    dkk_low, usd_low = econ.taximeter_value(44_000, 21_000)
    dkk_high, usd_high = econ.taximeter_value(92_400, 49_900)
    assert dkk_low == pytest.approx(153_000)
    assert dkk_high == pytest.approx(327_100)
    assert 21_000 <= usd_low < 22_000
    assert 46_000 <= usd_high < 47_000


# ---------------------------------------------------------------------------
# 2. present-value closed forms vs term-by-term series


@criterion(2, "NPV closed forms match series oracle; scenario grid monotone", budget_s=1 * 60)
def test_criterion_02_npv_oracle():
    sched = econ.DEFAULT_SCHEDULE
    for a in (1.0, 1e6):
        want0 = pv_series(a, 0, sched.r1, sched.r2, sched.r3)
        got0 = econ.pv_three_period(a)
        assert abs(got0 - want0) / want0 < 1e-9
        for k in range(6):
            want = pv_series(a, k, sched.r1, sched.r2, sched.r3)
            got = econ.pv_adjusted(a, k)
            assert abs(got - want) / want < 1e-9, f"a={a} k={k}"

    revenues = np.linspace(0.0, 100e6, 20)
    fixed_costs = np.linspace(0.0, 60e6, 20)
    delays = [0, 5]
    results = econ.scenario_grid(
        revenues=list(revenues), fixed_costs=list(fixed_costs), variable_costs=[10e6], delays=delays
    )
    net = {}
    for r in results:
        s = r.scenario
        net[(s.revenue, s.fixed_cost, s.delay)] = r.net_revenue
    for f in fixed_costs:
        for d in delays:
            series = [net[(r, f, d)] for r in revenues]
            assert all(b >= a for a, b in zip(series, series[1:])), "not monotone in revenue"
    for r in revenues:
        for d in delays:
            series = [net[(r, f, d)] for f in fixed_costs]
            assert all(b <= a for a, b in zip(series, series[1:])), "not monotone in fixed cost"
    for r in revenues:
        for f in fixed_costs:
            assert net[(r, f, 5)] <= net[(r, f, 0)], "delay should not raise value"


# ---------------------------------------------------------------------------
# 3. AUC vs pairwise concordance; DeLong SE vs bootstrap


@criterion(3, "AUC exact vs O(n^2) oracle; DeLong SE within 15% of bootstrap", budget_s=60)
def test_criterion_03_auc_oracle():
    rng = np.random.default_rng(101)
    for trial in range(1000):
        n = int(rng.integers(2, 51))
        scores = rng.integers(0, 8, size=n).astype(float) / 7.0
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        assert policy.auc(scores, labels) == pairwise_auc(scores, labels), f"trial {trial}"

    labels = (rng.random(500) < 0.4).astype(int)
    scores = rng.normal(size=500) + 0.8 * labels
    _, se_delong = policy.auc_se(scores, labels)
    se_boot = bootstrap_auc_se(scores, labels, n_rep=2000, seed=7)
    assert abs(se_delong - se_boot) / se_boot <= 0.15


# ---------------------------------------------------------------------------
# 4. ABROCA identities and fine-grid quadrature oracle


@criterion(4, "ABROCA zero/oracle/rank-invariance properties", budget_s=60)
def test_criterion_04_abroca_oracle():
    rng = np.random.default_rng(202)

    scores = rng.random(80)
    labels = rng.integers(0, 2, size=80)
    labels[:2] = (0, 1)
    group = np.concatenate([np.ones(80, dtype=bool), np.zeros(80, dtype=bool)])
    assert fairness.abroca(np.tile(scores, 2), np.tile(labels, 2), group) == 0.0

    for trial in range(200):
        n_a = int(rng.integers(20, 120))
        n_b = int(rng.integers(20, 120))
        group = np.concatenate([np.ones(n_a, dtype=bool), np.zeros(n_b, dtype=bool)])
        scores = rng.integers(0, 16, size=n_a + n_b).astype(float) / 15.0
        labels = rng.integers(0, 2, size=n_a + n_b)
        for half in (group, ~group):
            if labels[half].sum() == 0:
                labels[np.flatnonzero(half)[0]] = 1
            if labels[half].sum() == half.sum():
                labels[np.flatnonzero(half)[-1]] = 0
        got = fairness.abroca(scores, labels, group)
        want = riemann_abroca(scores, labels, group, n_grid=1_000_000)
        assert abs(got - want) <= 1e-6, f"trial {trial}: {got} vs {want}"

    base = fairness.abroca(scores, labels, group)
    assert fairness.abroca(3.0 * scores + 1.0, labels, group) == base
    assert fairness.abroca(np.exp(scores), labels, group) == base


# ---------------------------------------------------------------------------
# 5. gradient checks at scale


def _kernel_trials(rng):
    """One randomized gradcheck per autograd kernel; returns the trial count."""
    b, l, h = (int(rng.integers(2, 4)) for _ in range(3))
    h += 1
    m, k, n = (int(rng.integers(2, 5)) for _ in range(3))

    def p(shape, name):
        return ag.Parameter(rng.standard_normal(shape), name=name)

    a1, b1 = p((m, k), "a1"), p((m, k), "b1")
    w1, w2 = p((k, n), "w1"), p((m, k, n), "w2")
    gain, bias = p((k,), "gain"), p((k,), "bias")
    table = p((6, k), "table")
    idx = rng.integers(0, 6, size=(b, 2, l))
    positions = rng.integers(0, l, size=m)
    logits = p((m,), "logits")
    targets = (rng.random(m) < 0.5).astype(np.float64)
    drop_seed = int(rng.integers(0, 2**31))

    checks = [
        (lambda: ag.tsum(ag.mul(ag.add(a1, b1), ag.sub(a1, b1))), [a1, b1]),
        (lambda: ag.tsum(ag.mul(ag.neg(a1), a1)), [a1]),
        (lambda: ag.tsum(ag.tanh(ag.matmul(a1, w1))), [a1, w1]),
        (lambda: ag.tsum(ag.reshape(ag.mul(a1, a1), (k, m))), [a1]),
        (lambda: ag.tsum(ag.sigmoid(ag.transpose(w2, (2, 0, 1)))), [w2]),
        (lambda: ag.tsum(ag.mul(ag.narrow(w2, 1, 1, k - 1), ag.narrow(w2, 1, 0, k - 1))), [w2]),
        (
            lambda: ag.tsum(ag.select_positions(ag.tanh(ag.reshape(w2, (m, k, n))), positions % k)),
            [w2],
        ),
        (lambda: ag.tsum(ag.mul(ag.tsum(w2, axis=1, keepdims=True), w2)), [w2]),
        (lambda: ag.tsum(ag.tanh(ag.tmean(w2, axis=2))), [w2]),
        (lambda: ag.tsum(ag.gelu(ag.matmul(a1, w1))), [a1, w1]),
        (lambda: ag.tsum(ag.mul(ag.softmax(a1, axis=1), b1)), [a1]),
        (lambda: ag.tsum(ag.mul(ag.layer_norm(a1, gain, bias), b1)), [a1, gain, bias]),
        (
            lambda: ag.tsum(
                ag.mul(ag.dropout(a1, 0.4, np.random.default_rng(drop_seed), training=True), b1)
            ),
            [a1],
        ),
        (lambda: ag.tsum(ag.tanh(ag.embedding_sum(table, idx))), [table]),
        (lambda: ag.bce_with_logits(logits, targets), [logits]),
    ]
    for build, params in checks:
        check_against_numeric(build, params, tol=1e-4)
    return len(checks)


def _tiny_batch(rng, n, n_channels, length, vocab_size):
    tokens = rng.integers(4, vocab_size, size=(n, n_channels, length)).astype(np.int32)
    lengths = rng.integers(2, length + 1, size=n).astype(np.int32)
    tokens[:, 0, 0] = CLS
    tokens[:, 1:, 0] = NULL
    for i, ln in enumerate(lengths):
        tokens[i, :, ln:] = PAD
    labels = (rng.random(n) < 0.5).astype(np.int8)
    return tokens, lengths, labels


def _full_model_check(model, rng):
    tokens, lengths, labels = _tiny_batch(rng, n=3, n_channels=2, length=5, vocab_size=model.vocab_size)
    targets = labels.astype(np.float64)

    def loss():
        return ag.bce_with_logits(model.forward(tokens, lengths, training=False), targets)

    check_against_numeric(loss, list(model.params()), tol=1e-4)


@criterion(5, "autograd kernels and full model losses match finite differences", budget_s=2 * 60)
def test_criterion_05_gradient_checks():
    rng = np.random.default_rng(303)
    trials = 0
    while trials < 198:
        trials += _kernel_trials(rng)

    tr = TransformerClassifier(
        9, TransformerConfig(n_layers=1, hidden=4, n_heads=2, ff_hidden=8, dropout=0.0, dtype="float64"), seed=1
    )
    _full_model_check(tr, rng)
    lstm = LSTMClassifier(9, LSTMConfig(n_layers=1, hidden=4, dropout=0.0, dtype="float64"), seed=2)
    _full_model_check(lstm, rng)
    trials += 2
    assert trials >= 200

    model = TransformerClassifier(
        12, TransformerConfig(n_layers=1, hidden=8, n_heads=2, dropout=0.1), seed=3
    )
    opt = ag.AdamW(model.params(), lr=1e-3)
    drop_rng = np.random.default_rng(9)
    for step in range(100):
        tokens, lengths, labels = _tiny_batch(np.random.default_rng(step), 8, 3, 6, 12)
        tokens[:, 1, 2] = NULL  # mid-sequence placeholder rows stay live inputs
        logits = model.forward(tokens, lengths, training=True, rng=drop_rng)
        loss = ag.bce_with_logits(logits, labels.astype(np.float64))
        for param in model.params():
            param.zero_grad()
        ag.backward(loss)
        opt.step()
    emb = model._params["embedding"].data
    assert np.all(emb[PAD] == 0.0)
    assert np.all(emb[NULL] == 0.0)
    assert np.any(emb[CLS] != 0.0)


# ---------------------------------------------------------------------------
# 6. sequence encoder fuzz and vocabulary threshold boundary


@criterion(6, "encoder length/alignment/[Null] fuzz and min-count boundary", budget_s=30)
def test_criterion_06_encoder_fuzz():
    cohort = generate_cohort(GeneratorConfig(n_students=500), seed=23)
    rules = fit_binning_rules(cohort)
    vocab = build_vocabulary(cohort, "everything", min_count=1, rules=rules)
    length = compute_L(sequence_lengths(cohort, "everything", rules))
    batch = encode_cohort(cohort, vocab, rules, length)
    channels = vocab.channels
    cls_idx = channels.index("cls")

    assert batch.tokens.shape == (500, len(channels), length)
    for i, student in enumerate(cohort.students):
        grid = batch.tokens[i]
        rows = event_tokens(student, "everything", rules)
        n_socio = sum(1 for r in rows if "sociodemo" in r)
        if len(rows) > length - 1:
            keep = length - 1 - n_socio
            tail = rows[n_socio:][len(rows) - n_socio - keep :] if keep > 0 else []
            rows = (rows[:n_socio] + tail)[: length - 1]
        assert batch.lengths[i] == 1 + len(rows)
        assert grid[cls_idx, 0] == CLS
        assert all(grid[c, 0] == NULL for c in range(len(channels)) if c != cls_idx)
        for pos, row in enumerate(rows, start=1):
            live = {channels[c] for c in range(len(channels)) if grid[c, pos] != NULL}
            assert live == set(row), f"student {student.id}, position {pos}"
        assert (grid[:, 1 + len(rows) :] == PAD).all()

    counted = build_counted_cohort(250, 249)
    boundary_vocab = build_vocabulary(counted, "academic", min_count=250, rules={})
    assert boundary_vocab.id_for("course", "mathematics") != UNK
    assert boundary_vocab.id_for("course", "physics") == UNK


# ---------------------------------------------------------------------------
# 7. matching: stability, capacity, strategy-proofness


def _exhaustive_family(n_students, programs, ranks):
    pids = [p.program_id for p in programs]
    reports = preference_reports(pids)
    gpas = [4.0, 7.0, 10.0, 12.0][:n_students]
    with_q2 = any(p.seats_q2 > 0 for p in programs)
    for profile in itertools.product(reports, repeat=n_students):
        applicants = [
            Applicant(f"s{i}", gpas[i], profile[i], ranks[i] if with_q2 else {})
            for i in range(n_students)
        ]
        yield MatchInstance(applicants, programs)


@criterion(7, "matching stability, capacity, and strategy-proofness", budget_s=2 * 60)
def test_criterion_07_matching():
    rng = np.random.default_rng(404)
    for trial in range(1000):
        n_students = int(rng.integers(1, 31))
        n_programs = int(rng.integers(1, 6))
        programs = []
        for j in range(n_programs):
            q1 = int(rng.integers(0, 4))
            q2 = int(rng.integers(0, 3))
            if q1 + q2 == 0:
                q1 = 1
            programs.append(ProgramSeats(f"p{j}", q1, q2))
        applicants = []
        for i in range(n_students):
            k = int(rng.integers(1, n_programs + 1))
            prefs = tuple(f"p{j}" for j in rng.choice(n_programs, size=k, replace=False))
            ranks = {pid: int(rng.integers(1, 11)) for pid in prefs if rng.random() < 0.5}
            applicants.append(Applicant(f"s{i}", float(rng.normal(7, 2)), prefs, ranks))
        instance = MatchInstance(applicants, programs)
        outcome = david_q_match(instance)
        assert check_stability(instance, outcome) == [], f"trial {trial}"
        for prog in programs:
            assert len(outcome.admitted[prog.program_id]["gpa"]) <= prog.seats_q1
            assert len(outcome.admitted[prog.program_id]["human"]) <= prog.seats_q2
        assert len(outcome.assigned) + len(outcome.unassigned) == n_students

    # every true-preference profile of four students over three single-seat programs
    q1_programs = [ProgramSeats(f"p{j}", 1, 0) for j in range(3)]
    violations = strategy_proofness_probe(_exhaustive_family(4, q1_programs, ranks=None))
    assert violations == []

    # every profile of three students over three programs with a human-track seat
    q2_programs = [ProgramSeats(f"p{j}", 1, 1) for j in range(3)]
    decile_table = [
        {"p0": 2, "p1": 1, "p2": 3},
        {"p0": 1, "p1": 3, "p2": 2},
        {"p0": 3, "p1": 2, "p2": 1},
    ]
    violations = strategy_proofness_probe(_exhaustive_family(3, q2_programs, decile_table))
    assert violations == []


# ---------------------------------------------------------------------------
# 8. end-to-end model ordering on a planted-signal cohort


@criterion(8, "all four models beat the GPA baseline by 3pp with sharper bottom decile", budget_s=10 * 60)
def test_criterion_08_model_ordering():
    seed = 8
    cohort = generate_cohort(GeneratorConfig(n_students=20_000), seed=seed)
    train_all, test = temporal_split(cohort)
    train, val = validation_split(train_all, 0.05, seed=seed)

    y_test = np.array([int(s.completed) for s in test.students])
    gpa_test = np.array([s.gpa for s in test.students])
    gpa_auc = policy.auc(gpa_test, y_test)

    gpa_scaled = (gpa_test - gpa_test.min()) / (gpa_test.max() - gpa_test.min())
    gpa_table = build_risk_table(test.students, gpa_scaled)
    gpa_bottom = policy.contraction_curve(gpa_table, grouping="ungrouped", n_bins=10).rates[0]

    schema = fit_feature_schema(train, "everything")
    x_train, _, y_train = featurize(train, schema)
    x_test, _, _ = featurize(test, schema)

    probs = {}
    model = train_logreg(x_train, y_train, C=1.0, penalty="l2")
    probs["logreg"] = model.predict_proba(x_test)
    model = train_gbt(
        x_train,
        y_train,
        n_estimators=120,
        learning_rate=0.12,
        max_depth=4,
        subsample=0.8,
        colsample_bytree=0.8,
        seed=seed,
    )
    probs["gbt"] = model.predict_proba(x_test)

    rules = fit_binning_rules(train)
    vocab = build_vocabulary(train, "everything", min_count=250, rules=rules)
    length = compute_L(sequence_lengths(train, "everything", rules))
    train_batch = encode_cohort(train, vocab, rules, length)
    val_batch = encode_cohort(val, vocab, rules, length)
    test_batch = encode_cohort(test, vocab, rules, length)

    transformer = TransformerClassifier(
        len(vocab), TransformerConfig(n_layers=1), seed=seed, vocab_hash=vocab.vocab_hash()
    )
    train_sequence_model(transformer, train_batch, val_batch, seed=seed, epochs=6, patience=6, peak_lr=1.2e-3)
    probs["transformer"] = predict_proba(transformer, test_batch)

    lstm = LSTMClassifier(len(vocab), LSTMConfig(), seed=seed, vocab_hash=vocab.vocab_hash())
    train_sequence_model(
        lstm, train_batch, val_batch, seed=seed, epochs=10, patience=10, batch_size=256, peak_lr=1.5e-3
    )
    probs["lstm"] = predict_proba(lstm, test_batch)

    for name, p in probs.items():
        model_auc = policy.auc(p, y_test)
        assert model_auc >= gpa_auc + 0.03, f"{name}: {model_auc:.4f} vs gpa {gpa_auc:.4f}"
        table = build_risk_table(test.students, p)
        bottom = policy.contraction_curve(table, grouping="ungrouped", n_bins=10).rates[0]
        assert bottom < gpa_bottom, f"{name}: bottom decile {bottom:.4f} vs gpa {gpa_bottom:.4f}"


# ---------------------------------------------------------------------------
# 9. fairness test calibration under null and planted shift


def _fairness_table(p_hat, outcome, member):
    n = len(p_hat)
    return RiskTable(
        student_id=np.arange(n),
        program_id=np.array(["P0"] * n),
        quota=np.array(["gpa"] * n),
        p_hat=np.asarray(p_hat, dtype=float),
        outcome=np.asarray(outcome),
        attributes={"g": np.asarray(member, dtype=bool)},
    )


@criterion(9, "fairness z-tests calibrated under null; planted shift detected", budget_s=3 * 60)
def test_criterion_09_fairness_calibration():
    rng = np.random.default_rng(505)
    trials = 1000
    rejects = {"independence": 0, "separation_tpr": 0, "separation_fpr": 0, "sufficiency": 0}
    for _ in range(trials):
        n = 1000
        member = rng.random(n) < 0.5
        scores = 0.2 + 0.6 * rng.random(n)
        outcome = (rng.random(n) < scores).astype(int)
        table = _fairness_table(scores, outcome, member)
        rejects["independence"] += int(fairness.independence_test(table, "g").reject)
        tpr, fpr = fairness.separation_tests(table, "g")
        rejects["separation_tpr"] += int(tpr.reject)
        rejects["separation_fpr"] += int(fpr.reject)
        rejects["sufficiency"] += int(fairness.sufficiency_test(table, "g").reject)

    for name in ("independence", "separation_tpr", "separation_fpr"):
        rate = rejects[name] / trials
        assert 0.03 <= rate <= 0.07, f"{name} null rejection rate {rate:.3f}"
    assert rejects["sufficiency"] / trials <= 0.07

    detected = 0
    shift_trials = 200
    for _ in range(shift_trials):
        n = 5000
        member = rng.random(n) < 0.5
        scores = np.clip((rng.normal(size=n) + 0.3 * member + 4.0) / 8.0, 0.0, 1.0)
        outcome = (rng.random(n) < 0.5).astype(int)
        verdict = fairness.independence_test(_fairness_table(scores, outcome, member), "g")
        detected += int(verdict.reject)
    assert detected / shift_trials >= 0.95


# ---------------------------------------------------------------------------
# 10. two-way fixed effects recovery


@criterion(10, "two-way FE exact on noiseless data; planted beta within 2 SE", budget_s=60)
def test_criterion_10_fixed_effects():
    rng = np.random.default_rng(606)
    n_i, n_j = 200, 15
    gamma = rng.normal(0, 0.3, n_i)
    gamma -= gamma.mean()
    delta = rng.normal(0, 0.5, n_j)
    delta -= delta.mean()
    si = np.repeat(np.arange(n_i), n_j)
    pj = np.tile(np.arange(n_j), n_i)
    y = 0.7 + gamma[si] + delta[pj]
    res = policy.fit_two_way_fe(si, pj, y, spec="both")
    assert res.converged
    assert np.max(np.abs(res.residuals)) < 1e-9
    assert np.allclose([res.gamma[i] for i in range(n_i)], gamma, atol=1e-9)
    assert np.allclose([res.delta[j] for j in range(n_j)], delta, atol=1e-9)

    n_i, n_j = 5000, 20
    si = np.repeat(np.arange(n_i), n_j)
    pj = np.tile(np.arange(n_j), n_i)
    gamma = rng.normal(0, 0.2, n_i)
    delta = rng.normal(0, 0.3, n_j)
    same = (rng.random(len(si)) < 0.3).astype(float)
    beta = 0.006
    y = 0.5 + gamma[si] + delta[pj] + beta * same + rng.normal(0, 0.05, len(si))
    res = policy.fit_two_way_fe(si, pj, y, spec="both_same_field", same_field=same)
    assert res.converged and not res.degenerate
    assert abs(res.beta - beta) < 2.0 * res.beta_se


# ---------------------------------------------------------------------------
# 11. pipeline determinism through the CLI


@criterion(11, "CLI smoke pipeline is byte-identical across reruns", budget_s=4 * 60)
def test_criterion_11_cli_determinism(tmp_path):
    def one_run(parent):
        parent.mkdir()
        config = {
            "version": 1,
            "seed": 11,
            "float64": True,
            "variant": "academic",
            "min_count": 25,
            "cohort": {"n_students": 2000, "n_programs": 20, "start_year": 2008, "end_year": 2014},
            "model": {
                "family": "transformer",
                "params": {"n_layers": 1, "hidden": 16, "n_heads": 2, "dropout": 0.1},
            },
            "training": {"epochs": 2, "warmup": 10, "peak_lr": 1e-3},
        }
        cfg_path = parent / "run.json"
        cfg_path.write_text(json.dumps(config), encoding="utf-8")
        out = parent / "run"
        commands = (
            "generate",
            "encode",
            "train",
            "predict",
            "evaluate",
            "contract",
            "audit-fairness",
            "explain",
            "match",
            "econ",
            "report",
        )
        for command in commands:
            rc = cli.main([command, "--config", str(cfg_path), "--out", str(out)])
            assert rc == 0, command
        return out

    start = time.time()
    first = one_run(tmp_path / "a")
    single_run_s = time.time() - start
    second = one_run(tmp_path / "b")

    rel_paths = sorted(
        os.path.relpath(os.path.join(base, name), first)
        for base, _, names in os.walk(first)
        for name in names
    )
    assert rel_paths
    csv_paths = [p for p in rel_paths if p.endswith(".csv")]
    assert len(csv_paths) >= 10
    for rel in rel_paths:
        a = (first / rel).read_bytes()
        b = (second / rel).read_bytes()
        assert a == b, f"{rel} differs between reruns"
    assert single_run_s < 120, f"smoke pipeline took {single_run_s:.1f}s"
