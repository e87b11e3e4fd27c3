"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary.

Run alone with ``pytest tests/test_acceptance.py`` (or ``python3 tests/test_acceptance.py``).
The two end-to-end benchmark criteria take a few minutes each.
"""
import time

import numpy as np
import pytest

from stepwise.belief import BeliefFormatError, BeliefRecord, StepState, parse_belief, write_belief
from stepwise.cli import main as cli_main
from stepwise.evaluation import ActionSegment, average_precision, iou, match_segments, ranking
from stepwise.pipeline import run_online
from stepwise.state_machine import StateMachine
from stepwise.synth import episode_rng, generate_episode, overlap_rate, sample_timeline, task_means
from stepwise.tasks import PROFILES
from stepwise.tcn import CausalTcnModel, StageOutput, flatten, model_backward, model_forward, unflatten
from stepwise.online import StreamingTcn
from stepwise.training import LabeledSequence, TrainConfig, loss, train_task

from oracles import iou_plain, lexicographic_assignment, staircase_ap


@pytest.fixture
def report(record_property):
    def _report(name, detail):
        record_property("criterion", f"{name}: {detail}")

    return _report


def test_c01_gradient_matches_finite_differences(report):
    t0 = time.perf_counter()
    N, L, H, K, T, D = 2, 3, 8, 4, 20, 6
    m = CausalTcnModel.init(D, K, N, L, H, seed=1)
    rng = np.random.default_rng(101)
    x = rng.normal(size=(T, D))
    y = rng.integers(0, K, T)
    analytic = flatten(model_backward(x, m, loss(model_forward(x, m), y, 0.15).prob_grads))
    v = flatten(m)
    h = 1e-5
    numeric = np.empty_like(v)
    for i in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        numeric[i] = (loss(model_forward(x, unflatten(vp, m)), y, 0.15).value
                      - loss(model_forward(x, unflatten(vm, m)), y, 0.15).value) / (2 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    secs = time.perf_counter() - t0
    report("1 gradient check", f"{v.size} parameters, max rel err {rel.max():.2e} (< 1e-4), {secs:.1f} s (< 30 s)")
    assert rel.max() < 1e-4
    assert secs < 30


def test_c02_perfect_predictions_cost_n_lambda(report):
    worst = 0.0
    cases = 0
    for N in (1, 2, 4):
        for T in (1, 2, 17, 300):
            for lam in (0.0, 0.15, 1.0, 3.7):
                p = np.zeros((T, 6))
                p[:, 3] = 1.0
                with np.errstate(divide="ignore"):
                    outs = [StageOutput(np.log(p), p)] * N
                worst = max(worst, abs(loss(outs, np.full(T, 3), lam).value - N * lam))
                cases += 1
    report("2 loss closed form", f"{cases} cases, max |loss - N*lambda| = {worst:.1e} (< 1e-12)")
    assert worst < 1e-12


def test_c03_streaming_bit_exact(report):
    m = CausalTcnModel.init(16, 6, 4, 10, 64, seed=5)
    x = np.random.default_rng(6).normal(size=(500, 16))
    stream = StreamingTcn(m, capacity=m.receptive_field)
    online = np.array([stream.push(f) for f in x])
    offline = model_forward(x, m)[-1].logits
    mismatched = int((online != offline).any(axis=1).sum())
    report("3 online/offline equivalence", f"500 frames, RF {m.receptive_field}, {mismatched} frames differ (0 allowed)")
    assert mismatched == 0


def _small_model(code, seed=11):
    profile = PROFILES[code]
    means = task_means(profile, 16, 10.0, seed)
    eps = [generate_episode(profile, episode_rng(seed, code, 0, i), 16, 10.0, means) for i in range(8)]
    data = [LabeledSequence(e.features, e.labels, profile.task) for e in eps]
    cfg = TrainConfig(epochs=4, seed=seed, learning_rate=2e-3, num_stages=1, num_layers=5, hidden_dim=16)
    return train_task(data, cfg).model, means


def _allowed(task, done):
    """Actions whose canonical predecessors are all complete."""
    return {a for i, a in enumerate(task.order) if all(done[b] for b in task.order[:i])}


def test_c04_large_alpha_enforces_order(report):
    code = "M2"
    task = PROFILES[code].task
    model, means = _small_model(code)
    frames = violations = changed = 0
    for i in range(100):
        ep = generate_episode(PROFILES[code], episode_rng(11, code, 1, i), 16, 10.0, means)
        raw = model_forward(ep.features, model)[-1].logits
        alpha = 10.0 * float(raw.max() - raw.min())
        tr = run_online(ep.features, model, task, alpha, capacity=1200)
        for z, zt, done in zip(tr.logits, tr.penalized, tr.done_before):
            allowed = _allowed(task, done)
            winner = int(np.argmax(zt[1:])) + 1
            frames += 1
            changed += winner != int(np.argmax(z[1:])) + 1
            if allowed and winner not in allowed:
                violations += 1
    report("4 ordering penalty", f"100 episodes, {frames} frames, {changed} argmax changes, {violations} violations")
    assert violations == 0


def _random_segments(rng, n, conf):
    out = []
    for _ in range(n):
        a = int(rng.integers(0, 20)) * 0.5
        c = float(rng.choice([0.3, 0.6, 0.9])) if conf else 1.0
        out.append(ActionSegment(int(rng.integers(1, 3)), a, a + int(rng.integers(1, 10)) * 0.5, c))
    return out


def test_c05_evaluation_matches_oracles(report):
    rng = np.random.default_rng(55)
    worst = 0.0
    mismatches = 0
    instances = 300
    for _ in range(instances):
        preds = _random_segments(rng, int(rng.integers(0, 6)), True)
        gts = _random_segments(rng, int(rng.integers(1, 6)), False)
        th = float(rng.choice([0.1, 0.2, 0.3, 0.4, 0.5, 0.7]))
        for p in preds:
            for g in gts:
                worst = max(worst, abs(iou(p, g) - iou_plain((p.start, p.stop), (g.start, g.stop))))
        order = ranking(preds)
        tup = lambda s: (s.step_id, s.start, s.stop, s.video)
        best = lexicographic_assignment([tup(preds[i]) for i in order], [tup(g) for g in gts], th)
        m = match_segments(preds, gts, th)
        got = {i: j for i, j, _ in m.pairs}
        mismatches += tuple(got.get(i) for i in order) != best
        flags = [j is not None for j in best]
        worst = max(worst, abs(average_precision(preds, gts, th) - staircase_ap(flags, len(gts))))
    report("5 evaluation oracles", f"{instances} instances, {mismatches} matching mismatches, max abs diff {worst:.1e}")
    assert mismatches == 0 and worst <= 1e-9


def _runs(rng, n, length):
    seq = []
    while len(seq) < length:
        v = rng.dirichlet(np.full(n + 1, 0.5))
        seq.extend([v] * int(rng.integers(1, 9)))
    return seq[:length]


def _spike(rng, base):
    """Replace isolated frames whose +-2 neighbourhood is constant; spikes at least 3 apart."""
    out = list(base)
    last = -10
    for t in range(2, len(base) - 2):
        if t - last >= 3 and all(base[u] is base[t] for u in range(t - 2, t + 3)) and rng.random() < 0.5:
            out[t] = rng.dirichlet(np.full(base[0].size, 0.5))
            last = t
    return out


def _trajectory(seq, n):
    sm = StateMachine(n, p=3)
    traj = []
    for v in seq:
        states, _ = sm.update(v)
        traj.append(tuple(states))
    return traj


def test_c06_state_machine(report):
    rng = np.random.default_rng(66)
    multi_current = non_monotone = flips = spikes = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        base = _runs(rng, n, 30)
        spiked = _spike(rng, base)
        spikes += sum(a is not b for a, b in zip(base, spiked))
        clean_traj, spiked_traj = _trajectory(base, n), _trajectory(spiked, n)
        for traj in (clean_traj, spiked_traj):
            prev = (0,) * n
            for states in traj:
                multi_current += sum(s is StepState.CURRENT for s in states) > 1
                ranks = tuple(s.rank for s in states)
                non_monotone += any(a < b for a, b in zip(ranks, prev))
                prev = ranks
        flips += clean_traj != spiked_traj
    report("6 state machine", f"10000 sequences, {spikes} spikes, {multi_current} multi-current, "
           f"{non_monotone} regressions, {flips} spike-induced changes")
    assert multi_current == non_monotone == flips == 0


def _random_record(rng):
    code = "".join(rng.choice(list("ABMRxyz0123456789_-."), int(rng.integers(1, 5))))
    return BeliefRecord(code, int(rng.integers(1, 40)), StepState(str(rng.choice(["unobserved", "current", "done"]))),
                        round(float(rng.random()), 6), round(float(rng.uniform(0, 1e5)), 6))


def _mutate(rng, data: bytes) -> bytes:
    b = bytearray(data)
    for _ in range(int(rng.integers(1, 6))):
        op = rng.integers(0, 4)
        pos = int(rng.integers(0, len(b) + 1))
        if op == 0 and b:
            b[min(pos, len(b) - 1)] = int(rng.integers(0, 256))
        elif op == 1:
            b[pos:pos] = bytes([int(rng.choice([44, 10, 13, 0, 255, 45, 46, 101]))])
        elif op == 2:
            del b[pos : pos + int(rng.integers(1, 4))]
        else:
            b[pos:pos] = rng.bytes(int(rng.integers(1, 8)))
    return bytes(b)


def test_c07_belief_round_trip_and_fuzz(report):
    rng = np.random.default_rng(77)
    recs = sorted((_random_record(rng) for _ in range(10_000)), key=lambda r: r.timestamp)
    blob = write_belief(recs)
    ok = parse_belief(blob) == recs
    lines = blob.splitlines(keepends=True)
    structured = crashes = 0
    for i in range(10_000):
        if i % 4 == 0:
            data = rng.bytes(int(rng.integers(0, 120)))
        else:
            start = int(rng.integers(0, len(lines) - 3))
            data = _mutate(rng, b"".join(lines[start : start + 3]))
        try:
            parse_belief(data)
        except BeliefFormatError as e:
            structured += e.line >= 1
        except Exception:  # noqa: BLE001 - any other exception is the failure being counted
            crashes += 1
    report("7 belief round trip", f"10000 records equal after round trip: {ok}; 10000 fuzz inputs, "
           f"{structured} structured errors, {crashes} crashes")
    assert ok and crashes == 0


def _e2e(tmp_path, separation):
    out = tmp_path / f"e2e_sep{separation:g}"
    t0 = time.perf_counter()
    rc = cli_main(["e2e", "--seed", "1", "--separation", str(separation), "--out", str(out)])
    secs = time.perf_counter() - t0
    assert rc == 0
    head, row = (out / "map.csv").read_text().splitlines()[:2]
    values = dict(zip(head.split(",")[1:], map(float, row.split(",")[1:])))
    return values, secs


@pytest.mark.slow
def test_c08_end_to_end_benchmark(report, tmp_path):
    values, secs = _e2e(tmp_path, 10)
    report("8 end-to-end benchmark", f"mAP@0.5 {values['mAP@0.5']:.3f} (>= 0.80), avg mAP {values['Avg mAP']:.3f} "
           f"(>= 0.85), {secs:.0f} s (< 600 s)")
    assert values["mAP@0.5"] >= 0.80
    assert values["Avg mAP"] >= 0.85
    assert secs < 600


@pytest.mark.slow
def test_c09_separation_zero_null(report, tmp_path):
    values, secs = _e2e(tmp_path, 0)
    report("9 separation-zero null", f"mAP@0.5 {values['mAP@0.5']:.3f} (< 0.15), {secs:.0f} s")
    assert values["mAP@0.5"] < 0.15


def test_c10_m2_calibration(report):
    rng = np.random.default_rng(10)
    tls = [sample_timeline(PROFILES["M2"], rng) for _ in range(10_000)]
    mean = float(np.mean([iv.duration for tl in tls for iv in tl.intervals]))
    rate = overlap_rate(tls)
    report("10 M2 calibration", f"mean step {mean:.3f} s (4.01 +- 10%), overlap {rate:.4f} (0.163 +- 0.03)")
    assert abs(mean - 4.01) / 4.01 < 0.10
    assert abs(rate - 0.163) < 0.03


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
