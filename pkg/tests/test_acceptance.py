"""Acceptance criteria, one test each.

Every test records a line in ``conftest.ACCEPTANCE``; the terminal summary
prints them as ``criterion N: PASS|FAIL  detail``. Runtime budgets are part of
each criterion and are asserted alongside the numeric checks.
"""
import json
import re
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE, SOFTMAX_LOG, check_distribution
from temporal_heads import layers as L
from temporal_heads import tconv, tslstm
from temporal_heads.data import SynthSpec, synthesize
from temporal_heads.harness.ablation import parse_report
from temporal_heads.harness.baseline import FrameBaselineConfig
from temporal_heads.harness.cli import main
from temporal_heads.harness.config import catalog, find_variant
from temporal_heads.harness.ensemble import ensemble_mean
from temporal_heads.layers import LstmParams, LstmState
from temporal_heads.params import ParameterSet
from temporal_heads.tensor import Tensor
from temporal_heads.train import TrainConfig, fit

pytestmark = pytest.mark.acceptance


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


def test_criterion_1_gradcheck_all_small(capsys):
    started = time.perf_counter()
    code = main(["gradcheck", "--all", "--small"])
    elapsed = time.perf_counter() - started
    out = capsys.readouterr().out
    m = re.search(r"(\d+) variants, worst (\S+) \((.*?)\), (\d+) failed", out)
    n, worst, failed = int(m.group(1)), float(m.group(2)), int(m.group(4))
    expected = len(catalog("tslstm")) + len(catalog("tconv"))
    ok = code == 0 and n == expected and failed == 0 and worst < 1e-4 and elapsed < 300
    record("1 gradcheck", ok, f"{n}/{expected} variants, worst rel err {worst:.2e} ({m.group(3)}), "
                              f"{elapsed:.0f}s (< 300s)")


def _conv_cases(rng, count):
    worst = 0.0
    for _ in range(count):
        b, c, d, t = (int(v) for v in rng.integers(1, 4, 4) + np.array([0, 0, 0, rng.integers(0, 6)]))
        k = int(rng.choice([1, 3, 5, 7]))
        cout = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        x, w, bias = rng.normal(size=(b, c, d, t)), rng.normal(size=(cout, c, k)), rng.normal(size=cout)
        out = L.temporal_conv1d(Tensor(x), Tensor(w), stride, Tensor(bias)).data
        worst = max(worst, np.max(np.abs(out - oracles.conv1d(x, w, stride, bias))))
    return worst


def _pool_cases(rng, count):
    worst = 0.0
    for i in range(count):
        t = int(rng.integers(1, 12))
        x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 5)), t))
        t0 = int(rng.integers(0, t))
        t1 = int(rng.integers(t0 + 1, t + 1))
        kind = ("max", "mean")[i % 2]
        out = L.temporal_pool(Tensor(x), kind, (t0, t1)).data
        worst = max(worst, np.max(np.abs(out - oracles.pool(x, kind, t0, t1))))
    return worst


def _lstm_cases(rng, count):
    worst = 0.0
    for _ in range(count):
        din, h = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        wx, wh, b = rng.normal(size=(din, 4 * h)), rng.normal(size=(h, 4 * h)), rng.normal(size=4 * h)
        x, h0, c0 = rng.normal(size=din), rng.normal(size=h), rng.normal(size=h)
        s = L.lstm_step(Tensor(x), LstmState(Tensor(h0), Tensor(c0)), LstmParams(Tensor(wx), Tensor(wh), Tensor(b)))
        h1, c1 = oracles.lstm_step(x, h0, c0, wx, wh, b)
        worst = max(worst, np.max(np.abs(s.hidden.data - h1)), np.max(np.abs(s.cell.data - c1)))
    return worst


def _fusion_cases(rng, count):
    chains = [(1,), (2, 1), (4, 1), (4, 2, 1), (3, 2, 1)]
    worst = 0.0
    for i in range(count):
        chain = chains[i % len(chains)]
        x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 9)), int(rng.integers(1, 4)), 2))
        params, stats = ParameterSet(), {}
        tconv.conv_fusion(x, chain, params, mode="check", stats=stats, init_rng=rng)
        for name, p in params.items():
            if name.endswith((".gamma", ".beta")):
                p.data[:] = rng.uniform(0.5, 1.5, p.shape)
        out = tconv.conv_fusion(x, chain, params, mode="check", stats=stats).data
        n = len(chain)
        ref = oracles.conv_fusion(
            x, [params[f"fuse.stage{s}.w"].data for s in range(n)],
            [params[f"fuse.stage{s}.b"].data for s in range(n)],
            [(params[f"fuse.stage{s}.bn.gamma"].data, params[f"fuse.stage{s}.bn.beta"].data) for s in range(n - 1)])
        worst = max(worst, np.max(np.abs(out - ref)))
    return worst


def _ce_cases(rng, count):
    worst = 0.0
    for _ in range(count):
        b, c = int(rng.integers(1, 6)), int(rng.integers(2, 8))
        z = rng.normal(scale=3.0, size=(b, c))
        y = rng.integers(0, c, b)
        worst = max(worst, abs(float(L.cross_entropy(Tensor(z), y).data) - oracles.cross_entropy(z, y)))
    return worst


def test_criterion_2_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    count = 100
    worst = {
        "temporal_conv1d": _conv_cases(rng, count),
        "temporal_pool": _pool_cases(rng, count),
        "lstm_step": _lstm_cases(rng, count),
        "conv_fusion": _fusion_cases(rng, count),
        "cross_entropy": _ce_cases(rng, count),
    }
    elapsed = time.perf_counter() - started
    ok = all(v <= 1e-12 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("2 oracles", ok, f"{count} instances each, max abs diff: {detail}; {elapsed:.1f}s (< 60s)")


def test_criterion_3_shape_law():
    started = time.perf_counter()
    bad = []
    for downsample in ("pool", "stride2"):
        cfg = tconv.TemporalConvConfig(num_modules=4, downsample=downsample, fc_width=2, num_classes=2)
        for n in range(1, 65):
            trace = tconv.trace_shapes(cfg, 1, n)
            for i, (_, shape) in enumerate(trace[:4], start=1):
                if shape != (2 ** i, 1, -(-n // 2 ** i)):
                    bad.append((downsample, n, i, shape))
    elapsed = time.perf_counter() - started
    ok = not bad and elapsed < 1.0
    record("3 shape law", ok, f"N=1..64 x 4 modules x 2 downsample modes, {len(bad)} mismatches, "
                              f"{elapsed:.2f}s (< 1s)")


def _fit_accuracy(model, family, dataset):
    cfg = TrainConfig.for_family(family, max_epochs=100, seed=0)
    rep = fit(model, dataset, cfg)
    return rep.final_eval_accuracy, rep.best_eval_accuracy


def test_criterion_4_order_invariance_separation():
    started = time.perf_counter()
    dataset, _, _ = synthesize(SynthSpec())
    k = dataset.num_classes
    models = {
        "baseline": (FrameBaselineConfig(num_classes=k), "baseline"),
        "ts1-max": (replace(find_variant("tslstm", "ts1-max").config, num_classes=k), "tslstm"),
        "ts3-max-lstm64": (replace(find_variant("tslstm", "ts3-max-lstm512").config,
                                   lstm_widths=(64,), num_classes=k), "tslstm"),
        "inception-2mod": (replace(find_variant("tconv", "inception-bn-drop-fc1024").config,
                                   num_modules=2, num_classes=k), "tconv"),
    }
    acc = {name: _fit_accuracy(m, fam, dataset) for name, (m, fam) in models.items()}
    elapsed = time.perf_counter() - started
    blind = all(acc[n][1] <= 0.55 for n in ("baseline", "ts1-max"))
    sighted = all(acc[n][0] >= 0.90 for n in ("ts3-max-lstm64", "inception-2mod"))
    ok = blind and sighted and elapsed < 900
    detail = ", ".join(f"{n} {100 * a[0]:.1f}%" for n, a in acc.items())
    record("4 separation", ok, f"test acc after 100 epochs: {detail} (controls <= 55%, "
                               f"temporal heads >= 90%); {elapsed:.0f}s (< 900s)")


def test_criterion_5_within_segment_permutation():
    started = time.perf_counter()
    rng = np.random.default_rng(55)
    mismatches, trials = 0, 0
    for kind in ("max", "mean"):
        cfg = tslstm.TsLstmConfig(num_segments=3, pool_kind=kind, lstm_widths=(16,), num_classes=5)
        params, stats = tslstm.init_params(cfg, 12, rng)
        for _ in range(100):
            n = int(rng.integers(3, 40))
            x = rng.normal(size=(12, n))
            perm = np.concatenate([a + rng.permutation(b - a) for a, b in tslstm.partition(n, 3)])
            a = tslstm.forward(x, cfg, params, "eval", stats)
            b = tslstm.forward(x[:, perm], cfg, params, "eval", stats)
            mismatches += a.tobytes() != b.tobytes()
            trials += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 10
    record("5 permutation", ok, f"{trials} inputs (max and mean), {mismatches} not bit-identical, "
                                f"{elapsed:.2f}s (< 10s)")


def test_criterion_6_train_determinism(tiny_manifest, tmp_path, capsys):
    started = time.perf_counter()
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"family": "tconv", "variant": "inception-bn-drop-fc1024",
                               "train": {"max_epochs": 4, "batch_size": 4, "seed": 11}}))
    runs = []
    for name in ("a", "b"):
        code = main(["train", "--config", str(cfg), "--dataset", str(tiny_manifest), "--small",
                     "--out", str(tmp_path / name)])
        doc = json.loads((tmp_path / name / "report.json").read_text())
        runs.append((code, doc, (tmp_path / name / "checkpoint.npz").read_bytes()))
    capsys.readouterr()
    elapsed = time.perf_counter() - started
    (ca, a, pa), (cb, b, pb) = runs
    losses_a = [e["loss"] for e in a["epochs"]]
    losses_b = [e["loss"] for e in b["epochs"]]
    ok = ca == cb == 0 and losses_a == losses_b and a["checksum"] == b["checksum"] and pa == pb and elapsed < 120
    record("6 determinism", ok, f"loss traces equal: {losses_a == losses_b}, checksum {a['checksum'][:12]} "
                                f"equal: {a['checksum'] == b['checksum']}, {elapsed:.1f}s (< 120s)")


def test_criterion_7_distribution_validity():
    rng = np.random.default_rng(7)
    rows = 0
    for scale in (0.01, 1.0, 5.0, 8.0):
        for c in (2, 3, 8, 101):
            z = rng.normal(scale=scale, size=(50, c))
            check_distribution(L.softmax(Tensor(z)).data, z)
            rows += 50
    for k in range(1, 9):
        preds = [L.softmax(Tensor(rng.normal(size=(20, 6)))).data for _ in range(k)]
        check_distribution(ensemble_mean(preds))
    violations = len(SOFTMAX_LOG["violations"])
    record("7 distributions", violations == 0,
           f"sweep of {rows} rows plus ensemble_mean for K=1..8; suite-wide guard so far: "
           f"{SOFTMAX_LOG['rows']} rows, {violations} violations")


def test_criterion_8_catalog_fidelity(tiny_manifest, tmp_path, capsys):
    rows = {}
    for family in ("tslstm", "tconv"):
        code = main(["ablate", "--family", family, "--dataset", str(tiny_manifest), "--small",
                     "--epochs", "1", "--jobs", "4", "--out", str(tmp_path / family)])
        assert code == 0
        rows[family] = parse_report((tmp_path / family / "ablation.json").read_text())
    text = (tmp_path / "tslstm" / "ablation.txt").read_text() + (tmp_path / "tconv" / "ablation.txt").read_text()
    capsys.readouterr()
    by_id = {r.variant_id: r for rs in rows.values() for r in rs}
    counts = {f: len(rs) for f, rs in rows.items()}
    ids_match = all(sorted(r.variant_id for r in rows[f]) == sorted(e.id for e in catalog(f)) for f in rows)
    spot = {
        "Max + 512": "Max + 512" in by_id["ts3-max-lstm512"].descriptor,
        "{(T,T),(T,T),(T,T),(T,T)}": by_id["inception-bn-drop-fc1024"].descriptor[0] == "{(T,T),(T,T),(T,T),(T,T)}",
        "Conv1, 4 / Conv1, 2 / Conv1, 1":
            by_id["fusion-final-conv4-2-1"].descriptor[2:5] == ("Conv1, 4", "Conv1, 2", "Conv1, 1"),
    }
    in_text = all(s in text for s in ("Max + 512", "{(T,T),(T,T),(T,T),(T,T)}", "Conv1, 4"))
    ok = counts == {"tslstm": 28, "tconv": 41} and ids_match and all(spot.values()) and in_text
    record("8 catalog", ok, f"rows {counts['tslstm']} tslstm + {counts['tconv']} tconv, ids match catalog: "
                            f"{ids_match}, descriptors: " + ", ".join(f"{k!r} {v}" for k, v in spot.items()))
