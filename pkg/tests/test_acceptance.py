"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints under
"acceptance criteria". Thresholds are the contract; none are loosened here.
"""

import contextlib
import dataclasses
import json
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record_acceptance
from fetr.attention import DCAParams, cca_pass, count_ops, criss_cross_mask, dca_forward
from fetr.backbone import NetworkSpec, build_network, count_parameters
from fetr.bench import nonlocal_forward, run_bench
from fetr.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from fetr.cli import main
from fetr.data import load_images, split_train_val
from fetr.metrics import confusion_matrix, precision_recall_f1, topk_accuracy
from fetr.tensor import Tensor
from fetr.training import OptimizerState, TrainConfig, evaluate, train_epoch

from oracles import (
    GRAD_RTOL,
    cca_reference,
    confusion_pairs,
    macro_mean,
    prf_spreadsheet,
    topk_sort_oracle,
)
from test_attention import dca_error, dca_params, position_jacobian, se_error, style_rm_error
from test_backbone import dca_count, expected_breakdown, network_gradient_error, style_rm_count
from test_ops import OP_CASES, batch_norm_error, op_error
from test_tensor import PRIMITIVES, primitive_error

SEEDS = range(5)


@contextlib.contextmanager
def criterion(number, title):
    """Record a PASS/FAIL line for ``title`` (with whatever ``notes`` collected) and re-raise failures."""
    notes = []
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException:
        status = "FAIL"
        raise
    else:
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - t0
        detail = "; ".join(notes)
        record_acceptance(f"[{number}] {status} {title} ({elapsed:.1f}s){': ' + detail if detail else ''}")


def test_1_gradient_suite():
    with criterion(1, "gradient suite, float64 finite differences, 5 seeds each") as notes:
        t0 = time.perf_counter()
        worst = {}
        for seed in SEEDS:
            for name in PRIMITIVES:
                worst[f"prim:{name}"] = max(worst.get(f"prim:{name}", 0.0), primitive_error(name, seed))
            for name in OP_CASES:
                worst[f"op:{name}"] = max(worst.get(f"op:{name}", 0.0), op_error(name, seed))
            for training in (True, False):
                key = f"op:batch_norm[{'train' if training else 'eval'}]"
                worst[key] = max(worst.get(key, 0.0), batch_norm_error(training, seed))
            for key, fn in (
                ("style_rm_forward", lambda: style_rm_error(seed)),
                ("se_forward", lambda: se_error(seed)),
                ("cca_pass", lambda: dca_error(seed, 1)),
                ("dca_forward", lambda: dca_error(seed, 2)),
            ):
                worst[key] = max(worst.get(key, 0.0), fn())
        skipped = checked = 0
        for seed in SEEDS:
            report = network_gradient_error(seed)
            worst["network"] = max(worst.get("network", 0.0), report.worst)
            skipped, checked = skipped + report.skipped, checked + report.checked
        elapsed = time.perf_counter() - t0
        top = max(worst, key=worst.get)
        notes.append(f"{len(worst)} checks, worst {top} = {worst[top]:.2e}")
        notes.append(f"network: {checked} coords, {skipped} kink-straddling skipped")
        assert all(v <= GRAD_RTOL for v in worst.values()), {k: v for k, v in worst.items() if v > GRAD_RTOL}
        assert skipped <= checked // 4
        assert elapsed < 300


def test_2_criss_cross_correctness():
    with criterion(2, "criss-cross equals masked dense oracle; position Jacobians") as notes:
        t0 = time.perf_counter()
        worst = 0.0
        for n in range(2, 7):
            for seed in SEEDS:
                p = dca_params(8, 10 * n + seed, kernel=3)
                r = np.random.default_rng(seed).standard_normal((2, 8, n, n))
                got = cca_pass(Tensor(r), p).data
                masked = nonlocal_forward(Tensor(r), p, mask=criss_cross_mask(n, n)).data
                worst = max(worst, np.abs(got - masked).max(), np.abs(got - cca_reference(r, p)).max())
        notes.append(f"max |cca - oracle| = {worst:.1e}")
        assert worst <= 1e-8

        p = dca_params(8, 5)
        r = np.random.default_rng(5).standard_normal((1, 8, 5, 5))
        single = position_jacobian(lambda x: cca_pass(x, p), r)
        double = position_jacobian(lambda x: dca_forward(x, p), r)
        notes.append(f"one pass {int(single.sum())}/625 nonzero, two passes {int(double.sum())}/625")
        assert np.array_equal(single, criss_cross_mask(5, 5))
        assert double.all()
        assert time.perf_counter() - t0 < 120


SIZES = (8, 16, 32, 64)


def test_3_complexity_counters_and_timing():
    with criterion(3, "score/MAC counters, 127/4096 ratio, timing crossover") as notes:
        t0 = time.perf_counter()
        channels = 32
        reports = run_bench(SIZES, channels=channels, repeats=5)
        cq = DCAParams.reduced_channels(channels)
        for rep in reports:
            n = rep.H * rep.W
            assert rep.cc_scores == n * (rep.H + rep.W - 1)
            assert rep.nl_scores == n * n
            assert rep.cc_macs == cq * (rep.H + rep.W - 1) * n
            assert rep.nl_macs == cq * n * n
            assert rep.cc_aggregate_macs == channels * (rep.H + rep.W - 1) * n
        r64 = reports[SIZES.index(64)]
        assert Fraction(r64.cc_scores, r64.nl_scores) == Fraction(127, 4096)

        # a batched run confirms the B factor is counted, not assumed
        with count_ops() as c:
            cca_pass(Tensor(np.zeros((3, channels, 8, 8))), DCAParams.create(channels, np.random.default_rng(0)))
        assert c.score_macs == cq * 15 * 64 * 3

        slow = [(rep.H, rep.cc_ms, rep.nl_ms) for rep in reports if rep.H >= 32 and rep.cc_ms >= rep.nl_ms]
        notes.append(", ".join(f"{rep.H}: cc {rep.cc_ms:.1f}ms vs nl {rep.nl_ms:.1f}ms" for rep in reports))
        assert not slow, slow
        assert time.perf_counter() - t0 < 180


def test_4_parameter_sharing_and_lattice():
    with criterion(4, "two-pass DCA shares weights; ablation lattice deltas") as notes:
        one = count_parameters(build_network(NetworkSpec(dca_passes=1), 0))
        two = count_parameters(build_network(NetworkSpec(dca_passes=2), 0))
        assert one == two

        base = NetworkSpec(style_rm=False, dca_stages=())
        variants = {
            "SE only": base,
            "+StyleRM": dataclasses.replace(base, style_rm=True),
            "+DCA": dataclasses.replace(base, dca_stages=(4,)),
            "+both": dataclasses.replace(base, style_rm=True, dca_stages=(4,)),
        }
        counts = {k: count_parameters(build_network(v, 0)) for k, v in variants.items()}
        for name, spec in variants.items():
            total, breakdown = counts[name]
            assert breakdown == expected_breakdown(spec)
            assert total == sum(breakdown.values())
        w = NetworkSpec().widths
        srm, dca = style_rm_count(w[0]) + style_rm_count(w[1]), dca_count(w[3])
        assert counts["+StyleRM"][0] - counts["SE only"][0] == srm
        assert counts["+DCA"][0] - counts["SE only"][0] == dca
        assert counts["+both"][0] - counts["+StyleRM"][0] == dca
        assert counts["+both"][0] - counts["+DCA"][0] == srm
        notes.append(", ".join(f"{k} {v[0]:,}" for k, v in counts.items()) + f"; one-pass = two-pass = {one[0]:,}")


def test_5_overfit_smoke(synth_k10):
    with criterion(5, "tiny network memorises K=10 N=50 32x32 within 100 epochs") as notes:
        _, manifest = synth_k10
        data = load_images(manifest)
        # memorisation test: no augmentation, every other setting as in the default protocol
        config = TrainConfig(epochs=100, lr=1e-4, optimizer="adam", augment=False, seed=0)
        net = build_network(NetworkSpec(num_classes=10), seed=0)
        state = OptimizerState("adam")
        t0 = time.perf_counter()
        reached, acc = None, 0.0
        for epoch in range(config.epochs):
            train_epoch(net, data, config, state, epoch)
            if epoch % 5 == 4:
                acc = evaluate(net, data, config).top1
                if acc >= 0.95:
                    reached = epoch + 1
                    break
        elapsed = time.perf_counter() - t0
        notes.append(f"train top-1 {acc:.3f} (eval mode, all 500 images) at epoch {reached or config.epochs}")
        assert reached is not None
        assert elapsed < 15 * 60


ABLATION_EPOCHS = 30


def test_6_directional_ablation(synth_k10):
    with criterion(6, f"full vs SE-only mean val top-1 over 5 seeds ({ABLATION_EPOCHS} epochs each)") as notes:
        _, manifest = synth_k10
        full_spec = NetworkSpec(num_classes=10)
        se_spec = NetworkSpec(num_classes=10, style_rm=False, dca_stages=())
        scores = {"full": [], "se": []}
        for seed in SEEDS:
            train_m, val_m = split_train_val(manifest, 0.8, seed)
            train_set, val_set = load_images(train_m), load_images(val_m)
            for key, spec in (("full", full_spec), ("se", se_spec)):
                config = TrainConfig(epochs=ABLATION_EPOCHS, seed=seed)
                net = build_network(spec, seed=seed)
                state = OptimizerState("adam")
                for epoch in range(config.epochs):
                    train_epoch(net, train_set, config, state, epoch)
                scores[key].append(evaluate(net, val_set, config).top1)
        full, se = statistics.mean(scores["full"]), statistics.mean(scores["se"])
        notes.append(f"full {[round(v, 2) for v in scores['full']]} mean {full:.3f}")
        notes.append(f"SE-only {[round(v, 2) for v in scores['se']]} mean {se:.3f}")
        assert full >= se


def test_7_metrics_oracles():
    with criterion(7, "confusion / P-R-F1 / top-k equal brute-force oracles on 1000 sets") as notes:
        mismatches = 0
        for s in range(1000):
            r = np.random.default_rng(s)
            K = int(r.integers(2, 13))
            n = int(r.integers(1, 150))
            labels = r.integers(0, K, n)
            # coarse integer logits make ties common, exercising the tie-break rule
            logits = r.integers(-3, 4, (n, K)).astype(float) if s % 2 else r.standard_normal((n, K))
            preds = np.argsort(-logits, axis=1, kind="stable")[:, 0]
            cm = confusion_matrix(preds, labels, K)
            scores = precision_recall_f1(cm)
            P, R, F = prf_spreadsheet(cm.counts.tolist())
            ok = np.array_equal(cm.counts, confusion_pairs(preds, labels, K))
            ok &= scores.precision.tolist() == P and scores.recall.tolist() == R and scores.f1.tolist() == F
            ok &= (scores.macro_precision, scores.macro_recall, scores.macro_f1) == (macro_mean(P), macro_mean(R), macro_mean(F))
            top1 = topk_accuracy(logits, labels, 1)
            top5 = topk_accuracy(logits, labels, min(5, K))
            ok &= top1 == topk_sort_oracle(logits.tolist(), labels.tolist(), 1)
            ok &= top5 == topk_sort_oracle(logits.tolist(), labels.tolist(), min(5, K))
            ok &= top1 == float((preds == labels).mean()) and top5 >= top1
            mismatches += not ok
        notes.append(f"{mismatches} mismatching sets")
        assert mismatches == 0


REPRO_CONFIG = """
[model]
input_size = 16
[train]
epochs = 3
batch_size = 8
"""


def test_8_reproducibility(synth_small, tmp_path, capsys):
    with criterion(8, "byte-identical reruns, resume equivalence, checkpoint double round-trip") as notes:
        cfg = tmp_path / "run.ini"
        cfg.write_text(REPRO_CONFIG)

        def train(out, *extra):
            argv = ["train", "--config", cfg, "--data", synth_small, "--out", out, "--seed", 11, "--no-timing", *extra]
            assert main([str(a) for a in argv]) == 0
            return capsys.readouterr().out

        a, b = train(tmp_path / "a"), train(tmp_path / "b")
        assert a == b and len(a.splitlines()) == 3
        for name in ("last.fetr", "best.fetr"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        notes.append(f"stream sha-equal over {len(a.splitlines())} epochs, checkpoints identical")

        first = train(tmp_path / "r", "--stop-after", 1)
        rest = train(tmp_path / "r", "--resume", tmp_path / "r" / "last.fetr")
        assert first + rest == a
        assert (tmp_path / "r" / "last.fetr").read_bytes() == (tmp_path / "a" / "last.fetr").read_bytes()
        notes.append("stop after 1 + resume == uninterrupted")

        src = tmp_path / "a" / "last.fetr"
        save_checkpoint(tmp_path / "again.fetr", load_checkpoint(src))
        assert (tmp_path / "again.fetr").read_bytes() == src.read_bytes()
        assert encode_checkpoint(decode_checkpoint(src.read_bytes())) == src.read_bytes()
        assert json.loads(a.splitlines()[-1])["epoch"] == 3
        notes.append("save(load(x)) == x")
