"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (see ``conftest.pytest_terminal_summary``)
before asserting, so a full run ends with a ten-line verdict table. Criteria 6
and 7 train real models and dominate the runtime (about half an hour on one
CPU core).
"""

import time

import numpy as np
import pytest

from specaware.checks import run_gradcheck
from specaware.config import LossConfig, ModelConfig, Stage, TrainConfig, default_stages
from specaware.data import (
    HsiCube, build_dataset, candidate_starts, compute_stats, decode_patch, default_sensor_set, encode_patch,
)
from specaware.hyper import HyperEmbedding, HyperFactors, factorized_embed, flops_report, param_count
from specaware.losses import charbonnier, sam_loss, total_loss
from specaware.mae import SpecAwareMAE, hyperlinear_reconstruct, random_masking
from specaware.meta import MetaEncoder, TextEmbeddingProvider
from specaware.numerics import Tensor
from specaware.sensors import BandSelection, get_sensor, subset
from specaware.train import Trainer, apply_name_dropout, linear_probe

VERDICTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    """Three L1 sensors x 64 patches at 64x64: the desk pretraining corpus."""
    root = tmp_path_factory.mktemp("acceptance_data")
    ds = build_dataset(root, default_sensor_set(), per_sensor=64, size=64, seed=0)
    stats = compute_stats(ds, seed=0)
    stats.save(root / ds.stats_file)
    return ds, stats


# -- 1 ---------------------------------------------------------------------------------------

def _dense_embed(p, U, V, bias):
    out = np.repeat(bias[:, None, :], p.shape[1], axis=1).copy()
    for s in range(p.shape[0]):
        for c in range(p.shape[2]):
            out[s] += p[s, :, c, :] @ (U[s, c] @ V[s, c]).T
    return out


def _dense_reconstruct(z, U, V, bias):
    b, n, _ = z.shape
    c = U.shape[1]
    out = np.empty((b, n, c, U.shape[2]))
    for s in range(b):
        for ch in range(c):
            out[s, :, ch, :] = z[s] @ (U[s, ch] @ V[s, ch]).T + bias[s]
    return out


def test_01_factorized_ops_match_dense_oracles():
    t0 = time.time()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        c, n = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        d, r, kk = int(rng.integers(2, 24)), int(rng.integers(1, 5)), 16
        U, V, bias = rng.normal(size=(2, c, d, r)), rng.normal(size=(2, c, r, kk)), rng.normal(size=(2, d))
        p = rng.normal(size=(2, n, c, kk))
        got = factorized_embed(p, HyperFactors(Tensor(U), Tensor(V), Tensor(bias))).data
        ref = _dense_embed(p, U, V, bias)
        worst = max(worst, np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref))))

        U2, V2, b2 = rng.normal(size=(2, c, kk, r)), rng.normal(size=(2, c, r, d)), rng.normal(size=(2, kk))
        z = rng.normal(size=(2, n, d))
        got = hyperlinear_reconstruct(Tensor(z), HyperFactors(Tensor(U2), Tensor(V2), Tensor(b2))).data
        ref = _dense_reconstruct(z, U2, V2, b2)
        worst = max(worst, np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref))))
    elapsed = time.time() - t0
    verdict(1, "factorized embed/reconstruct vs dense", worst <= 1e-5 and elapsed < 60,
            f"max err {worst:.2e} over 100 seeds in {elapsed:.1f}s")


# -- 2 ---------------------------------------------------------------------------------------

def test_02_gradient_checks():
    t0 = time.time()
    reports = run_gradcheck(seed=0)
    elapsed = time.time() - t0
    failed = [name for name, rep in reports.items() if not rep.passed]
    worst = max(rep.max_rel_err for rep in reports.values())
    e2e = [name for name in reports if name.startswith("end_to_end")]
    verdict(2, "finite-difference gradients", not failed and len(e2e) == 3 and elapsed < 600,
            f"{len(reports)} cases, max rel err {worst:.2e}, failed {failed or 'none'}, {elapsed:.0f}s")


# -- 3 ---------------------------------------------------------------------------------------

def test_03_one_parameter_set_any_band_count():
    cfg = ModelConfig(img_size=32)
    rng = np.random.default_rng(0)
    meta, emb = MetaEncoder(cfg.d, rng), HyperEmbedding(cfg, rng)
    provider = TextEmbeddingProvider.default()
    before = [p.data.copy() for p in meta.parameters() + emb.parameters()]
    ng = get_sensor("AVIRIS-NG", "L1")
    shapes, counts = [], set()
    for c in (50, 100, 224, 284, 425):
        spec = subset(ng, BandSelection(0, c))
        x = np.random.default_rng(c).normal(size=(1, c, 32, 32)).astype(np.float32)
        tokens, f = emb(Tensor(x), meta(spec, provider).values)
        shapes.append(tokens.shape == (1, 16, cfg.width) and f.U.shape[1] == c)
        counts.add(emb.hyper.num_parameters())
        counts.add(param_count(ModelConfig.vit_base(), c)["hypernetwork"])
    unchanged = all(np.array_equal(a, p.data) for a, p in zip(before, meta.parameters() + emb.parameters()))
    verdict(3, "channel flexibility", all(shapes) and unchanged and len(counts) == 2,
            f"C in (50,100,224,284,425) -> tokens {(1, 16, cfg.width)}, hyper params {sorted(counts)}")


# -- 4 ---------------------------------------------------------------------------------------

def test_04_parameter_and_flop_accounting():
    cfg = ModelConfig.vit_base()
    rep = param_count(cfg, 100)
    fl = flops_report(cfg, 100, 784)
    share = rep["hypernetwork"] / rep["total"]
    ok = (rep["vanilla_baseline"] == 4_915_968 and 3.0e6 <= rep["total"] <= 5.5e6 and share > 0.70
          and 0.78e9 / 3 <= fl["total"] <= 0.78e9 * 3 and fl["ratio_to_vit_base"] < 0.02)
    verdict(4, "accounting", ok,
            f"vanilla {rep['vanilla_baseline']}, total {rep['total']}, hyper share {share:.3f}, "
            f"{fl['total'] / 1e9:.3f} GFLOPs ({100 * fl['ratio_to_vit_base']:.2f}% of ViT-Base)")


# -- 5 ---------------------------------------------------------------------------------------

def test_05_band_permutation_invariance():
    cfg = ModelConfig(img_size=16, patch=8)
    rng = np.random.default_rng(0)
    meta = MetaEncoder(cfg.d, rng, dtype=np.float64)
    emb = HyperEmbedding(cfg, rng, dtype=np.float64)
    provider = TextEmbeddingProvider.default()
    spec = subset(get_sensor("AVIRIS-3", "L1"), BandSelection(40, 12))
    x = rng.normal(size=(1, 12, 16, 16))
    ref, _ = emb(Tensor(x), meta(spec, provider).values)
    worst = 0.0
    for _ in range(50):
        perm = rng.permutation(12)
        ps = spec.permuted(perm)
        out, _ = emb(Tensor(x[:, perm]), meta(ps, provider).values)
        worst = max(worst, np.max(np.abs(out.data - ref.data)) / np.max(np.abs(ref.data)))
    verdict(5, "band permutation invariance", worst < 1e-6, f"max rel diff {worst:.2e} over 50 permutations")


# -- 6 ---------------------------------------------------------------------------------------

DESK_LR = 1e-3


@pytest.mark.slow
def test_06_three_stage_pretraining(desk_data, tmp_path):
    ds, stats = desk_data
    cfg = TrainConfig(lr_base=DESK_LR, stages=default_stages(epochs=20))
    t0 = time.time()
    results = Trainer(cfg, ds, stats).pretrain(tmp_path)
    elapsed = time.time() - t0
    first, final = results[0].epochs[0].loss_total, results[-1].epochs[-1].loss_total
    finite = all(np.all(np.isfinite(r.step_losses)) for r in results)
    ratio = final / first
    curve = " | ".join(f"{r.stage} {r.epochs[0].loss_total:.3f}->{r.epochs[-1].loss_total:.3f}" for r in results)
    verdict(6, "three-stage pretraining", len(ds) >= 192 and ratio < 0.5 and finite and elapsed < 7200,
            f"{len(ds)} patches, ratio {ratio:.3f} ({curve}), {elapsed / 60:.1f} min")


# -- 7 ---------------------------------------------------------------------------------------

def _mean_spectrum_separability(ds) -> float:
    """Least-squares one-vs-rest classifier on mean spectra resampled to one grid."""
    grid = np.linspace(0.40, 2.45, 64)
    x, y = [], []
    for i, e in enumerate(ds.entries):
        cube = ds.load(i)
        x.append(np.interp(grid, cube.sensor.wavelengths_um, cube.data.reshape(cube.data.shape[0], -1).mean(1)))
        y.append(e.label)
    x = np.column_stack([np.array(x) / np.max(x), np.ones(len(x))])
    y = np.array(y)
    train = np.zeros(len(y), dtype=bool)
    train[np.random.default_rng(0).permutation(len(y))[: len(y) // 2]] = True
    w, *_ = np.linalg.lstsq(x[train], np.eye(y.max() + 1)[y[train]], rcond=None)
    return float(np.mean(np.argmax(x[~train] @ w, axis=1) == y[~train]))


@pytest.mark.slow
def test_07_conditioning_ablation(desk_data, tmp_path):
    ds, stats = desk_data
    sensors = [f"{s.name}/L1" for s in default_sensor_set()]
    acc = {}
    for mode in ("both", "meta", "content"):
        cfg = TrainConfig(lr_base=DESK_LR, model=ModelConfig(conditioning=mode),
                          stages=[Stage("mix", sensors=sensors, epochs=8, warmup_epochs=1)])
        trainer = Trainer(cfg, ds, stats)
        trainer.pretrain(tmp_path / mode)
        acc[mode] = float(np.mean([linear_probe(trainer.model, ds, stats, seed=s).accuracy for s in range(5)]))
    control = float(np.mean([linear_probe(SpecAwareMAE(ModelConfig()), ds, stats, seed=s).accuracy
                             for s in range(5)]))
    oracle = _mean_spectrum_separability(ds)
    ordered = acc["both"] >= acc["meta"] >= acc["content"]
    verdict(7, "conditioning ablation", ordered and acc["both"] >= 0.90 and oracle >= 0.90,
            f"meta+content {acc['both']:.3f}, meta {acc['meta']:.3f}, content {acc['content']:.3f}, "
            f"random backbone {control:.3f}, mean-spectrum oracle {oracle:.3f}")


# -- 8 ---------------------------------------------------------------------------------------

def test_08_loss_identities():
    rng = np.random.default_rng(0)
    sams, drift = [], 0.0
    for _ in range(200):
        x, y = rng.normal(size=(4, 12)), rng.normal(size=(4, 12))
        s = sam_loss(x, y, axis=-1).item()
        sams.append(s)
        for k in (1e-3, 7.5, 1e4):
            drift = max(drift, abs(sam_loss(k * x, y, axis=-1).item() - s))
    sams.append(sam_loss(np.ones((1, 5)), -np.ones((1, 5)), axis=-1).item())
    x = rng.normal(size=(2, 5, 3, 16))
    floor = charbonnier(x, x, 1e-3).item()
    masked = np.zeros((2, 5), dtype=bool)
    masked[:, :3] = True
    cfg = LossConfig()
    totals = [total_loss(x, x + rng.normal(0, s, x.shape), cfg, masked).total.item() for s in (0, 1e-4, 0.1, 1)]
    ok = (min(sams) >= 0 and max(sams) <= 2 and drift < 1e-7 and abs(floor - 1e-3) < 1e-12
          and min(totals) >= cfg.alpha * cfg.epsilon)
    verdict(8, "loss identities", ok,
            f"SAM range [{min(sams):.3f}, {max(sams):.3f}], scale drift {drift:.1e}, "
            f"Charbonnier floor {floor:.3e}, min total {min(totals):.3e}")


# -- 9 ---------------------------------------------------------------------------------------

def test_09_data_protocol():
    starts_ng, starts_classic = len(candidate_starts(425)), len(candidate_starts(224))
    plan = random_masking(784, 0.75, seed=0)
    rng = np.random.default_rng(2025)
    dropped = sum(apply_name_dropout("AVIRIS-3", 0.1, rng) == "unknown" for _ in range(10_000))
    spec = get_sensor("AVIRIS-Classic", "L1")
    data = np.random.default_rng(1).normal(0, 2000, size=(spec.band_count, 8, 8)).astype(np.float16)
    back = decode_patch(encode_patch(HsiCube(spec, data.astype(np.float32), 1.0, 2))).data
    exact = back.astype(np.float16).tobytes() == data.tobytes()
    ok = (starts_ng == 12 and starts_classic == 5 and len(plan.masked_idx) == 588 and len(plan.visible_idx) == 196
          and 900 <= dropped <= 1100 and exact)
    verdict(9, "data protocol", ok,
            f"starts 425->{starts_ng}, 224->{starts_classic}; masked {len(plan.masked_idx)}/784; "
            f"name dropout {dropped}/10000; fp16 round trip {'bit-exact' if exact else 'LOSSY'}")


# -- 10 --------------------------------------------------------------------------------------

def test_10_determinism(desk_data):
    ds, stats = desk_data
    cfg = TrainConfig(lr_base=DESK_LR, workers=1, dtype="float64", stages=default_stages(epochs=1))

    def five_steps():
        return Trainer(cfg, ds, stats).run_stage(cfg.stages[1], index=1, max_steps=5).step_losses
    a, b = five_steps(), five_steps()
    ok = len(a) == 5 and a == b
    verdict(10, "determinism", ok, f"5 f64 steps, losses {'bit-identical' if ok else 'DIFFER'}: {a[0]:.12f} ...")
