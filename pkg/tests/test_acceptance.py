"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The end-to-end criteria run the CLI on ``configs/desk.yaml``.
"""
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from conftest import ACCEPTANCE, make_toy
from recongen import audit
from recongen.cli import main, strip_timing
from recongen.quantizer import ASYMMETRIC, SYMMETRIC, dequantize, grid, quantize_codes, quantize_tensor
from recongen.reconstruction import BNStatsSnapshot, LayerStats, bns_loss, capture_original_stats, reconstruction_loss
from recongen.search_space import (
    ArchParams,
    Supernet,
    build_macro,
    derive,
    edge_probabilities,
    gumbel_mix_weights,
    sample_gumbel,
)

pytestmark = pytest.mark.acceptance

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk.yaml"


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# --- 1. sampler invariants --------------------------------------------------

def test_criterion_1_sampler_invariants():
    start = time.perf_counter()
    n, k = 10_000, 7
    gen = torch.Generator().manual_seed(0)
    worst = 0.0
    for tau in (0.1, 1.0, 5.0):
        alpha = torch.randn(n, k, generator=gen) * 3
        p = edge_probabilities(alpha)
        worst = max(worst, float((p.sum(-1) - 1).abs().max()))
        for log_form in (False, True):
            m = gumbel_mix_weights(p, sample_gumbel((n, k), generator=gen), tau, gumbel_on_log_probs=log_form)
            worst = max(worst, float((m.sum(-1) - 1).abs().max()))
    sums_ok = worst <= 1e-6

    # Vanishing temperature on fixed (p, g) pairs with a unique maximum of p + g.
    p = edge_probabilities(torch.randn(n, k, generator=gen, dtype=torch.float64))
    g = sample_gumbel((n, k), generator=gen, dtype=torch.float64)
    m = gumbel_mix_weights(p, g, 1e-3)
    top2 = (p + g).topk(2, dim=-1).values
    gap = top2[:, 0] - top2[:, 1]
    unique = gap > 1e-2
    argmax_ok = bool((m.argmax(-1) == (p + g).argmax(-1)).all())
    limit_ok = bool((m.max(-1).values[unique] > 0.999).all())
    literal = int((m.max(-1).values > 0.999).sum())
    elapsed = time.perf_counter() - start
    record(1, sums_ok and argmax_ok and limit_ok and elapsed < 60,
           f"max |sum-1| = {worst:.2e} over 3x10^4 draws (tau 0.1/1/5, both forms); tau=1e-3: argmax kept "
           f"{argmax_ok}, max>0.999 on {int((m.max(-1).values[unique] > 0.999).sum())}/{int(unique.sum())} "
           f"unique-max draws ({literal}/{n} of all draws incl. near-ties); {elapsed:.1f}s")


# --- 2. gradient fidelity ----------------------------------------------------

def _rel(a, b):
    return float((a - b).norm() / b.norm().clamp_min(1e-30))


def test_criterion_2_gradient_fidelity():
    start = time.perf_counter()
    model = make_toy(seed=1, size=4)
    original = capture_original_stats(model)
    m = build_macro((1, 4, 4), 2, 3, 3, num_blocks=2, normal_ops=("conv3x3-d1", "identity"))
    torch.manual_seed(0)
    net = Supernet(m).double()
    arch = ArchParams.init(m, tau=0.8, std=0.5, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    z = torch.randn(4, 3, dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 1])

    def loss_alpha():
        x = net(z, y, arch, generator=torch.Generator().manual_seed(7))
        return reconstruction_loss(model, x, y, original).total

    analytic = torch.autograd.grad(loss_alpha(), arch.parameters())
    h = 1e-4
    worst_alpha = 0.0
    with torch.no_grad():
        for eid, a in enumerate(arch.alpha):
            fd = torch.zeros_like(a)
            for j in range(a.numel()):
                a[j] += h
                up = loss_alpha().item()
                a[j] -= 2 * h
                down = loss_alpha().item()
                a[j] += h
                fd[j] = (up - down) / (2 * h)
            worst_alpha = max(worst_alpha, _rel(analytic[eid], fd))

    x = torch.randn(4, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    reconstruction_loss(model, x, y, original).total.backward()
    fd = torch.zeros_like(x)
    with torch.no_grad():
        for idx in np.ndindex(*x.shape):
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[idx] += h
            xm[idx] -= h
            fd[idx] = (reconstruction_loss(model, xp, y, original).total
                       - reconstruction_loss(model, xm, y, original).total) / (2 * h)
    worst_x = _rel(x.grad, fd)
    elapsed = time.perf_counter() - start
    record(2, worst_alpha < 1e-3 and worst_x < 1e-3 and elapsed < 300,
           f"rel err dL_r/dalpha {worst_alpha:.1e} (worst edge), dL_r/dx {worst_x:.1e}; {elapsed:.1f}s")


# --- 3. quantizer oracle -----------------------------------------------------

def _oracle_codes(x, bits, mode, lo, hi):
    scale, zp, qmin, qmax = grid(bits, mode, lo, hi)
    levels = np.arange(qmin, qmax + 1)
    values = (levels - zp) * scale
    if mode == SYMMETRIC:
        a = max(abs(lo), abs(hi))
        xc = np.clip(x, -a, a)
    else:
        xc = np.clip(x, values[0], values[-1])
    d = np.abs(xc[:, None] - values[None, :])
    # nearest level, ties to the larger level
    best = d.shape[1] - 1 - np.argmin(d[:, ::-1], axis=1)
    return levels[best]


def test_criterion_3_quantizer_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches, idem, mono = 0, True, True
    for bits in (2, 3, 4, 8):
        for mode, rg in ((SYMMETRIC, (-1.7, 1.7)), (ASYMMETRIC, (-0.4, 2.3))):
            x = rng.uniform(-4, 4, size=10_000)
            codes = quantize_codes(torch.tensor(x), bits, mode, rg).numpy().astype(np.int64)
            mismatches += int((codes != _oracle_codes(x, bits, mode, *rg)).sum())
            q = quantize_tensor(torch.tensor(x), bits, mode, rg)
            deq = dequantize(torch.tensor(_oracle_codes(x, bits, mode, *rg), dtype=torch.float64), bits, mode, rg)
            mismatches += int((q != deq).sum())
            idem &= bool(torch.equal(quantize_tensor(q, bits, mode, rg), q))
            xs = torch.tensor(np.sort(x))
            qs = quantize_tensor(xs, bits, mode, rg)
            mono &= bool((qs[1:] >= qs[:-1]).all())
    elapsed = time.perf_counter() - start
    record(3, mismatches == 0 and idem and mono and elapsed < 60,
           f"{mismatches} mismatches vs brute-force grid on 8x10^4 values (bits 2/3/4/8, sym+asym); "
           f"idempotent {idem}; monotone {mono}; {elapsed:.1f}s")


# --- 4. supernet / derived consistency ----------------------------------------

def test_criterion_4_supernet_derived_consistency():
    m = build_macro((1, 16, 16), 16, 32, 10)
    torch.manual_seed(0)
    net = Supernet(m)
    arch = ArchParams.init(m, std=1.0, generator=torch.Generator().manual_seed(4))
    derived = derive(arch, m)
    gen = net.extract(derived)
    mix = []
    for e in m.edges:
        w = torch.zeros(e.num_candidates)
        w[derived.choices[e.id]] = 1.0
        mix.append(w)
    rng = torch.Generator().manual_seed(5)
    worst = 0.0
    with torch.no_grad():
        for _ in range(10):
            z = torch.randn(8, 32, generator=rng)
            y = torch.randint(0, 10, (8,), generator=rng)
            worst = max(worst, float((net(z, y, mix=mix) - gen(z, y)).abs().max()))
    record(4, worst <= 1e-5, f"max |supernet - derived| = {worst:.1e} over 10 batches")


# --- 5. reconstruction contracts ----------------------------------------------

def test_criterion_5_reconstruction_contracts(desk_run):
    s = BNStatsSnapshot([LayerStats("a", torch.tensor([0.3, -1.2]), torch.tensor([0.7, 2.0])),
                         LayerStats("b", torch.tensor([5.0]), torch.tensor([0.1]))])
    zero_exact = float(bns_loss(s, s)) == 0.0

    model = make_toy()
    x = torch.randn(5, 1, 2, 2, dtype=torch.float64, requires_grad=True)
    reconstruction_loss(model, x, torch.tensor([0, 1, 2, 0, 1]), capture_original_stats(model)).total.backward()
    frozen = all(p.grad is None for p in model.parameters()) and x.grad is not None

    search_reads = [json.loads(p.read_text())["data_reads"] for p in desk_run["out"].glob("search/*/*/search.json")]
    compress_reads = [json.loads(p.read_text())["data_reads"]
                      for p in desk_run["out"].glob("compress/**/result.jsonl")]
    reads_ok = len(search_reads) == 3 and len(compress_reads) == 6 and not any(search_reads + compress_reads)
    record(5, zero_exact and frozen and reads_ok,
           f"bns_loss(s,s)==0 exactly {zero_exact}; frozen model grads None {frozen}; "
           f"unsanctioned real-data reads: stage 1 {sum(search_reads)} over {len(search_reads)} runs, "
           f"stage 2 {sum(compress_reads)} over {len(compress_reads)} runs")


# --- end-to-end fixtures -------------------------------------------------------

def _cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"recongen {' '.join(map(str, argv))} exited {code}"


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    common = ("--config", DESK, "--output", out)
    start = time.perf_counter()
    audit.reset()
    _cli("pretrain", *common)
    _cli("search", *common)
    _cli("compress", *common, "--generator", "human")
    _cli("compress", *common, "--generator", "searched")
    elapsed = time.perf_counter() - start
    _cli("summarize", *common)
    return {"out": out, "elapsed": elapsed}


def _finals(out, kind, scale="s1"):
    res = {}
    for p in sorted((out / "compress" / "lenet_bn" / "w4a4" / kind / scale).glob("seed*/result.jsonl")):
        rec = json.loads(p.read_text())
        res[rec["seed"]] = rec
    return res


def test_criterion_6_end_to_end_trend(desk_run):
    out = desk_run["out"]
    human, searched = _finals(out, "human"), _finals(out, "searched")
    seeds = sorted(human)
    a0 = [human[s]["ptq_accuracy"] for s in seeds]
    a1 = [human[s]["final_accuracy"] for s in seeds]
    a2 = [searched[s]["final_accuracy"] for s in seeds]
    med = statistics.median
    a_ok = med(a1) > med(a0)
    b_median = med(a2) >= med(a1)
    b_seed = all(x2 >= x1 - 0.005 - 1e-12 for x1, x2 in zip(a1, a2))
    time_ok = desk_run["elapsed"] <= 45 * 60
    diffs = [round(100 * (x2 - x1), 2) for x1, x2 in zip(a1, a2)]
    pct = lambda v: "/".join(f"{100 * x:.1f}" for x in v)  # noqa: E731
    record(6, len(seeds) == 3 and a_ok and b_median and b_seed and time_ok,
           f"A0 {pct(a0)} (med {100 * med(a0):.1f}); A1 {pct(a1)} (med {100 * med(a1):.1f}); "
           f"A2 {pct(a2)} (med {100 * med(a2):.1f}); (a) {a_ok}; (b) median {b_median}, per-seed >= A1-0.5 {b_seed} "
           f"(paired A2-A1 {diffs}, median {med(diffs):+.2f}); pipeline {desk_run['elapsed'] / 60:.1f} min")


def test_criterion_7_search_effectiveness(desk_run):
    recs = [json.loads(p.read_text()) for p in sorted(desk_run["out"].glob("search/lenet_bn/seed*/search.json"))]
    searched = [r["val_loss"] for r in recs]
    control = [r["control_val_loss"] for r in recs]
    med = statistics.median
    ok = len(recs) == 3 and med(searched) <= med(control)
    record(7, ok, f"expected-mode val L_r searched {[round(v, 4) for v in searched]} (med {med(searched):.4f}) "
                  f"vs frozen-alpha control {[round(v, 4) for v in control]} (med {med(control):.4f}); "
                  f"paired diffs {[round(a - b, 4) for a, b in zip(searched, control)]}")


def _small_config(tmp, base_out, name):
    cfg = yaml.safe_load(DESK.read_text())
    cfg["pretrain"] = {"checkpoint": str(base_out / "zoo" / "lenet_bn_seed0.pt")}
    cfg["search"].update(epochs=3, weight_steps=3, arch_steps=2, paired_control=False, checkpoint_every=0)
    cfg["generator_training"]["steps"] = 40
    cfg["compress"].update(epochs=1, steps_per_epoch=20)
    cfg["output"] = str(tmp / name)
    path = tmp / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_criterion_8_scaling_ablation(desk_run, tmp_path):
    out = desk_run["out"]
    _cli("ablate-scale", "--config", DESK, "--output", out)
    table_path = out / "ablate_scale" / "lenet_bn_w4a4" / "table.csv"
    lines = table_path.read_text().splitlines()
    header_ok = lines[0] == "method,scale,top1,seed_median"
    rows = [dict(zip(lines[0].split(","), ln.split(","))) for ln in lines[1:]]
    cells = {(r["method"], float(r["scale"])) for r in rows}
    full = len(rows) == 6 and cells == {(m, s) for m in ("searched", "human") for s in (0.5, 1.0, 2.0)}
    plot_ok = (table_path.parent / "accuracy_vs_scale.png").stat().st_size > 0
    acc = {float(r["scale"]): float(r["seed_median"]) for r in rows if r["method"] == "searched"}
    direction = acc[2.0] >= acc[0.5] - 1.0

    # Determinism of the machinery: two fresh small-budget ablations, byte-identical tables.
    tables = []
    for name in ("ablate_a", "ablate_b"):
        cfg = _small_config(tmp_path, out, name)
        _cli("search", "--config", cfg)
        _cli("ablate-scale", "--config", cfg)
        tables.append((tmp_path / name / "ablate_scale" / "lenet_bn_w4a4" / "table.csv").read_bytes())
    deterministic = tables[0] == tables[1] and len(tables[0].splitlines()) == 7
    record(8, header_ok and full and plot_ok and direction and deterministic,
           f"6-row table {full} (columns ok {header_ok}, plot {plot_ok}); searched median top-1 "
           f"s=0.5 {acc.get(0.5)}, s=1 {acc.get(1.0)}, s=2 {acc.get(2.0)} (need s2 >= s0.5 - 1.0: {direction}); "
           f"rerun table byte-identical {deterministic}")


def test_criterion_9_determinism(desk_run, tmp_path):
    out = desk_run["out"]
    runs = []
    for name in ("det_a", "det_b"):
        cfg = _small_config(tmp_path, out, name)
        _cli("search", "--config", cfg, "--seed", 1)
        _cli("compress", "--config", cfg, "--seed", 1, "--generator", "searched")
        root = tmp_path / name
        runs.append({
            "arch": (root / "search/lenet_bn/seed1/arch.json").read_bytes(),
            "search": strip_timing(json.loads((root / "search/lenet_bn/seed1/search.json").read_text())),
            "telemetry": (root / "search/lenet_bn/seed1/telemetry.jsonl").read_bytes(),
            "result": _dumps_no_timing(root / "compress/lenet_bn/w4a4/searched/s1/seed1/result.jsonl"),
        })
    same = {k: runs[0][k] == runs[1][k] for k in runs[0]}
    record(9, all(same.values()), "identical across two fresh runs (seed 1): "
           + ", ".join(f"{k} {v}" for k, v in same.items()))


def _dumps_no_timing(path):
    rec = json.loads(path.read_text())
    return json.dumps(strip_timing(rec), sort_keys=True).encode()


# --- measured module-level expectations that are not gated criteria ----------

@pytest.mark.xfail(reason="float - A0 is under 2 points for the desk model, so a 2-point gain over A0 "
                          "would need A2 at or above float accuracy", strict=False)
def test_searched_generator_gains_two_points_over_ptq(desk_run):
    searched = _finals(desk_run["out"], "searched")
    gains = [r["final_accuracy"] - r["ptq_accuracy"] for r in searched.values()]
    print("A2 - A0 per seed:", [round(100 * g, 2) for g in gains])
    assert statistics.median(gains) >= 0.02


def test_generator_training_lowers_class_loss(desk_run):
    from recongen.cli import build_generator, load_config, load_zoo
    from recongen.compression import GeneratorTrainConfig, train_generator
    from recongen.reconstruction import sample_latent

    cfg = load_config(DESK, {"output": str(desk_run["out"])})
    model, meta = load_zoo(cfg)

    def l_class(gen):
        rng = torch.Generator().manual_seed(99)
        z, y = sample_latent(128, cfg.macro.latent_dim, 10, rng)
        with torch.no_grad():
            return torch.nn.functional.cross_entropy(model(gen(z, y)), y).item()

    before, after = [], []
    for seed in cfg.seeds:
        gen, _ = build_generator(cfg, "searched", 1.0, seed, meta)
        before.append(l_class(gen))
        train_generator(model, gen, GeneratorTrainConfig(steps=100, seed=seed), latent_dim=cfg.macro.latent_dim,
                        num_classes=10)
        after.append(l_class(gen))
    assert statistics.median(after) < statistics.median(before)
