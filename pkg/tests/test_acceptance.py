"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from semshape import _chunks
from semshape.cli import main
from semshape.gaussian import (DiagGaussian, MeasurementObservation, fuse,
                               fused_shape_estimate, naive_average, propagate_to_coeffs,
                               propagate_to_vertices)
from semshape.measurements import (MeasurementDef, MeasurementSpec, VertexId, axis_difference_spec,
                                   load_spec, measure, measurement_jacobian, synthetic_spec)
from semshape.regressor import (FitConfig, MeasurementRegressor, eval_local_offsets,
                                eval_reconstruction, fit_regressor, sample_shapes)
from semshape.shape_model import LinearShapeModel, generate_synthetic_model, load_model

pytestmark = pytest.mark.acceptance


def record(n, title, ok, detail, elapsed=None, limit=None):
    """Print and store the criterion line, then fail the test if needed."""
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.2f} s < {limit} s]" if limit else f" [{elapsed:.2f} s]"
        ok = ok and (limit is None or elapsed < limit)
    line = f"{'PASS' if ok else 'FAIL'}  #{n} {title}: {detail}{timing}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def truncated(model, nb):
    return LinearShapeModel(model.template, model.basis[:, :nb], model.joint_regressor, model.faces)


# ---------------------------------------------------------------------------

def test_1_fusion_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)

    # density grid: one and two observations, 1001 points
    density_err = 0.0
    for case in range(200):
        m = rng.normal(0, 1, 2)
        v = 10 ** rng.uniform(-3, 1, 2)
        a, b = DiagGaussian([m[0]], [v[0]]), DiagGaussian([m[1]], [v[1]])
        if case % 2 == 0:
            f = fuse([a])
            x = np.linspace(m[0] - 6 * np.sqrt(v[0]), m[0] + 6 * np.sqrt(v[0]), 1001)
            target = np.exp(-0.5 * (x - m[0]) ** 2 / v[0]) / np.sqrt(2 * np.pi * v[0])
        else:
            f = fuse([a, b])
            sd = np.sqrt(f.variances[0])
            x = np.linspace(f.mean[0] - 6 * sd, f.mean[0] + 6 * sd, 1001)
            prod = (np.exp(-0.5 * (x - m[0]) ** 2 / v[0]) / np.sqrt(2 * np.pi * v[0])
                    * np.exp(-0.5 * (x - m[1]) ** 2 / v[1]) / np.sqrt(2 * np.pi * v[1]))
            # normaliser of a product of two normal densities
            z = np.exp(-0.5 * (m[0] - m[1]) ** 2 / v.sum()) / np.sqrt(2 * np.pi * v.sum())
            target = prod / z
        density_err = max(density_err, np.max(np.abs(f.pdf(x) - target)))

    # algebraic properties on randomized multi-slot cases
    bad = {"additivity": 0, "order": 0, "associativity": 0, "contraction": 0}
    cases = 1000
    for _ in range(cases):
        k = int(rng.integers(1, 8))
        n = int(rng.integers(2, 6))
        obs = [DiagGaussian(rng.normal(0, 0.05, k), 10 ** rng.uniform(-8, -2, k)) for _ in range(n)]
        f = fuse(obs)
        prec = sum(1 / o.variances for o in obs)
        bad["additivity"] += not np.allclose(1 / f.variances, prec, rtol=1e-12, atol=0)
        g = fuse([obs[i] for i in rng.permutation(n)])
        bad["order"] += not (np.array_equal(f.mean, g.mean) and np.array_equal(f.variances, g.variances))
        h = fuse([fuse(obs[:2])] + obs[2:])
        bad["associativity"] += not (np.allclose(h.mean, f.mean, rtol=1e-12, atol=1e-15)
                                     and np.allclose(h.variances, f.variances, rtol=1e-12, atol=0))
        bad["contraction"] += not np.all(f.variances <= np.min([o.variances for o in obs], axis=0))

    ok = density_err < 1e-9 and not any(bad.values())
    record(1, "fusion oracle",
           ok, f"density max abs err {density_err:.2e} (< 1e-9) on 200 grids; "
               f"{cases} cases, violations {bad}", time.perf_counter() - t0, 5)


def _mc_normal(seed, n, dim):
    parts = [_chunks.chunk_rng(seed, _chunks.STREAM_MONTE_CARLO, i).standard_normal((hi - lo, dim))
             for i, (lo, hi) in enumerate(_chunks.chunk_bounds(n))]
    return np.vstack(parts)


def _cov_rel_error(emp, exact):
    """Worst relative error over entries above 1e-6 of the trace.

    Diagonal entries are relative to themselves; off-diagonal entries to
    sqrt(var_i var_j), the scale of their Monte-Carlo standard error.
    """
    d = np.sqrt(np.clip(np.diag(exact), 0, None))
    mask = np.abs(exact) > 1e-6 * np.trace(exact)
    err = np.abs(emp - exact) / np.where(mask, np.outer(d, d), 1.0)
    return float(np.max(err[mask]))


def _sym_psd(c):
    scale = np.max(np.abs(c))
    if scale == 0:
        return True
    ev = np.linalg.eigvalsh(c)
    return np.max(np.abs(c - c.T)) <= 1e-9 * scale and ev[0] >= -1e-9 * ev[-1]


def test_2_propagation_oracle():
    t0 = time.perf_counter()
    n = 100_000
    errs_beta, errs_vert = [], []
    for seed, (nv, nb, k) in enumerate([(100, 20, 8), (60, 12, 12), (40, 6, 4)]):
        model = generate_synthetic_model(seed, nv, nb, "random-smooth")
        spec = axis_difference_spec(model, k, seed)
        reg = fit_regressor(model, spec, FitConfig(num_samples=10_000, seed=seed))
        rng = np.random.default_rng(10 + seed)
        d = DiagGaussian(rng.normal(0, 0.01, k), rng.uniform(1e-5, 4e-4, k))
        g = propagate_to_coeffs(reg, d)
        vg = propagate_to_vertices(model, g)
        # sample in measurement space and push every sample through W and the basis
        dm = d.mean + np.sqrt(d.variances) * _mc_normal(seed, n, k)
        betas = dm @ reg.weights
        errs_beta.append(_cov_rel_error(np.cov(betas, rowvar=False), g.covariance))
        verts = betas @ model.basis.T + model.template
        exact = vg.diagonal()
        mask = exact > 1e-6 * exact.sum()
        errs_vert.append(float(np.max(np.abs(verts.var(axis=0, ddof=1)[mask] - exact[mask]) / exact[mask])))

    psd_fail = 0
    rng = np.random.default_rng(99)
    for _ in range(100):
        k, nb = int(rng.integers(1, 10)), int(rng.integers(1, 21))
        reg = MeasurementRegressor(rng.normal(0, 10, (k, nb)), np.zeros(k))
        g = propagate_to_coeffs(reg, DiagGaussian(rng.normal(size=k), rng.uniform(0, 1, k) ** 3))
        model = LinearShapeModel(rng.normal(size=3 * 30), rng.normal(0, 0.05, (90, nb)))
        vg = propagate_to_vertices(model, g)
        psd_fail += not (_sym_psd(g.covariance) and _sym_psd(vg.covariance))

    ok = max(errs_beta) < 0.05 and max(errs_vert) < 0.05 and psd_fail == 0
    record(2, "propagation oracle", ok,
           f"MC 1e5: coeff cov max rel err {max(errs_beta):.3f}, vertex var max rel err "
           f"{max(errs_vert):.3f} (< 0.05); PSD failures {psd_fail}/100",
           time.perf_counter() - t0, 30)


def test_3_exact_linear_regressor():
    t0 = time.perf_counter()
    worst, maes = 0.0, []
    for seed, (nb, k) in enumerate([(12, 8), (6, 6)]):
        model = generate_synthetic_model(20 + seed, 80, nb, "random-smooth")
        spec = axis_difference_spec(model, k, seed)
        reg = fit_regressor(model, spec, FitConfig(num_samples=10_000, seed=seed))
        rng = np.random.default_rng(seed)
        for _ in range(100):
            dm = rng.normal(0, 0.03, k)
            got = measure(model, spec, reg.weights.T @ dm) - reg.base_measurements
            worst = max(worst, float(np.max(np.abs(got - dm))))
        maes.append(eval_reconstruction(model, spec, reg, 10_000, seed=seed).meas_mae_mm)
    ok = worst < 1e-8 and max(maes) < 1e-6
    record(3, "exact-linear regressor", ok,
           f"round-trip max err {worst:.2e} m (< 1e-8) over 200 offsets; "
           f"recon MAE {max(maes):.2e} mm (< 1e-6)", time.perf_counter() - t0, 10)


def _fd(model, spec, beta, h=1e-6):
    eye = np.eye(model.num_coeffs) * h
    return np.array([(measure(model, spec, beta + e) - measure(model, spec, beta - e)) / (2 * h)
                     for e in eye]).T


def test_4_jacobian_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, count = 0.0, 0
    for k in range(60):
        nv, nb = int(rng.choice([40, 90, 200])), int(rng.integers(2, 9))
        if k % 2 == 0:
            model = generate_synthetic_model(k, nv, nb, "body-like")
            spec = synthetic_spec(nv)
        else:
            model = generate_synthetic_model(k, nv, nb, "random-smooth")
            defs = []
            for j in range(4):
                ids = [VertexId(int(i)) for i in rng.choice(nv, 4, replace=False)]
                defs += [MeasurementDef(f"d{j}", "distance", ids[:2]),
                         MeasurementDef(f"c{j}", "circumference", ids),
                         MeasurementDef(f"a{j}", "axis_difference", ids[2:], axis="xyz"[j % 3])]
            spec = MeasurementSpec(defs)
        beta = rng.normal(0, 1.25, nb)
        worst = max(worst, float(np.max(np.abs(measurement_jacobian(model, spec, beta)
                                                - _fd(model, spec, beta)))))
        count += 1
    record(4, "jacobian check", worst < 1e-6 and count >= 50,
           f"{count} triples, max abs err vs central differences {worst:.2e} (< 1e-6)",
           time.perf_counter() - t0, 10)


@pytest.mark.filterwarnings("ignore::semshape.errors.RankDeficiencyWarning")  # |beta| = K/2
def test_5_locality_reconstruction_trend():
    t0 = time.perf_counter()
    nv, seeds = 400, range(5)
    spec = synthetic_spec(nv)
    k = spec.num_outputs
    sweep = (k // 2, k, 3 * k)
    probes = [(name, 0.05) for name in spec.output_names]
    leak = np.zeros((len(seeds), len(sweep)))
    mae = np.zeros_like(leak)
    for i, seed in enumerate(seeds):
        full = generate_synthetic_model(seed, nv, 3 * k, "body-like")
        for j, nb in enumerate(sweep):
            model = truncated(full, nb)
            reg = fit_regressor(model, spec, FitConfig(num_samples=20_000, seed=seed))
            leak[i, j] = eval_local_offsets(model, spec, reg, probes).mean_off_target_mm()
            mae[i, j] = eval_reconstruction(model, spec, reg, 2000, seed=seed).meas_mae_mm
    leak_m, mae_m = leak.mean(axis=0), mae.mean(axis=0)
    ok = bool(np.all(np.diff(leak_m) <= 0) and np.all(np.diff(mae_m) >= 0))
    fmt = lambda a: " -> ".join(f"{x:.3g}" for x in a)  # noqa: E731
    record(5, "locality/reconstruction trend", ok,
           f"|beta| {sweep}, {len(seeds)} seeds: mean leakage {fmt(leak_m)} mm (non-increasing), "
           f"meas MAE {fmt(mae_m)} mm (non-decreasing)", time.perf_counter() - t0, 120)


def test_6_fusion_beats_naive():
    t0 = time.perf_counter()
    setups = []
    for seed in range(4):
        model = generate_synthetic_model(40 + seed, 80, 10, "random-smooth")
        spec = axis_difference_spec(model, 8, seed)
        setups.append((model, spec, fit_regressor(model, spec, FitConfig(num_samples=10_000, seed=seed))))
    rng = np.random.default_rng(6)
    checked = failures = 0
    for c in range(100):
        model, spec, reg = setups[c % len(setups)]
        k = spec.num_outputs
        truth = rng.normal(0, 0.02, k)
        base_var = 10 ** rng.uniform(-7, -5, k)
        ratio = np.where(rng.random(k) < 0.75, 10 ** rng.uniform(2, 4, k), 10 ** rng.uniform(0, 1.5, k))
        a_certain = rng.random(k) < 0.5
        var_a = np.where(a_certain, base_var, base_var * ratio)
        var_b = np.where(a_certain, base_var * ratio, base_var)
        # each observation sits one of its own standard deviations from the truth
        obs = [MeasurementObservation(name, DiagGaussian(truth + rng.choice([-1, 1], k) * np.sqrt(v), v))
               for name, v in (("a", var_a), ("b", var_b))]
        est = fused_shape_estimate(model, spec, reg, obs)
        fused_err = np.abs(est.measurement_estimate - reg.base_measurements - truth)
        naive_err = np.abs(naive_average(obs).mean - truth)
        slots = np.maximum(var_a, var_b) / np.minimum(var_a, var_b) >= 100
        checked += int(slots.sum())
        failures += int(np.sum(fused_err[slots] >= naive_err[slots]))
    record(6, "fusion beats naive", failures == 0 and checked > 0,
           f"100 constructions, {checked} slots with >= 100x certainty gap, {failures} where fused "
           f"error >= naive error", time.perf_counter() - t0, 10)


# Reference rows for a 23-measurement SMPL spec: (num betas, meas MAE mm, PVE-T mm,
# on-target achieved offsets for +50 mm probes).
SMPL_REFERENCE = [
    (10, 0.9, 1.9, {"chest_width": 27.3, "stomach_depth": 29.9, "calf_length": 27.8}),
    (70, 3.9, 15.4, {"chest_width": 51.1, "stomach_depth": 49.8, "calf_length": 50.1}),
]


def test_7_smpl_reference_replication():
    model_path, spec_path = os.environ.get("SEMSHAPE_SMPL_MODEL"), os.environ.get("SEMSHAPE_SMPL_SPEC")
    if not (model_path and spec_path):
        line = ("SKIP  #7 SMPL reference replication: needs user-supplied assets. Recipe: convert the "
                "model to semshape JSON+bin, fill `smpl_spec_template()` anchors, then run "
                "SEMSHAPE_SMPL_MODEL=model.json SEMSHAPE_SMPL_SPEC=spec.json "
                "pytest tests/test_acceptance.py -k smpl -s")
        ACCEPTANCE_LINES[7] = line
        print(line)
        pytest.skip("SMPL-format model and spec not supplied")
    t0 = time.perf_counter()
    full, spec = load_model(model_path), load_spec(spec_path)
    samples = int(os.environ.get("SEMSHAPE_SMPL_SAMPLES", "1000000"))
    details, ok = [], True
    for nb, ref_mae, ref_pve, ref_probes in SMPL_REFERENCE:
        if full.num_coeffs < nb:
            details.append(f"{nb} betas: model has only {full.num_coeffs}")
            ok = False
            continue
        model = truncated(full, nb)
        reg = fit_regressor(model, spec, FitConfig(num_samples=samples, seed=0))
        rec = eval_reconstruction(model, spec, reg, 100_000, seed=0)
        local = eval_local_offsets(model, spec, reg, [(n, 0.05) for n in ref_probes])
        got = {"mae": (rec.meas_mae_mm, ref_mae), "pve_t": (rec.pve_t_mm, ref_pve)}
        got.update({n: (v, ref_probes[n]) for n, v in zip(ref_probes, local.on_target_mm)})
        for key, (value, ref) in got.items():
            within = abs(value - ref) <= 0.15 * abs(ref)
            ok &= within
            details.append(f"{nb} betas {key} {value:.1f} vs {ref}{'' if within else ' (!)'}")
    record(7, "SMPL reference replication (+-15%)", ok, "; ".join(details), time.perf_counter() - t0)


def _masked(path: Path) -> bytes:
    data = path.read_bytes()
    if path.suffix == ".json":
        obj = json.loads(data)
        obj.pop("run_info", None)
        return json.dumps(obj, sort_keys=True).encode()
    return data


def _cli_snapshot(out: Path, threads: int) -> dict:
    common = ["--model", out / "model.json", "--spec", out / "spec.json",
              "--regressor", out / "regressor.json", "--out", out, "--threads", threads, "--no-figures"]
    out.mkdir(parents=True, exist_ok=True)
    obs = out / "obs.json"
    obs.write_text(json.dumps({"observations": [
        {"id": "front", "mean_mm": [5.0] * 18, "variance_mm2": [1.0, 400.0] * 9},
        {"id": "side", "mean_mm": [-5.0] * 18, "variance_mm2": [400.0, 1.0] * 9}]}))
    cmds = [["gen-model", "--seed", 3, "--vertices", 300, "--coeffs", 30, "--out", out],
            [*common[:4], *common[6:], "fit", "--samples", 30_000],
            [*common, "eval", "recon", "--bodies", 20_000],
            [*common, "eval", "local"],
            [*common, "offset", "--measure", "chest_width=+50"],
            [*common, "fuse", obs]]
    for cmd in cmds:
        code = main([str(a) for a in cmd])
        assert code == 0, cmd
    return {p.name: _masked(p) for p in sorted(out.iterdir()) if p.is_file()}


def test_8_determinism(tmp_path):
    t0 = time.perf_counter()
    problems = []

    model = generate_synthetic_model(2, 300, 30, "body-like")
    spec = synthetic_spec(300)
    cfg = FitConfig(num_samples=40_000, seed=4)
    regs = [fit_regressor(model, spec, cfg, threads=t) for t in (1, 1, 3)]
    if not all(np.array_equal(r.weights, regs[0].weights) for r in regs):
        problems.append("fit_regressor")
    recs = [eval_reconstruction(model, spec, regs[0], 20_000, seed=1, threads=t) for t in (1, 1, 4)]
    if len({(r.meas_mae_mm, r.pve_t_mm) for r in recs}) != 1:
        problems.append("eval_reconstruction")
    shapes = [sample_shapes(model, spec, regs[0], 20_000, cfg, seed=2, threads=t) for t in (1, 1, 2)]
    if not all(np.array_equal(s, shapes[0]) for s in shapes):
        problems.append("sample_shapes")

    runs = [_cli_snapshot(tmp_path / f"run{i}", t) for i, t in enumerate((1, 1, 2))]
    for name in runs[0]:
        if any(r.get(name) != runs[0][name] for r in runs[1:]):
            problems.append(f"cli:{name}")
    record(8, "determinism", not problems,
           f"library fit/recon/sampling and {len(runs[0])} CLI outputs identical across 2 runs "
           f"and thread counts (run_info masked)" if not problems else f"differs: {problems}",
           time.perf_counter() - t0)
