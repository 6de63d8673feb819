"""``semshape`` command line.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
error (rank, singularity, capacity). Reports are in mm unless
``--units m``; wall-clock facts (timestamp, wall time) live only under the
``run_info`` key of JSON reports so reruns can be compared byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import plotting
from .errors import FormatError, InvalidArgumentError, NumericalError, RankDeficiencyWarning
from .gaussian import (directional_vertex_variance, fused_shape_estimate, fusion_report,
                       load_observations, propagate_to_coeffs, propagate_to_vertices)
from .gaussian import DEFAULT_MAX_FULL_VERTICES
from .gaussian import fuse as fuse_observations
from .measurements import axis_difference_spec, load_spec, measure, save_spec, synthetic_spec
from .regressor import (FitConfig, eval_local_offsets, eval_reconstruction, fit_regressor,
                        load_regressor, save_regressor)
from .shape_model import (PROFILES, export_obj, generate_synthetic_model, load_model,
                          save_model, shape_to_vertices)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_GLOBALS = ("model", "spec", "regressor", "seed", "threads", "out", "units", "figures")


def _common_options(fn):
    """Options accepted both before and after the subcommand name."""
    opts = [
        click.option("--model", "model", type=click.Path(dir_okay=False), default=None,
                     help="Model header JSON."),
        click.option("--spec", "spec", type=click.Path(dir_okay=False), default=None,
                     help="Measurement spec JSON."),
        click.option("--regressor", "regressor", type=click.Path(dir_okay=False), default=None,
                     help="Regressor header JSON."),
        click.option("--seed", type=int, default=None, help="Random seed (default 0)."),
        click.option("--threads", type=str, default=None,
                     help="Worker threads, an integer or 'auto' (default 1). Never changes results."),
        click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (default '.')."),
        click.option("--units", type=click.Choice(["mm", "m"]), default=None,
                     help="Report units (default mm)."),
        click.option("--figures/--no-figures", "figures", default=None,
                     help="Write PNG figures next to reports (default on)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


class RunConfig:
    def __init__(self):
        self.model = self.spec = self.regressor = None
        self.seed = 0
        self.threads = 1
        self.out = Path(".")
        self.units = "mm"
        self.figures = True

    def update(self, **kw):
        for key in _GLOBALS:
            value = kw.get(key)
            if value is None:
                continue
            if key == "threads":
                value = _parse_threads(value)
            elif key == "out":
                value = Path(value)
            setattr(self, key, value)

    def out_dir(self) -> Path:
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise FormatError(f"cannot create output directory {self.out}: {exc}") from exc
        return self.out

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise click.UsageError("missing required option(s): "
                                   + ", ".join(f"--{n}" for n in missing))


def _parse_threads(value) -> int | str:
    if value == "auto":
        return "auto"
    try:
        n = int(value)
    except ValueError:
        raise click.BadParameter(f"expected an integer or 'auto', got {value!r}",
                                 param_hint="--threads") from None
    if n < 1:
        raise click.BadParameter("must be >= 1", param_hint="--threads")
    return n


def _config(ctx, kw) -> RunConfig:
    cfg = ctx.find_object(RunConfig)
    cfg.update(**kw)
    return cfg


# ---------------------------------------------------------------------------
# loading and writing helpers

def _load_model(cfg):
    cfg.require("model")
    return load_model(cfg.model)


def _load_all(cfg, regressor=True):
    cfg.require("model", "spec", *(("regressor",) if regressor else ()))
    model = load_model(cfg.model)
    spec = load_spec(cfg.spec)
    reg = load_regressor(cfg.regressor) if regressor else None
    if reg is not None:
        reg.check_compatible(model, spec)
    return model, spec, reg


def _load_beta(path, num_coeffs):
    if path is None:
        return np.zeros(num_coeffs)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if isinstance(data, dict):
        data = data.get("beta")
    try:
        beta = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: 'beta' must be a list of numbers") from exc
    if beta.shape != (num_coeffs,) or not np.all(np.isfinite(beta)):
        raise FormatError(f"{path}: expected {num_coeffs} finite coefficients, got shape {beta.shape}")
    return beta


def _parse_offsets(values, spec, option):
    """``name=+50`` strings into ``(name, metres)`` pairs."""
    out = []
    for item in values:
        name, sep, amount = item.partition("=")
        try:
            mm = float(amount)
        except ValueError:
            mm = None
        if not sep or mm is None or not np.isfinite(mm):
            raise click.BadParameter(f"expected NAME=+MM, got {item!r}", param_hint=option)
        if name not in spec.output_names:
            raise click.BadParameter(
                f"unknown measurement {name!r}; valid names: {', '.join(spec.output_names)}",
                param_hint=option)
        out.append((name, mm / 1000.0))
    return out


_UNIT_SUFFIXES = (("_per_mm2", "_per_m2", 1e6), ("_mm2", "_m2", 1e-6), ("_mm", "_m", 1e-3))


def _convert_units(obj, units):
    """Rename ``*_mm`` keys to ``*_m`` (and rescale) when reporting in metres."""
    if units == "mm":
        return obj
    if isinstance(obj, list):
        return [_convert_units(v, units) for v in obj]
    if not isinstance(obj, dict):
        return obj
    out = {}
    for key, value in obj.items():
        for old, new, factor in _UNIT_SUFFIXES:
            if key.endswith(old):
                key = key[: -len(old)] + new
                value = _scale(value, factor)
                break
        out[key] = _convert_units(value, units)
    return out


def _scale(value, factor):
    if isinstance(value, list):
        return [_scale(v, factor) for v in value]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value * factor
    return value


def _write_json(path, data, started=None) -> Path:
    data = dict(data)
    info = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "tool_version": __version__}
    if started is not None:
        info["wall_time_s"] = round(time.perf_counter() - started, 3)
    data["run_info"] = info
    try:
        path.write_text(json.dumps(data, indent=2) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc
    return path


def _write_csv(path, rows, fields) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    path.write_text(buf.getvalue())
    return path


def _figure(cfg, fn, *args):
    if cfg.figures:
        fn(*args)


# ---------------------------------------------------------------------------
# commands

@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="semshape")
@_common_options
@click.pass_context
def cli(ctx, **kw):
    """Semantic measurement control and uncertainty for linear body-shape models."""
    ctx.obj = RunConfig()
    ctx.obj.update(**kw)


@cli.command("gen-model")
@click.option("--vertices", type=click.IntRange(min=1), default=600, show_default=True)
@click.option("--coeffs", type=int, default=30, show_default=True)
@click.option("--profile", type=click.Choice(PROFILES), default="body-like", show_default=True)
@_common_options
@click.pass_context
def gen_model(ctx, vertices, coeffs, profile, **kw):
    """Generate a synthetic model and a measurement spec for it."""
    cfg = _config(ctx, kw)
    if coeffs < 1:
        raise click.BadParameter(f"must be >= 1, got {coeffs}", param_hint="--coeffs")
    model = generate_synthetic_model(cfg.seed, vertices, coeffs, profile)
    spec = synthetic_spec(vertices) if profile == "body-like" else None
    out = cfg.out_dir()
    save_model(model, out / "model.json")
    files = ["model.json", "model.bin"]
    if spec is None:
        spec = axis_difference_spec(model, min(coeffs, 10), cfg.seed)
    save_spec(spec, out / "spec.json")
    files.append("spec.json")
    _write_json(out / "provenance.json", {
        "seed": cfg.seed, "num_vertices": vertices, "num_coeffs": coeffs, "profile": profile,
        "num_measurements": spec.num_outputs, "files": files,
    })
    click.echo(f"wrote {', '.join(files)} and provenance.json to {out}")


@cli.command()
@click.option("--samples", type=click.IntRange(min=1), default=1_000_000, show_default=True)
@click.option("--coeff-stddev", type=float, default=1.25, show_default=True)
@click.option("--rank-tol", type=float, default=1e-10, show_default=True)
@_common_options
@click.pass_context
def fit(ctx, samples, coeff_stddev, rank_tol, **kw):
    """Fit the measurement-to-coefficient regressor."""
    cfg = _config(ctx, kw)
    model, spec, _ = _load_all(cfg, regressor=False)
    config = FitConfig(num_samples=samples, coeff_stddev=coeff_stddev,
                       rank_tolerance=rank_tol, seed=cfg.seed)
    started = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        reg = fit_regressor(model, spec, config, threads=cfg.threads)
    out = cfg.out_dir()
    save_regressor(reg, out / "regressor.json")
    report = {"num_samples": samples, "num_measurements": spec.num_outputs,
              "num_coeffs": model.num_coeffs, **{k: reg.meta[k] for k in
              ("rank", "residual_norm", "condition_number", "coeff_stddev",
               "rank_tolerance", "seed", "warnings")}}
    _write_json(out / "fit_report.json", report, started)
    for msg in reg.meta["warnings"]:
        click.echo(f"warning: {msg}", err=True)
    click.echo(f"rank {reg.meta['rank']}/{spec.num_outputs}, residual "
               f"{reg.meta['residual_norm']:.6g}; wrote regressor.json, fit_report.json")


@cli.command("measure")
@click.option("--beta", "beta_path", type=click.Path(dir_okay=False), default=None,
              help="JSON file with {\"beta\": [...]} (default: mean body).")
@_common_options
@click.pass_context
def measure_cmd(ctx, beta_path, **kw):
    """Evaluate every measurement on one body."""
    cfg = _config(ctx, kw)
    model, spec, _ = _load_all(cfg, regressor=False)
    beta = _load_beta(beta_path, model.num_coeffs)
    values = measure(model, spec, beta)
    rows = _convert_units([{"name": n, "value_mm": float(v * 1000.0)}
                           for n, v in zip(spec.output_names, values)], cfg.units)
    out = cfg.out_dir()
    _write_csv(out / "measurements.csv", rows, list(rows[0]))
    for row in rows:
        click.echo(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row.values()))


@cli.command()
@click.option("--measure", "offsets", multiple=True, metavar="NAME=+MM",
              help="Offset to apply on its own from the base body; repeatable.")
@click.option("--base-beta", type=click.Path(dir_okay=False), default=None)
@_common_options
@click.pass_context
def offset(ctx, offsets, base_beta, **kw):
    """Apply measurement offsets and export the resulting meshes."""
    cfg = _config(ctx, kw)
    model, spec, reg = _load_all(cfg)
    probes = _parse_offsets(offsets, spec, "--measure")
    base = _load_beta(base_beta, model.num_coeffs)
    out = cfg.out_dir()
    export_obj(shape_to_vertices(model, base), out / "base.obj")
    written = ["base.obj"]
    if not probes:
        click.echo("no offsets given; wrote base.obj")
        return
    report = eval_local_offsets(model, spec, reg, probes, base)
    for k, (name, metres) in enumerate(probes):
        dm = np.zeros(spec.num_outputs)
        dm[spec.index(name)] = metres
        beta = base + reg.weights.T @ dm
        fname = f"offset_{k:02d}_{name}_{metres * 1000.0:+g}mm.obj"
        export_obj(shape_to_vertices(model, beta), out / fname)
        written.append(fname)
    rows = _convert_units(report.to_rows(), cfg.units)
    _write_csv(out / "offsets.csv", rows, list(rows[0]))
    _figure(cfg, plotting.plot_local_offsets, report, out / "offsets.png")
    if len(probes) == 1:
        requested = np.zeros(spec.num_outputs)
        requested[spec.index(probes[0][0])] = probes[0][1] * 1000.0
        _figure(cfg, plotting.plot_requested_vs_achieved, spec.output_names, requested,
                report.achieved_mm[0], out / "offset_requested_vs_achieved.png")
    for (name, _), on in zip(report.probes, report.on_target_mm):
        click.echo(f"{name}: achieved {on:+.3f} mm")
    click.echo(f"wrote {', '.join(written)} and offsets.csv")


@cli.command()
@click.argument("obsfile", type=click.Path(dir_okay=False))
@_common_options
@click.pass_context
def fuse(ctx, obsfile, **kw):
    """Fuse per-image measurement distributions into one body estimate."""
    cfg = _config(ctx, kw)
    model, spec, reg = _load_all(cfg)
    obs = load_observations(obsfile, spec.num_outputs)
    est = fused_shape_estimate(model, spec, reg, obs)
    report = fusion_report(obs, spec.output_names)
    report["beta_hat"] = est.beta_hat.tolist()
    report["measurement_estimate_mm"] = (est.measurement_estimate * 1000.0).tolist()
    vg = propagate_to_vertices(model, propagate_to_coeffs(reg, est.fused), lazy=True)
    var = directional_vertex_variance(vg)
    out = cfg.out_dir()
    export_obj(est.mesh, out / "fused.obj")
    scale, suffix = (1e6, "mm2") if cfg.units == "mm" else (1.0, "m2")
    rows = [{"vertex_index": i, f"var_x_{suffix}": float(v[0] * scale),
             f"var_y_{suffix}": float(v[1] * scale), f"var_z_{suffix}": float(v[2] * scale)}
            for i, v in enumerate(var)]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows)
    (out / "vertex_variance.csv").write_text(buf.getvalue())
    _write_json(out / "fusion_report.json", _convert_units(report, cfg.units))
    _figure(cfg, plotting.plot_fusion, report, out / "fusion.png")
    _figure(cfg, plotting.plot_vertex_variance, est.mesh.vertices, var, out / "vertex_variance.png")
    click.echo(f"fused {len(obs)} observation(s); wrote fusion_report.json, fused.obj, "
               "vertex_variance.csv")


@cli.group("eval")
@_common_options
@click.pass_context
def eval_group(ctx, **kw):
    """Local-controllability and reconstruction evaluations."""
    _config(ctx, kw)


@eval_group.command("local")
@click.option("--probe", "probes", multiple=True, metavar="NAME=+MM",
              help="Probe offset; repeatable (default: every measurement at +50 mm).")
@_common_options
@click.pass_context
def eval_local(ctx, probes, **kw):
    """Offset one measurement at a time and record all achieved offsets."""
    cfg = _config(ctx, kw)
    model, spec, reg = _load_all(cfg)
    pairs = (_parse_offsets(probes, spec, "--probe") if probes
             else [(n, 0.05) for n in spec.output_names])
    report = eval_local_offsets(model, spec, reg, pairs)
    out = cfg.out_dir()
    rows = _convert_units(report.to_rows(), cfg.units)
    _write_csv(out / "local_offsets.csv", rows, list(rows[0]))
    _write_json(out / "local_offsets.json", _convert_units(report.to_dict(), cfg.units))
    _figure(cfg, plotting.plot_local_offsets, report, out / "local_offsets.png")
    click.echo(f"mean off-target |offset| {report.mean_off_target_mm():.4f} mm over "
               f"{len(pairs)} probe(s); wrote local_offsets.csv, local_offsets.json")


@eval_group.command("recon")
@click.option("--bodies", type=click.IntRange(min=1), default=10_000, show_default=True)
@click.option("--coeff-stddev", type=float, default=1.25, show_default=True)
@_common_options
@click.pass_context
def eval_recon(ctx, bodies, coeff_stddev, **kw):
    """Reconstruct random bodies from their measurements (Meas. MAE, PVE-T)."""
    cfg = _config(ctx, kw)
    model, spec, reg = _load_all(cfg)
    if not coeff_stddev > 0:
        raise click.BadParameter("must be > 0", param_hint="--coeff-stddev")
    rep = eval_reconstruction(model, spec, reg, bodies, coeff_stddev, cfg.seed, cfg.threads)
    data = {"num_coeffs": model.num_coeffs, "num_measurements": spec.num_outputs,
            "coeff_stddev": coeff_stddev, "seed": cfg.seed, **rep.to_dict()}
    data = _convert_units(data, cfg.units)
    out = cfg.out_dir()
    _write_csv(out / "recon.csv", [data], list(data))
    _write_json(out / "recon.json", data)
    _figure(cfg, plotting.plot_reconstruction, rep.to_dict(), out / "recon.png")
    click.echo(f"Meas. MAE {rep.meas_mae_mm:.6g} mm, PVE-T {rep.pve_t_mm:.6g} mm "
               f"over {bodies} bodies")


@cli.command()
@click.option("--beta", "beta_path", type=click.Path(dir_okay=False), default=None,
              help="JSON file with {\"beta\": [...]} (default: mean body).")
@click.option("--variance-from", "obsfile", type=click.Path(dir_okay=False), default=None,
              help="Observation file; attach per-vertex total variance as a scalar sidecar.")
@click.option("--covariance", is_flag=True,
              help="With --variance-from, also write the dense vertex covariance (m^2) as .npy.")
@click.option("--max-full-vertices", type=click.IntRange(min=1), default=DEFAULT_MAX_FULL_VERTICES,
              show_default=True, help="Size cap for --covariance.")
@click.option("--name", default="mesh.obj", show_default=True)
@_common_options
@click.pass_context
def export(ctx, beta_path, obsfile, covariance, max_full_vertices, name, **kw):
    """Export a body mesh as OBJ, optionally with a vertex-variance field."""
    cfg = _config(ctx, kw)
    scalars = None
    if obsfile is None:
        model = _load_model(cfg)
        beta = _load_beta(beta_path, model.num_coeffs)
    else:
        model, spec, reg = _load_all(cfg)
        fused = fuse_observations(load_observations(obsfile, spec.num_outputs))
        g = propagate_to_coeffs(reg, fused)
        beta = _load_beta(beta_path, model.num_coeffs) if beta_path else np.array(g.mean)
        var = directional_vertex_variance(propagate_to_vertices(model, g, lazy=True))
        scalars = var.sum(axis=1) * (1e6 if cfg.units == "mm" else 1.0)
        if covariance:
            dense = propagate_to_vertices(model, g, max_full_vertices=max_full_vertices)
    if covariance and obsfile is None:
        raise click.UsageError("--covariance requires --variance-from")
    out = cfg.out_dir()
    if covariance:
        np.save(out / (Path(name).stem + ".cov.npy"), dense.covariance)
    export_obj(shape_to_vertices(model, beta), out / name, vertex_scalars=scalars)
    click.echo(f"wrote {name}" + (f" and {name}.scalars.csv" if scalars is not None else ""))


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    """Run the CLI and return its exit code (errors mapped to 0/2/3/4)."""
    try:
        rv = cli.main(args=argv, prog_name="semshape", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_DATA
    except (FormatError, InvalidArgumentError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return EXIT_NUMERICAL
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return rv if isinstance(rv, int) else 0


def entry() -> None:
    sys.exit(main())
