"""Linear regressor from measurement offsets to shape-coefficient offsets.

``delta_beta = W.T @ delta_m``, with ``W`` (K x |beta|) fitted by least
squares on randomly sampled bodies. The fit streams samples in seeded
chunks and folds each chunk into the triangular factor of a QR
decomposition of ``[dM | dB]`` (tall-skinny QR), so memory stays
O((K + |beta|)^2) and the result does not depend on the thread count.
The final solve uses an SVD of the measurement block with a relative
singular-value cutoff, which tolerates near-collinear measurements.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _chunks
from .errors import FormatError, InvalidArgumentError, NumericalError, RankDeficiencyWarning
from .measurements import MeasurementSpec, _Compiled, measure, measure_batch
from .shape_model import LinearShapeModel, _check_beta

__all__ = [
    "FitConfig",
    "MeasurementRegressor",
    "LocalOffsetReport",
    "ReconstructionReport",
    "fit_regressor",
    "fit_design_matrices",
    "measurements_to_coeff_offset",
    "apply_measurement_offset",
    "eval_local_offsets",
    "eval_reconstruction",
    "sample_shapes",
    "save_regressor",
    "load_regressor",
]


@dataclass(frozen=True)
class FitConfig:
    num_samples: int = 1_000_000
    coeff_stddev: float = 1.25
    measurement_offset_stddev: float = 0.02
    rank_tolerance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise InvalidArgumentError(f"num_samples must be >= 1, got {self.num_samples}")
        if not self.coeff_stddev > 0:
            raise InvalidArgumentError(f"coeff_stddev must be > 0, got {self.coeff_stddev}")
        if self.measurement_offset_stddev < 0:
            raise InvalidArgumentError("measurement_offset_stddev must be >= 0")
        if not 0 <= self.rank_tolerance < 1:
            raise InvalidArgumentError("rank_tolerance must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class MeasurementRegressor:
    weights: np.ndarray  # (K, |beta|), coefficients per metre
    base_measurements: np.ndarray  # (K,), metres
    meta: dict = field(default_factory=dict)
    output_names: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mb = np.array(self.base_measurements, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[0] != mb.size:
            raise InvalidArgumentError(
                f"weights shape {w.shape} does not match {mb.size} base measurements"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mb))):
            raise InvalidArgumentError("regressor weights and base measurements must be finite")
        w.setflags(write=False)
        mb.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "base_measurements", mb)
        object.__setattr__(self, "output_names", tuple(self.output_names))

    @property
    def num_outputs(self) -> int:
        return self.weights.shape[0]

    @property
    def num_coeffs(self) -> int:
        return self.weights.shape[1]

    def check_compatible(self, model: LinearShapeModel, spec: MeasurementSpec) -> None:
        if self.weights.shape != (spec.num_outputs, model.num_coeffs):
            raise InvalidArgumentError(
                f"regressor has shape {self.weights.shape}, expected "
                f"({spec.num_outputs}, {model.num_coeffs}) for this model and spec"
            )
        if self.output_names and tuple(self.output_names) != tuple(spec.output_names):
            raise InvalidArgumentError("regressor was fitted against a spec with different output names")


# ---------------------------------------------------------------------------
# fitting

def _draw_coeffs(seed, stream, chunk, n, num_coeffs, stddev) -> np.ndarray:
    return _chunks.chunk_rng(seed, stream, chunk).standard_normal((n, num_coeffs)) * stddev


def _chunk_design(model, spec, compiled, config, base, chunk, lo, hi):
    # overflow is reported below with the offending sample index
    with np.errstate(over="ignore", invalid="ignore"):
        b = _draw_coeffs(config.seed, _chunks.STREAM_FIT, chunk, hi - lo, model.num_coeffs,
                         config.coeff_stddev)
        m = measure_batch(model, spec, b, compiled)
    bad = np.flatnonzero(~np.all(np.isfinite(m), axis=1))
    if bad.size:
        raise NumericalError(f"non-finite measurement for fit sample {lo + int(bad[0])}")
    # the mean body is beta = 0, so dB is B itself
    return m - base, b


def fit_design_matrices(model, spec, config: FitConfig):
    """The full ``(dM, dB)`` pair the fit is built from (for checks on small L)."""
    compiled = _Compiled(model, spec)
    base = measure_batch(model, spec, np.zeros((1, model.num_coeffs)), compiled)[0]
    parts = [_chunk_design(model, spec, compiled, config, base, c, lo, hi)
             for c, (lo, hi) in enumerate(_chunks.chunk_bounds(config.num_samples))]
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def _qr_r(a: np.ndarray) -> np.ndarray:
    return np.linalg.qr(a, mode="r")


def fit_regressor(model: LinearShapeModel, spec: MeasurementSpec, config: FitConfig,
                  threads=1) -> MeasurementRegressor:
    """Least-squares fit of ``W`` minimising ``||dM @ W - dB||_F``."""
    compiled = _Compiled(model, spec)
    k, nb = spec.num_outputs, model.num_coeffs
    base = measure_batch(model, spec, np.zeros((1, nb)), compiled)[0]

    def chunk_r(chunk, lo, hi):
        dm, db = _chunk_design(model, spec, compiled, config, base, chunk, lo, hi)
        return _qr_r(np.hstack([dm, db]))

    bounds = _chunks.chunk_bounds(config.num_samples)
    batch = 2 * _chunks.resolve_threads(threads)
    r = np.zeros((0, k + nb))
    for start in range(0, len(bounds), batch):
        for rc in _chunks.map_chunks(
            lambda i, lo, hi, s=start: chunk_r(s + i, lo, hi), bounds[start:start + batch], threads
        ):
            r = _qr_r(np.vstack([r, rc]))
    if r.shape[0] < k + nb:
        r = np.vstack([r, np.zeros((k + nb - r.shape[0], k + nb))])

    r11, r12, r22 = r[:k, :k], r[:k, k:], r[k:, k:]
    u, s, vt = np.linalg.svd(r11)
    # the relative cutoff alone cannot reject dM that is pure rounding noise
    # (e.g. a zero basis), so also drop singular values at the noise level of
    # the measurement values themselves
    noise = 16 * np.finfo(float).eps * np.sqrt(config.num_samples) * np.max(np.abs(base), initial=0.0)
    cutoff = max(config.rank_tolerance * (s[0] if s.size else 0.0), noise)
    rank = int(np.sum(s > cutoff))
    weights = (vt[:rank].T / s[:rank]) @ (u[:, :rank].T @ r12)

    fit_resid = r11 @ weights - r12
    residual_norm = float(np.sqrt(np.sum(fit_resid**2) + np.sum(r22**2)))
    meta = {
        "num_samples": config.num_samples,
        "coeff_stddev": config.coeff_stddev,
        "rank_tolerance": config.rank_tolerance,
        "seed": config.seed,
        "rank": rank,
        "num_outputs": k,
        "residual_norm": residual_norm,
        "condition_number": float(s[0] / s[rank - 1]) if rank else None,
        "warnings": [],
    }
    if rank < k:
        msg = (f"measurement offsets have rank {rank} < {k} measurements under relative "
               f"tolerance {config.rank_tolerance}; returning the minimum-norm solution")
        meta["warnings"].append(msg)
        warnings.warn(msg, RankDeficiencyWarning, stacklevel=2)
    return MeasurementRegressor(weights, base, meta, spec.output_names)


# ---------------------------------------------------------------------------
# applying the regressor

def measurements_to_coeff_offset(reg: MeasurementRegressor, delta_m) -> np.ndarray:
    delta_m = np.asarray(delta_m, dtype=np.float64)
    if delta_m.shape != (reg.num_outputs,):
        raise InvalidArgumentError(
            f"delta_m must have length {reg.num_outputs}, got shape {delta_m.shape}"
        )
    return reg.weights.T @ delta_m


def apply_measurement_offset(model, spec, reg, base_beta, delta_m):
    """Offset a base body by ``delta_m``; returns ``(new_beta, achieved_delta_m)``."""
    reg.check_compatible(model, spec)
    base_beta = _check_beta(model, base_beta)
    new_beta = base_beta + measurements_to_coeff_offset(reg, delta_m)
    achieved = measure(model, spec, new_beta) - measure(model, spec, base_beta)
    return new_beta, achieved


@dataclass
class LocalOffsetReport:
    output_names: tuple
    probes: list  # (slot name, requested offset in mm)
    achieved_mm: np.ndarray  # (num_probes, K)

    @property
    def on_target_mm(self) -> np.ndarray:
        idx = [self.output_names.index(name) for name, _ in self.probes]
        return self.achieved_mm[np.arange(len(idx)), idx]

    @property
    def off_target_mm(self) -> np.ndarray:
        """Achieved offsets with the on-target entries masked out (NaN)."""
        off = self.achieved_mm.copy()
        for row, (name, _) in enumerate(self.probes):
            off[row, self.output_names.index(name)] = np.nan
        return off

    def mean_off_target_mm(self) -> float:
        """Mean absolute leakage into non-probed measurements."""
        if len(self.output_names) < 2:
            return 0.0
        return float(np.nanmean(np.abs(self.off_target_mm)))

    def to_rows(self) -> list[dict]:
        rows = []
        for (name, req), ach in zip(self.probes, self.achieved_mm):
            row = {"input_measurement": name, "input_offset_mm": req}
            row.update({f"{n}_mm": float(v) for n, v in zip(self.output_names, ach)})
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.to_rows()
        fields = ["input_measurement", "input_offset_mm"] + [f"{n}_mm" for n in self.output_names]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"probes": self.to_rows(),
                "mean_off_target_abs_mm": self.mean_off_target_mm()}


def eval_local_offsets(model, spec, reg, offsets, base_beta=None) -> LocalOffsetReport:
    """Apply each ``(slot, delta_metres)`` probe alone and record every
    achieved output offset. Slots may be names or indices."""
    reg.check_compatible(model, spec)
    if base_beta is None:
        base_beta = np.zeros(model.num_coeffs)
    probes, rows = [], []
    for slot, delta in offsets:
        idx = spec.index(slot) if isinstance(slot, str) else int(slot)
        if not 0 <= idx < spec.num_outputs:
            raise InvalidArgumentError(f"slot {slot!r} out of range for {spec.num_outputs} measurements")
        dm = np.zeros(spec.num_outputs)
        dm[idx] = delta
        _, achieved = apply_measurement_offset(model, spec, reg, base_beta, dm)
        probes.append((spec.output_names[idx], float(delta) * 1000.0))
        rows.append(achieved * 1000.0)
    achieved_mm = np.asarray(rows).reshape(len(rows), spec.num_outputs)
    return LocalOffsetReport(tuple(spec.output_names), probes, achieved_mm)


@dataclass(frozen=True)
class ReconstructionReport:
    meas_mae_mm: float
    pve_t_mm: float
    num_bodies: int

    def to_dict(self) -> dict:
        return {"num_bodies": self.num_bodies, "meas_mae_mm": self.meas_mae_mm,
                "pve_t_mm": self.pve_t_mm}


def eval_reconstruction(model, spec, reg, num_bodies: int, coeff_stddev: float = 1.25,
                        seed: int = 0, threads=1) -> ReconstructionReport:
    """Reconstruct random bodies from their measurements alone.

    Reports the mean absolute measurement error and the mean per-vertex
    T-pose error (PVE-T) between input and reconstructed bodies, in mm.
    """
    reg.check_compatible(model, spec)
    if num_bodies < 1:
        raise InvalidArgumentError(f"num_bodies must be >= 1, got {num_bodies}")
    compiled = _Compiled(model, spec)
    nb, nv = model.num_coeffs, model.num_vertices
    w = reg.weights

    def chunk(i, lo, hi):
        betas = _draw_coeffs(seed, _chunks.STREAM_RECON, i, hi - lo, nb, coeff_stddev)
        m = measure_batch(model, spec, betas, compiled)
        beta_hat = (m - reg.base_measurements) @ w
        m_hat = measure_batch(model, spec, beta_hat, compiled)
        diff = (beta_hat - betas) @ model.basis.T
        pve = np.linalg.norm(diff.reshape(-1, nv, 3), axis=2).mean(axis=1)
        return np.abs(m_hat - m).mean(axis=1).sum(), pve.sum()

    # small sub-chunks bound the (n, 3V) vertex-difference buffer
    sub = max(1, min(_chunks.CHUNK_SIZE, 4_000_000 // (3 * nv)))
    parts = _chunks.map_chunks(chunk, _chunks.chunk_bounds(num_bodies, sub), threads)
    mae = sum(p[0] for p in parts) / num_bodies
    pve = sum(p[1] for p in parts) / num_bodies
    return ReconstructionReport(float(mae * 1000.0), float(pve * 1000.0), num_bodies)


def sample_shapes(model, spec, reg, count: int, config: FitConfig, seed: int,
                  threads=1) -> np.ndarray:
    """Two-stage random bodies: base coefficients, then a measurement-space
    augmentation mapped through the regressor. Returns (count, |beta|)."""
    reg.check_compatible(model, spec)
    if count < 0:
        raise InvalidArgumentError(f"count must be >= 0, got {count}")
    nb, k = model.num_coeffs, spec.num_outputs

    def chunk(i, lo, hi):
        rng = _chunks.chunk_rng(seed, _chunks.STREAM_SAMPLE, i)
        base = rng.standard_normal((hi - lo, nb)) * config.coeff_stddev
        dm = rng.standard_normal((hi - lo, k)) * config.measurement_offset_stddev
        return base + dm @ reg.weights

    parts = _chunks.map_chunks(chunk, _chunks.chunk_bounds(count), threads)
    return np.vstack(parts) if parts else np.zeros((0, nb))


def base_shape_samples(model, count: int, config: FitConfig, seed: int) -> np.ndarray:
    """Stage one of ``sample_shapes`` on its own (same random stream)."""
    nb = model.num_coeffs
    parts = [_chunks.chunk_rng(seed, _chunks.STREAM_SAMPLE, i).standard_normal((hi - lo, nb))
             * config.coeff_stddev for i, (lo, hi) in enumerate(_chunks.chunk_bounds(count))]
    return np.vstack(parts) if parts else np.zeros((0, nb))


# ---------------------------------------------------------------------------
# file I/O

_F64 = np.dtype("<f8")


def save_regressor(reg: MeasurementRegressor, path) -> Path:
    path = Path(path)
    payload = path.with_suffix(".bin")
    header = {
        "num_outputs": reg.num_outputs,
        "num_coeffs": reg.num_coeffs,
        "output_names": list(reg.output_names),
        "meta": reg.meta,
        "payload": payload.name,
    }
    with open(payload, "wb") as fh:
        fh.write(reg.weights.astype(_F64).tobytes(order="C"))
        fh.write(reg.base_measurements.astype(_F64).tobytes())
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def load_regressor(path) -> MeasurementRegressor:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON header at byte offset {exc.pos}: {exc.msg}") from exc
    try:
        k, nb = int(header["num_outputs"]), int(header["num_coeffs"])
        payload = path.parent / header["payload"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header field missing or invalid: {exc}") from exc
    names = header.get("output_names") or []
    if names and len(names) != k:
        raise FormatError(f"{path}: {len(names)} output_names for num_outputs = {k}")
    try:
        data = payload.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read payload {payload}: {exc}") from exc
    expected = 8 * (k * nb + k)
    if len(data) != expected:
        raise FormatError(f"{payload}: expected {expected} bytes, file has {len(data)}")
    arr = np.frombuffer(data, dtype=_F64).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        field_name = "weights" if bad[0] < k * nb else "base_measurements"
        raise FormatError(f"{payload}: non-finite value in '{field_name}' at byte offset {8 * int(bad[0])}")
    return MeasurementRegressor(arr[:k * nb].reshape(k, nb), arr[k * nb:], header.get("meta", {}), names)
