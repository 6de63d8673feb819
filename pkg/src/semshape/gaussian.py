"""Gaussian uncertainty in measurement, coefficient and vertex space.

Per-observation measurement distributions are diagonal. Mapping one
through the regressor gives a dense coefficient covariance
``W.T diag(var) W``, and through the shape basis a dense vertex covariance
``S cov_beta S.T``. Several observations of the same body combine as a
product of Gaussians: precisions add and the mean is precision weighted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, FormatError, InvalidArgumentError, NumericalError
from .measurements import MeasurementSpec, measure
from .regressor import MeasurementRegressor
from .shape_model import LinearShapeModel, Mesh, shape_to_vertices

__all__ = [
    "DiagGaussian",
    "FullGaussian",
    "FactoredGaussian",
    "MeasurementObservation",
    "FusedShapeEstimate",
    "VARIANCE_FLOOR",
    "DEFAULT_MAX_FULL_VERTICES",
    "propagate_to_coeffs",
    "propagate_to_vertices",
    "directional_vertex_variance",
    "clamp_variances",
    "fuse",
    "naive_average",
    "fused_shape_estimate",
    "load_observations",
    "save_observations",
    "fusion_report",
]

# smallest variance (m^2) accepted by fuse(); clamp inputs with clamp_variances()
VARIANCE_FLOOR = 1e-12
DEFAULT_MAX_FULL_VERTICES = 2000
_SYMMETRY_RTOL = 1e-9
_PSD_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        var = np.array(self.variances, dtype=np.float64).reshape(-1)
        if mean.shape != var.shape:
            raise InvalidArgumentError(
                f"mean has length {mean.size} but variances has length {var.size}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise InvalidArgumentError("mean and variances must be finite")
        if np.any(var < 0):
            raise InvalidArgumentError("variances must be >= 0")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.mean.size

    def pdf(self, x) -> np.ndarray:
        """Density at points ``x`` of shape (n, dim) (or (n,) when dim == 1)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        z = (x - self.mean) ** 2 / self.variances
        norm = np.prod(np.sqrt(2 * np.pi * self.variances))
        return np.exp(-0.5 * z.sum(axis=1)) / norm


@dataclass(frozen=True, eq=False)
class FullGaussian:
    """Mean and symmetric positive semi-definite covariance.

    Construction symmetrises the covariance and clamps small negative
    eigenvalues (down to ``-1e-9 * max eigenvalue``) to zero; anything more
    negative is rejected.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.covariance, dtype=np.float64)
        n = mean.size
        if cov.shape != (n, n):
            raise InvalidArgumentError(f"covariance must have shape ({n}, {n}), got {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidArgumentError("mean and covariance must be finite")
        scale = np.max(np.abs(cov)) if cov.size else 0.0
        if scale > 0 and np.max(np.abs(cov - cov.T)) > _SYMMETRY_RTOL * scale:
            raise InvalidArgumentError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if scale > 0:
            evals, evecs = np.linalg.eigh(cov)
            if evals[0] < -_PSD_RTOL * evals[-1]:
                raise InvalidArgumentError(
                    f"covariance is not positive semi-definite (min eigenvalue {evals[0]:.3e})"
                )
            if evals[0] < 0:
                cov = (evecs * np.clip(evals, 0, None)) @ evecs.T
                cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_factor(cls, mean, factor) -> "FullGaussian":
        """Gaussian with covariance ``factor @ factor.T`` (PSD by construction)."""
        g = object.__new__(cls)
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        factor = np.asarray(factor, dtype=np.float64)
        cov = factor @ factor.T
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(g, "mean", mean)
        object.__setattr__(g, "covariance", cov)
        return g

    @property
    def dim(self) -> int:
        return self.mean.size

    def diagonal(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def vertex_block(self, i: int) -> np.ndarray:
        return self.covariance[3 * i:3 * i + 3, 3 * i:3 * i + 3].copy()


@dataclass(frozen=True, eq=False)
class FactoredGaussian:
    """Vertex-space Gaussian kept as ``mean`` plus a factor ``F`` with
    covariance ``F @ F.T``; only the pieces asked for are ever formed."""

    mean: np.ndarray
    factor: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size

    def diagonal(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.factor, self.factor)

    def vertex_block(self, i: int) -> np.ndarray:
        f = self.factor[3 * i:3 * i + 3]
        return f @ f.T

    def dense(self) -> FullGaussian:
        return FullGaussian.from_factor(self.mean, self.factor)


@dataclass(frozen=True)
class MeasurementObservation:
    id: str
    distribution: DiagGaussian


# ---------------------------------------------------------------------------
# propagation

def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``."""
    evals, evecs = np.linalg.eigh(cov)
    return evecs * np.sqrt(np.clip(evals, 0, None))


def propagate_to_coeffs(reg: MeasurementRegressor, d: DiagGaussian) -> FullGaussian:
    """Map a measurement-offset Gaussian to shape coefficients."""
    if d.dim != reg.num_outputs:
        raise InvalidArgumentError(
            f"distribution has {d.dim} measurements, regressor expects {reg.num_outputs}"
        )
    w = reg.weights
    mean = w.T @ d.mean
    # W.T diag(var) W = (sqrt(var) W).T (sqrt(var) W), PSD by construction
    scaled = np.sqrt(d.variances)[:, None] * w
    return FullGaussian.from_factor(mean, scaled.T)


def propagate_to_vertices(model: LinearShapeModel, g: FullGaussian, lazy: bool = False,
                          max_full_vertices: int = DEFAULT_MAX_FULL_VERTICES):
    """Map a coefficient Gaussian to flattened T-pose vertices.

    Returns a dense :class:`FullGaussian` or, with ``lazy=True``, a
    :class:`FactoredGaussian` whose diagonal and per-vertex blocks are
    computed on demand. Dense output above ``max_full_vertices`` vertices
    raises :class:`CapacityError`.
    """
    if g.dim != model.num_coeffs:
        raise InvalidArgumentError(
            f"coefficient Gaussian has dimension {g.dim}, model has {model.num_coeffs} coefficients"
        )
    mean = model.basis @ g.mean + model.template
    factor = model.basis @ _psd_factor(g.covariance)
    if lazy:
        return FactoredGaussian(mean, factor)
    if model.num_vertices > max_full_vertices:
        raise CapacityError(
            f"dense vertex covariance for {model.num_vertices} vertices exceeds the cap of "
            f"{max_full_vertices}; use lazy=True for diagonal/block access"
        )
    return FullGaussian.from_factor(mean, factor)


def directional_vertex_variance(vg) -> np.ndarray:
    """Per-vertex (var_x, var_y, var_z) from a vertex-space Gaussian."""
    if vg.dim % 3:
        raise InvalidArgumentError(f"vertex Gaussian dimension {vg.dim} is not divisible by 3")
    return vg.diagonal().reshape(-1, 3)


# ---------------------------------------------------------------------------
# fusion

def _distribution(obs) -> DiagGaussian:
    return obs.distribution if isinstance(obs, MeasurementObservation) else obs


def _label(obs, k: int) -> str:
    return obs.id if isinstance(obs, MeasurementObservation) else f"#{k}"


def _check_observations(observations) -> list[DiagGaussian]:
    observations = list(observations)
    if not observations:
        raise InvalidArgumentError("at least one observation is required")
    dists = [_distribution(o) for o in observations]
    dim = dists[0].dim
    for k, (o, d) in enumerate(zip(observations, dists)):
        if d.dim != dim:
            raise InvalidArgumentError(
                f"observation '{_label(o, k)}' has {d.dim} measurements, expected {dim}"
            )
    return dists


def clamp_variances(d: DiagGaussian, floor: float = VARIANCE_FLOOR) -> DiagGaussian:
    return DiagGaussian(d.mean, np.maximum(d.variances, floor))


def _weighted_mean(means: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-column weighted mean of ``means`` (N, K), written as an offset from
    the column minimum with each column's terms summed in sorted order.

    This makes the result independent of row order, exact when all rows are
    equal, and identical for equal weights whatever their value.
    """
    ref = means.min(axis=0)
    terms = np.sort(weights * (means - ref), axis=0)
    return ref + terms.sum(axis=0) / np.sort(weights, axis=0).sum(axis=0)


def fuse(observations) -> DiagGaussian:
    """Product of independent diagonal Gaussians, per slot.

    ``var = 1 / sum(1 / var_n)``, ``mean = var * sum(mean_n / var_n)``.
    Observations may be :class:`MeasurementObservation` or bare
    :class:`DiagGaussian`.
    """
    observations = list(observations)
    dists = _check_observations(observations)
    for k, (o, d) in enumerate(zip(observations, dists)):
        if np.any(d.variances < VARIANCE_FLOOR):
            raise NumericalError(
                f"observation '{_label(o, k)}' has variance below {VARIANCE_FLOOR:g} m^2; "
                "precision would be (near) infinite, clamp with clamp_variances() first"
            )
    means = np.array([d.mean for d in dists])
    var = np.array([d.variances for d in dists])
    # precisions relative to the most certain observation (exactly 1 for it),
    # so one observation is returned unchanged and var never exceeds min var_n
    min_var = var.min(axis=0)
    rel = min_var / var
    total = np.sort(rel, axis=0).sum(axis=0)
    return DiagGaussian(_weighted_mean(means, rel), min_var / total)


def naive_average(observations) -> DiagGaussian:
    """Unweighted mean of the observation means (baseline). The variance
    reported is the mean variance divided by N, for information only."""
    dists = _check_observations(observations)
    means = np.array([d.mean for d in dists])
    var = np.array([d.variances for d in dists])
    n = len(dists)
    return DiagGaussian(_weighted_mean(means, np.ones_like(means)),
                        np.sort(var, axis=0).sum(axis=0) / n / n)


@dataclass(frozen=True, eq=False)
class FusedShapeEstimate:
    fused: DiagGaussian
    beta_hat: np.ndarray
    mesh: Mesh
    measurement_estimate: np.ndarray
    coeff_distribution: FullGaussian


def fused_shape_estimate(model: LinearShapeModel, spec: MeasurementSpec,
                         reg: MeasurementRegressor, observations) -> FusedShapeEstimate:
    """Fuse the observations, then map the fused mean offset to a body."""
    reg.check_compatible(model, spec)
    fused = fuse(observations)
    coeffs = propagate_to_coeffs(reg, fused)
    beta_hat = np.array(coeffs.mean)
    return FusedShapeEstimate(
        fused=fused,
        beta_hat=beta_hat,
        mesh=shape_to_vertices(model, beta_hat),
        measurement_estimate=measure(model, spec, beta_hat),
        coeff_distribution=coeffs,
    )


# ---------------------------------------------------------------------------
# observation files (mm externally, metres internally)

def load_observations(path, num_outputs: int | None = None) -> list[MeasurementObservation]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    entries = data.get("observations") if isinstance(data, dict) else None
    if not isinstance(entries, list) or not entries:
        raise FormatError(f"{path}: expected a non-empty 'observations' list")
    out = []
    expected = num_outputs
    for k, e in enumerate(entries):
        oid = str(e.get("id", f"#{k}")) if isinstance(e, dict) else f"#{k}"
        try:
            mean = np.asarray(e["mean_mm"], dtype=np.float64) / 1000.0
            var = np.asarray(e["variance_mm2"], dtype=np.float64) / 1e6
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: observation '{oid}' lacks numeric mean_mm/variance_mm2") from exc
        if expected is None:
            expected = mean.size
        if mean.ndim != 1 or mean.size != expected or var.shape != mean.shape:
            raise FormatError(
                f"{path}: observation '{oid}' has {mean.size} means and {var.size} variances, "
                f"expected {expected} of each"
            )
        try:
            out.append(MeasurementObservation(oid, DiagGaussian(mean, var)))
        except InvalidArgumentError as exc:
            raise FormatError(f"{path}: observation '{oid}': {exc}") from exc
    return out


def save_observations(observations, path) -> Path:
    path = Path(path)
    data = {"observations": [
        {"id": o.id,
         "mean_mm": (o.distribution.mean * 1000.0).tolist(),
         "variance_mm2": (o.distribution.variances * 1e6).tolist()}
        for o in observations
    ]}
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def fusion_report(observations, output_names) -> dict:
    """Per-slot fused and naive-average results in mm / mm^2."""
    fused = fuse(observations)
    naive = naive_average(observations)
    slots = []
    for k, name in enumerate(output_names):
        slots.append({
            "name": name,
            "fused_mean_mm": float(fused.mean[k] * 1000.0),
            "fused_variance_mm2": float(fused.variances[k] * 1e6),
            "fused_precision_per_mm2": float(1.0 / (fused.variances[k] * 1e6)),
            "observation_precisions_per_mm2": [
                float(1.0 / (_distribution(o).variances[k] * 1e6)) for o in observations
            ],
            "naive_mean_mm": float(naive.mean[k] * 1000.0),
            "naive_variance_mm2": float(naive.variances[k] * 1e6),
        })
    return {"num_observations": len(observations),
            "observation_ids": [_label(o, k) for k, o in enumerate(observations)],
            "slots": slots}
