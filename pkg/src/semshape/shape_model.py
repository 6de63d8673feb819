"""Linear blend-shape models: evaluation, file I/O, OBJ export and a
procedural generator for synthetic test bodies.

Vertices are flattened per vertex, ``(x0, y0, z0, x1, y1, z1, ...)``, so the
3x3 block of a flattened covariance belonging to vertex ``i`` sits at rows
and columns ``3*i:3*i+3``. Axes: x is width, y is height, z is depth.
Everything is in metres.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

__all__ = [
    "LinearShapeModel",
    "Mesh",
    "BodyPart",
    "shape_to_vertices",
    "generate_synthetic_model",
    "body_layout",
    "load_model",
    "save_model",
    "export_obj",
    "PROFILES",
]

PROFILES = ("body-like", "random-smooth")

# Frobenius norm of every synthetic basis column.
BASIS_COLUMN_NORM = 0.05

_JOINT_ROW_SUM_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearShapeModel:
    """Template ``t`` plus shape basis ``S``; vertices are ``S @ beta + t``.

    Arrays are copied and made read-only on construction so a model can be
    shared freely between threads.
    """

    template: np.ndarray
    basis: np.ndarray
    joint_regressor: np.ndarray | None = None
    faces: np.ndarray | None = None

    def __post_init__(self):
        template = np.asarray(self.template, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        if template.ndim != 1 or template.size == 0 or template.size % 3:
            raise InvalidArgumentError(
                f"template must be a non-empty flat vector of length 3*V, got shape {template.shape}"
            )
        if basis.ndim != 2:
            raise InvalidArgumentError(f"basis must be 2-D, got shape {basis.shape}")
        if basis.shape[0] != template.size:
            raise InvalidArgumentError(
                f"basis has {basis.shape[0]} rows but 3*num_vertices = {template.size}"
            )
        if basis.shape[1] < 1:
            raise InvalidArgumentError("basis must have at least one column")
        if not (np.all(np.isfinite(template)) and np.all(np.isfinite(basis))):
            raise InvalidArgumentError("template and basis must be finite")
        object.__setattr__(self, "template", _frozen(template))
        object.__setattr__(self, "basis", _frozen(basis))

        nv = template.size // 3
        if self.joint_regressor is not None:
            jr = np.asarray(self.joint_regressor, dtype=np.float64)
            if jr.ndim != 2 or jr.shape[1] != nv or jr.shape[0] < 1:
                raise InvalidArgumentError(
                    f"joint_regressor must have shape (J, {nv}), got {jr.shape}"
                )
            if not np.all(np.isfinite(jr)):
                raise InvalidArgumentError("joint_regressor must be finite")
            sums = jr.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > _JOINT_ROW_SUM_TOL)
            if bad.size:
                raise InvalidArgumentError(
                    f"joint_regressor row {bad[0]} sums to {sums[bad[0]]!r}, expected 1.0"
                )
            object.__setattr__(self, "joint_regressor", _frozen(jr))

        if self.faces is not None:
            faces = np.asarray(self.faces)
            if faces.size == 0:
                faces = faces.reshape(0, 3)
            if faces.ndim != 2 or faces.shape[1] != 3:
                raise InvalidArgumentError(f"faces must have shape (F, 3), got {faces.shape}")
            if faces.size and (faces.min() < 0 or faces.max() >= nv):
                raise InvalidArgumentError(f"face index out of range for {nv} vertices")
            faces = np.array(faces, dtype=np.int64, copy=True)
            faces.setflags(write=False)
            object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return self.template.size // 3

    @property
    def num_coeffs(self) -> int:
        return self.basis.shape[1]

    @property
    def num_joints(self) -> int:
        return 0 if self.joint_regressor is None else self.joint_regressor.shape[0]

    def truncated(self, num_coeffs: int) -> "LinearShapeModel":
        """Model that keeps only the first ``num_coeffs`` basis columns."""
        if not 1 <= num_coeffs <= self.num_coeffs:
            raise InvalidArgumentError(
                f"num_coeffs must be in [1, {self.num_coeffs}], got {num_coeffs}"
            )
        return LinearShapeModel(
            self.template, self.basis[:, :num_coeffs], self.joint_regressor, self.faces
        )


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    joints: np.ndarray | None = None
    faces: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidArgumentError(f"vertices must have shape (V, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("mesh vertices must be finite")
        object.__setattr__(self, "vertices", v)
        if self.joints is not None:
            j = np.asarray(self.joints, dtype=np.float64)
            if j.ndim != 2 or j.shape[1] != 3 or not np.all(np.isfinite(j)):
                raise InvalidArgumentError("joints must be a finite (J, 3) array")
            object.__setattr__(self, "joints", j)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]


def _check_beta(model: LinearShapeModel, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1 or beta.size != model.num_coeffs:
        raise InvalidArgumentError(
            f"beta must have length {model.num_coeffs} (model num_coeffs), got shape {beta.shape}"
        )
    if not np.all(np.isfinite(beta)):
        raise InvalidArgumentError("beta must be finite")
    return beta


def shape_to_vertices(model: LinearShapeModel, beta) -> Mesh:
    """Evaluate the T-pose mesh for shape coefficients ``beta``."""
    beta = _check_beta(model, beta)
    flat = model.basis @ beta + model.template
    vertices = flat.reshape(-1, 3)
    joints = None
    if model.joint_regressor is not None:
        joints = model.joint_regressor @ vertices
    return Mesh(vertices, joints, model.faces)


# ---------------------------------------------------------------------------
# synthetic models

@dataclass(frozen=True)
class BodyPart:
    """One closed tube of a synthetic body: two cap vertices plus rings."""

    name: str
    center_x: float
    center_z: float
    y_bottom: float
    y_top: float
    bottom_cap: int
    top_cap: int
    rings: tuple  # tuple of tuples of vertex indices, bottom to top
    ring_heights: tuple
    ring_angles: tuple  # per ring, angle (radians) of each vertex

    @property
    def vertex_ids(self) -> list[int]:
        ids = [self.bottom_cap]
        for ring in self.rings:
            ids.extend(ring)
        ids.append(self.top_cap)
        return ids

    def ring_extremes(self, ring: int) -> dict[str, int]:
        """Vertices of ``ring`` closest to +x, -x, +z and -z."""
        angles = np.asarray(self.ring_angles[ring])
        ids = self.rings[ring]

        def nearest(target):
            d = np.abs(np.angle(np.exp(1j * (angles - target))))
            return ids[int(np.argmin(d))]

        return {"+x": nearest(0.0), "+z": nearest(math.pi / 2),
                "-x": nearest(math.pi), "-z": nearest(3 * math.pi / 2)}


# name, centre x, centre z, y range, (radius x at bottom, mid, top), depth/width ratio
_PART_SHAPES = {
    "torso": (0.0, 0.0, 0.85, 1.50, (0.17, 0.14, 0.18), 0.65),
    "left_leg": (0.09, 0.0, 0.0, 0.85, (0.045, 0.055, 0.08), 1.0),
    "right_leg": (-0.09, 0.0, 0.0, 0.85, (0.045, 0.055, 0.08), 1.0),
    "left_arm": (0.26, 0.0, 0.75, 1.45, (0.03, 0.04, 0.05), 1.0),
    "right_arm": (-0.26, 0.0, 0.75, 1.45, (0.03, 0.04, 0.05), 1.0),
}
_PART_FRACTIONS = {"torso": 0.36, "left_leg": 0.2, "right_leg": 0.2, "left_arm": 0.12, "right_arm": 0.12}
# highest angular harmonic in radial bump profiles
_RADIAL_HARMONICS = 4
# shortest wavelength (m) of a radial harmonic around a ring; keeps thin limbs smooth
_MIN_WAVELENGTH = 0.2
# below this many vertices the body is a single torso tube
_MIN_MULTIPART_VERTICES = 60


def _part_radius(name: str, y: float) -> tuple[float, float]:
    _, _, y0, y1, (rb, rm, rt), depth_ratio = _PART_SHAPES[name]
    u = (y - y0) / (y1 - y0)
    # quadratic through (0, rb), (0.5, rm), (1, rt)
    rx = rb * (1 - u) * (1 - 2 * u) + 4 * rm * u * (1 - u) + rt * u * (2 * u - 1)
    return rx, rx * depth_ratio


def body_layout(num_vertices: int) -> list[BodyPart]:
    """Vertex layout of the ``body-like`` synthetic profile.

    Depends on ``num_vertices`` only, so measurement specs can be built for a
    generated model without storing extra metadata.
    """
    if num_vertices < 8:
        raise InvalidArgumentError(f"num_vertices must be >= 8, got {num_vertices}")
    if num_vertices < _MIN_MULTIPART_VERTICES:
        counts = {"torso": num_vertices}
    else:
        counts = {k: int(num_vertices * f) for k, f in _PART_FRACTIONS.items()}
        counts["torso"] += num_vertices - sum(counts.values())

    parts = []
    start = 0
    for name, n in counts.items():
        cx, cz, y0, y1, _, _ = _PART_SHAPES[name]
        m = n - 2
        mean_r = sum(_part_radius(name, y)[0] for y in np.linspace(y0, y1, 5)) / 5
        ring_size = int(round(math.sqrt(m * 2 * math.pi * mean_r / (y1 - y0))))
        ring_size = min(max(ring_size, 3), m)
        num_rings = max(1, m // ring_size)
        sizes = [m // num_rings + (1 if i < m % num_rings else 0) for i in range(num_rings)]
        idx = start + 1
        rings, heights, angles = [], [], []
        for i, size in enumerate(sizes):
            rings.append(tuple(range(idx, idx + size)))
            heights.append(y0 + (i + 1) / (num_rings + 1) * (y1 - y0))
            angles.append(tuple(2 * math.pi * k / size for k in range(size)))
            idx += size
        parts.append(BodyPart(name, cx, cz, y0, y1, start, idx, tuple(rings),
                              tuple(heights), tuple(angles)))
        start = idx + 1
    assert start == num_vertices
    return parts


def _zip_rings(a, b) -> list[tuple[int, int, int]]:
    """Triangulate the band between two closed rings of possibly unequal size."""
    na, nb = len(a), len(b)
    i = j = 0
    tris = []
    while i < na or j < nb:
        if j == nb or (i < na and (i + 1) / na <= (j + 1) / nb):
            tris.append((a[i % na], b[j % nb], a[(i + 1) % na]))
            i += 1
        else:
            tris.append((a[i % na], b[j % nb], b[(j + 1) % nb]))
            j += 1
    return tris


def _body_template(parts: list[BodyPart], num_vertices: int):
    verts = np.zeros((num_vertices, 3))
    faces = []
    radial = np.zeros((num_vertices, 3))  # outward unit direction in the xz plane
    radius = np.zeros(num_vertices)
    part_of = np.zeros(num_vertices, dtype=np.int64)
    for k, p in enumerate(parts):
        part_of[p.vertex_ids] = k
        verts[p.bottom_cap] = (p.center_x, p.y_bottom, p.center_z)
        verts[p.top_cap] = (p.center_x, p.y_top, p.center_z)
        for ring, y, angles in zip(p.rings, p.ring_heights, p.ring_angles):
            rx, rz = _part_radius(p.name, y)
            for vid, th in zip(ring, angles):
                verts[vid] = (p.center_x + rx * math.cos(th), y, p.center_z + rz * math.sin(th))
                radial[vid] = (math.cos(th), 0.0, math.sin(th))
                radius[vid] = rx
        first, last = p.rings[0], p.rings[-1]
        faces += [(p.bottom_cap, first[(k + 1) % len(first)], first[k]) for k in range(len(first))]
        for lo, hi in zip(p.rings[:-1], p.rings[1:]):
            faces += _zip_rings(lo, hi)
        faces += [(p.top_cap, last[k], last[(k + 1) % len(last)]) for k in range(len(last))]
    return verts, np.asarray(faces, dtype=np.int64), radial, radius, part_of


def _body_joints(parts: list[BodyPart], num_vertices: int) -> np.ndarray:
    # bottom, middle and top ring centroid of every part
    rows = []
    for p in parts:
        for r in (0, len(p.rings) // 2, len(p.rings) - 1):
            row = np.zeros(num_vertices)
            row[list(p.rings[r])] = 1.0 / len(p.rings[r])
            rows.append(row)
    return np.vstack(rows)


def _normalize_columns(basis: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(basis, axis=0)
    norms[norms == 0] = 1.0
    return basis * (BASIS_COLUMN_NORM / norms)


def _body_basis(rng: np.random.Generator, parts: list[BodyPart], verts: np.ndarray,
                radial: np.ndarray, radius: np.ndarray, part_of: np.ndarray,
                num_coeffs: int) -> np.ndarray:
    nv = verts.shape[0]
    mirror = np.array([-1.0, 1.0, 1.0])
    names = [p.name for p in parts]
    mirror_part = np.array([names.index(n.replace("left", "#").replace("right", "left").replace("#", "right"))
                            for n in names])
    theta = np.arctan2(radial[:, 2], radial[:, 0])
    h = np.arange(_RADIAL_HARMONICS + 1)
    hmax = np.clip(np.floor(2 * math.pi * radius / _MIN_WAVELENGTH), 1, _RADIAL_HARMONICS)
    allowed = h[None, :] <= hmax[:, None]

    def ring_profile(coef, angle):
        return (allowed * np.cos(np.outer(angle, h))) @ coef[0] \
            + (allowed * np.sin(np.outer(angle, h))) @ coef[1]

    basis = np.empty((3 * nv, num_coeffs))
    for k in range(num_coeffs):
        # early columns are broad (global), later ones increasingly local
        sigma = max(0.08, 0.4 / (1.0 + k / 4.0))
        ci = rng.integers(nv)
        centre = verts[ci]
        kind = rng.choice(3, p=[0.6, 0.2, 0.2])
        symmetric = k % 2 == 0
        if kind == 0:
            # whole-ring radial profile r(theta) = sum_h a_h cos(h theta) + b_h sin(h theta),
            # windowed in height within the centre's body part
            coef = rng.standard_normal((2, h.size)) / (1.0 + h)
            dy = np.exp(-(verts[:, 1] - centre[1]) ** 2 / (2 * sigma**2))
            w1 = dy * (part_of == part_of[ci])
            w2 = dy * (part_of == mirror_part[part_of[ci]])
            d1 = radial * ring_profile(coef, theta)[:, None]
            d2 = radial * ring_profile(coef, math.pi - theta)[:, None]
            field_ = w1[:, None] * d1
            if symmetric:
                field_ = field_ + w2[:, None] * d2
            basis[:, k] = field_.reshape(-1)
            continue
        w1 = np.exp(-np.sum((verts - centre) ** 2, axis=1) / (2 * sigma**2))
        w2 = np.exp(-np.sum((verts - centre * mirror) ** 2, axis=1) / (2 * sigma**2))
        if kind == 1:
            d1 = np.tile([0.0, 1.0, 0.0], (nv, 1)) * rng.choice([-1.0, 1.0])
            d2 = d1
        else:
            v = rng.standard_normal(3)
            d1 = np.tile(v / np.linalg.norm(v), (nv, 1))
            d2 = d1 * mirror
        field_ = w1[:, None] * d1
        if symmetric:
            field_ = field_ + w2[:, None] * d2
        basis[:, k] = field_.reshape(-1)
    return _normalize_columns(basis)


def _fibonacci_sphere(n: int, radius: float, centre) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5**0.5) * i
    pts = np.column_stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)])
    return radius * pts + np.asarray(centre)


def _smooth_random_basis(rng, verts, num_coeffs) -> np.ndarray:
    nv = verts.shape[0]
    basis = np.empty((3 * nv, num_coeffs))
    for k in range(num_coeffs):
        field_ = np.zeros((nv, 3))
        for _ in range(3):
            centre = verts[rng.integers(nv)]
            sigma = rng.uniform(0.15, 0.4)
            w = np.exp(-np.sum((verts - centre) ** 2, axis=1) / (2 * sigma**2))
            field_ += w[:, None] * rng.standard_normal(3)
        basis[:, k] = field_.reshape(-1)
    return _normalize_columns(basis)


def generate_synthetic_model(seed: int, num_vertices: int, num_coeffs: int,
                             profile: str = "body-like") -> LinearShapeModel:
    """Procedurally build a deterministic linear shape model.

    ``body-like`` gives a torso and four vertical limb tubes (a single tube
    below 60 vertices) whose basis columns are smooth Gaussian bumps, broad
    for low column indices and narrow for high ones. ``random-smooth`` gives
    a sphere with random smooth deformation fields. Every basis column has
    Frobenius norm 0.05 m.
    """
    if num_vertices < 8:
        raise InvalidArgumentError(f"num_vertices must be >= 8, got {num_vertices}")
    if num_coeffs < 1:
        raise InvalidArgumentError(f"num_coeffs must be >= 1, got {num_coeffs}")
    if profile not in PROFILES:
        raise InvalidArgumentError(f"profile must be one of {PROFILES}, got {profile!r}")
    rng = np.random.default_rng(seed)

    if profile == "body-like":
        parts = body_layout(num_vertices)
        verts, faces, radial, radius, part_of = _body_template(parts, num_vertices)
        basis = _body_basis(rng, parts, verts, radial, radius, part_of, num_coeffs)
        joints = _body_joints(parts, num_vertices)
    else:
        from scipy.spatial import ConvexHull

        verts = _fibonacci_sphere(num_vertices, 0.5, (0.0, 0.5, 0.0))
        faces = ConvexHull(verts).simplices.astype(np.int64)
        basis = _smooth_random_basis(rng, verts, num_coeffs)
        # a few joints, each the centroid of a vertex and its nearest neighbours
        joints = np.zeros((4, num_vertices))
        for j in range(4):
            c = verts[rng.integers(num_vertices)]
            nearest = np.argsort(np.sum((verts - c) ** 2, axis=1), kind="stable")[:4]
            joints[j, nearest] = 0.25
    return LinearShapeModel(verts.reshape(-1), basis, joints, faces)


# ---------------------------------------------------------------------------
# file I/O

_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


def save_model(model: LinearShapeModel, path) -> Path:
    """Write ``path`` (JSON header) and ``<stem>.bin`` next to it."""
    path = Path(path)
    payload_path = path.with_suffix(".bin")
    header = {
        "num_vertices": model.num_vertices,
        "num_coeffs": model.num_coeffs,
        "has_joints": model.joint_regressor is not None,
        "num_joints": model.num_joints,
        "basis_shape": list(model.basis.shape),
        "payload": payload_path.name,
    }
    faces = model.faces if model.faces is not None else np.zeros((0, 3), dtype=np.int64)
    with open(payload_path, "wb") as fh:
        fh.write(model.template.astype(_F64).tobytes())
        fh.write(model.basis.astype(_F64).tobytes(order="F"))
        if model.joint_regressor is not None:
            fh.write(model.joint_regressor.astype(_F64).tobytes(order="C"))
        fh.write(np.array([faces.shape[0]], dtype=_U32).tobytes())
        fh.write(faces.astype(_U32).tobytes(order="C"))
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def _header_int(header: dict, key: str, path) -> int:
    if key not in header:
        raise FormatError(f"{path}: header is missing field '{key}'")
    value = header[key]
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise FormatError(f"{path}: header field '{key}' must be a non-negative integer, got {value!r}")
    return value


class _PayloadReader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def read(self, dtype, count: int, name: str) -> np.ndarray:
        nbytes = dtype.itemsize * count
        if self.offset + nbytes > len(self.data):
            raise FormatError(
                f"{self.path}: truncated payload while reading '{name}' at byte offset "
                f"{self.offset}: expected {self.offset + nbytes} bytes, file has {len(self.data)}"
            )
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        if dtype.kind == "f":
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise FormatError(
                    f"{self.path}: non-finite value in '{name}' at byte offset "
                    f"{self.offset + int(bad[0]) * dtype.itemsize}"
                )
        self.offset += nbytes
        return arr.astype(dtype.newbyteorder("="))


def load_model(path) -> LinearShapeModel:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON header at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    nv = _header_int(header, "num_vertices", path)
    nb = _header_int(header, "num_coeffs", path)
    if nv < 1 or nb < 1:
        raise FormatError(f"{path}: num_vertices and num_coeffs must be positive")
    has_joints = header.get("has_joints", False)
    if not isinstance(has_joints, bool):
        raise FormatError(f"{path}: header field 'has_joints' must be a boolean")
    nj = _header_int(header, "num_joints", path) if has_joints else 0
    if has_joints and nj < 1:
        raise FormatError(f"{path}: has_joints is true but num_joints is {nj}")
    if "basis_shape" in header:
        rows, cols = header["basis_shape"]
        if rows != 3 * nv:
            raise FormatError(
                f"{path}: basis has {rows} rows but 3*num_vertices = {3 * nv}"
            )
        if cols != nb:
            raise FormatError(f"{path}: basis has {cols} columns but num_coeffs = {nb}")
    payload = header.get("payload")
    if not isinstance(payload, str):
        raise FormatError(f"{path}: header field 'payload' must be a relative path string")
    payload_path = path.parent / payload
    try:
        data = payload_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read payload {payload_path}: {exc}") from exc

    reader = _PayloadReader(data, payload_path)
    template = reader.read(_F64, 3 * nv, "template")
    basis = reader.read(_F64, 3 * nv * nb, "basis").reshape((3 * nv, nb), order="F")
    joint_regressor = None
    if has_joints:
        joint_regressor = reader.read(_F64, nj * nv, "joint_regressor").reshape(nj, nv)
    (num_faces,) = reader.read(_U32, 1, "face_count")
    faces = reader.read(_U32, 3 * int(num_faces), "faces").reshape(-1, 3).astype(np.int64)
    if reader.offset != len(data):
        raise FormatError(
            f"{payload_path}: {len(data) - reader.offset} trailing bytes after faces "
            f"(expected {reader.offset} bytes, file has {len(data)})"
        )
    if faces.size and faces.max() >= nv:
        raise FormatError(f"{payload_path}: face index {int(faces.max())} >= num_vertices {nv}")
    try:
        return LinearShapeModel(template, basis, joint_regressor, faces if num_faces else None)
    except InvalidArgumentError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def export_obj(mesh: Mesh, path, vertex_scalars=None, faces=None) -> Path:
    """Write an ASCII OBJ; optionally a ``<path>.scalars.csv`` sidecar."""
    path = Path(path)
    if vertex_scalars is not None:
        vertex_scalars = np.asarray(vertex_scalars, dtype=np.float64).reshape(-1)
        if vertex_scalars.size != mesh.num_vertices:
            raise InvalidArgumentError(
                f"vertex_scalars has length {vertex_scalars.size}, mesh has {mesh.num_vertices} vertices"
            )
    if faces is None:
        faces = mesh.faces
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    if faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    try:
        path.write_text("\n".join(lines) + "\n")
        if vertex_scalars is not None:
            sidecar = Path(os.fspath(path) + ".scalars.csv")
            rows = ["vertex_index,value"] + [f"{i},{v:.17g}" for i, v in enumerate(vertex_scalars)]
            sidecar.write_text("\n".join(rows) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write OBJ export {path}: {exc}") from exc
    return path
