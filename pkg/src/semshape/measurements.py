"""Semantic body measurements on T-pose meshes.

A measurement is defined by anchor points, each a vertex or a regressed
joint. ``distance`` is the Euclidean distance between two anchors,
``circumference`` the length of the closed polyline through its waypoints,
and ``axis_difference`` the signed coordinate difference ``anchors[1] -
anchors[0]`` along one axis. The last kind is exactly linear in the shape
coefficients, which makes it useful as an oracle for the regressor.

Left/right definitions linked with ``pair_with`` are averaged into a single
output slot.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, SingularityError
from .shape_model import LinearShapeModel, Mesh, _check_beta, body_layout, shape_to_vertices

__all__ = [
    "Kind",
    "Anchor",
    "VertexId",
    "JointId",
    "MeasurementDef",
    "MeasurementSpec",
    "measure",
    "measure_mesh",
    "measure_batch",
    "measurement_jacobian",
    "load_spec",
    "save_spec",
    "spec_from_dict",
    "spec_to_dict",
    "synthetic_spec",
    "axis_difference_spec",
    "smpl_spec_template",
    "SEGMENT_EPS",
]

# segments shorter than this have no defined direction
SEGMENT_EPS = 1e-12

AXES = {"x": 0, "y": 1, "z": 2}


class Kind(str, enum.Enum):
    DISTANCE = "distance"
    CIRCUMFERENCE = "circumference"
    AXIS_DIFFERENCE = "axis_difference"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, cls):
            return value
        key = re.sub(r"(?<!^)(?=[A-Z])", "_", str(value)).lower()
        try:
            return cls(key)
        except ValueError:
            raise InvalidArgumentError(
                f"unknown measurement kind {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class Anchor:
    source: str  # "vertex" or "joint"
    index: int

    def __post_init__(self):
        if self.source not in ("vertex", "joint"):
            raise InvalidArgumentError(f"anchor source must be 'vertex' or 'joint', got {self.source!r}")
        if not isinstance(self.index, (int, np.integer)) or isinstance(self.index, bool) or self.index < 0:
            raise InvalidArgumentError(f"anchor index must be a non-negative integer, got {self.index!r}")
        object.__setattr__(self, "index", int(self.index))


def VertexId(index: int) -> Anchor:
    return Anchor("vertex", index)


def JointId(index: int) -> Anchor:
    return Anchor("joint", index)


@dataclass(frozen=True)
class MeasurementDef:
    name: str
    kind: Kind
    anchors: tuple
    axis: str | None = None
    pair_with: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if not self.name or not isinstance(self.name, str):
            raise InvalidArgumentError("measurement name must be a non-empty string")
        n = len(self.anchors)
        if self.kind is Kind.CIRCUMFERENCE:
            if n < 3:
                raise InvalidArgumentError(
                    f"measurement '{self.name}': circumference needs at least 3 anchors, got {n}"
                )
        elif n != 2:
            raise InvalidArgumentError(
                f"measurement '{self.name}': {self.kind.value} needs exactly 2 anchors, got {n}"
            )
        if self.kind is Kind.AXIS_DIFFERENCE:
            if self.axis not in AXES:
                raise InvalidArgumentError(
                    f"measurement '{self.name}': axis_difference needs axis in x/y/z, got {self.axis!r}"
                )
        elif self.axis is not None:
            raise InvalidArgumentError(
                f"measurement '{self.name}': axis is only valid for axis_difference"
            )


def _pair_stem(name: str) -> str:
    tokens = [t for t in re.split(r"[_\s]+", name) if t.lower() not in ("left", "right", "l", "r")]
    return "_".join(tokens)


def pair_output_name(a: str, b: str) -> str:
    """Output slot name for a left/right pair: the shared name without the
    side token, e.g. ``left_calf_length`` + ``right_calf_length`` ->
    ``calf_length``. Pairs without a common stem use ``a|b`` (sorted)."""
    sa, sb = _pair_stem(a), _pair_stem(b)
    if sa and sa == sb:
        return sa
    return "|".join(sorted((a, b)))


@dataclass(frozen=True)
class MeasurementSpec:
    """Ordered measurement definitions and the averaged output slots.

    ``slots`` maps each output (in ``output_names`` order) to the indices of
    the definitions it averages: one index, or two for a left/right pair.
    """

    defs: tuple
    output_names: tuple = None
    slots: tuple = field(init=False, repr=False)

    def __post_init__(self):
        defs = tuple(self.defs)
        object.__setattr__(self, "defs", defs)
        if not defs:
            raise InvalidArgumentError("measurement spec has no definitions")
        by_name = {}
        for i, d in enumerate(defs):
            if d.name in by_name:
                raise InvalidArgumentError(f"duplicate measurement name '{d.name}'")
            by_name[d.name] = i

        derived = {}
        for i, d in enumerate(defs):
            if d.pair_with is None:
                derived.setdefault(d.name, (i,))
                continue
            j = by_name.get(d.pair_with)
            if j is None:
                raise InvalidArgumentError(
                    f"measurement '{d.name}': pair_with references unknown measurement '{d.pair_with}'"
                )
            other = defs[j]
            if j == i:
                raise InvalidArgumentError(f"measurement '{d.name}' is paired with itself")
            if other.pair_with != d.name:
                raise InvalidArgumentError(
                    f"measurement '{d.name}': pairing with '{other.name}' is not symmetric"
                )
            if other.kind is not d.kind:
                raise InvalidArgumentError(
                    f"measurement '{d.name}': paired with '{other.name}' of a different kind"
                )
            key = pair_output_name(d.name, other.name)
            derived.setdefault(key, (min(i, j), max(i, j)))
        if len(derived) != sum(1 if d.pair_with is None else 0.5 for d in defs):
            raise InvalidArgumentError("output slot names collide between definitions")

        names = tuple(derived) if self.output_names is None else tuple(self.output_names)
        if len(set(names)) != len(names):
            raise InvalidArgumentError("output_names contains duplicates")
        if set(names) != set(derived):
            missing = sorted(set(derived) - set(names))
            extra = sorted(set(names) - set(derived))
            raise InvalidArgumentError(
                f"output_names do not match definitions (missing {missing}, unexpected {extra})"
            )
        object.__setattr__(self, "output_names", names)
        object.__setattr__(self, "slots", tuple(derived[n] for n in names))

    @property
    def num_outputs(self) -> int:
        return len(self.output_names)

    def index(self, name: str) -> int:
        try:
            return self.output_names.index(name)
        except ValueError:
            raise InvalidArgumentError(
                f"unknown measurement '{name}'; valid names: {', '.join(self.output_names)}"
            ) from None

    def slot_definitions(self, slot: int) -> list[MeasurementDef]:
        return [self.defs[i] for i in self.slots[slot]]


# ---------------------------------------------------------------------------
# evaluation

class _Compiled:
    """Anchor geometry of a spec against one model.

    ``offset + basis @ beta`` gives the flattened positions of the unique
    anchors; ``local[d]`` lists definition ``d``'s anchors as positions in
    that unique list.
    """

    def __init__(self, model: LinearShapeModel, spec: MeasurementSpec):
        self.spec = spec
        self.anchors = []
        lookup = {}
        local = []
        for d in spec.defs:
            ids = []
            for a in d.anchors:
                _validate_anchor(model, d, a)
                if a not in lookup:
                    lookup[a] = len(self.anchors)
                    self.anchors.append(a)
                ids.append(lookup[a])
            local.append(np.asarray(ids))
        self.local = local

        nb = model.num_coeffs
        basis3 = model.basis.reshape(model.num_vertices, 3, nb)
        template3 = model.template.reshape(-1, 3)
        offset = np.empty((len(self.anchors), 3))
        basis = np.empty((len(self.anchors), 3, nb))
        for k, a in enumerate(self.anchors):
            if a.source == "vertex":
                offset[k] = template3[a.index]
                basis[k] = basis3[a.index]
            else:
                w = model.joint_regressor[a.index]
                offset[k] = w @ template3
                basis[k] = np.einsum("v,vcb->cb", w, basis3)
        self.offset = offset.reshape(-1)
        self.basis = basis.reshape(-1, nb)

    def points(self, betas: np.ndarray) -> np.ndarray:
        pts = betas @ self.basis.T + self.offset
        return pts.reshape(betas.shape[0], len(self.anchors), 3)


def _validate_anchor(model, d: MeasurementDef, a: Anchor) -> None:
    if a.source == "vertex":
        if a.index >= model.num_vertices:
            raise InvalidArgumentError(
                f"measurement '{d.name}': vertex anchor {a.index} out of range "
                f"for a model with {model.num_vertices} vertices"
            )
    else:
        if model.joint_regressor is None:
            raise InvalidArgumentError(
                f"measurement '{d.name}': joint anchor used but the model has no joint regressor"
            )
        if a.index >= model.num_joints:
            raise InvalidArgumentError(
                f"measurement '{d.name}': joint anchor {a.index} out of range "
                f"for a model with {model.num_joints} joints"
            )


def _raw_values(spec: MeasurementSpec, local, pts: np.ndarray) -> np.ndarray:
    """Per-definition values for a batch of anchor point sets (n, A, 3)."""
    out = np.empty((pts.shape[0], len(spec.defs)))
    for i, (d, ids) in enumerate(zip(spec.defs, local)):
        p = pts[:, ids, :]
        if d.kind is Kind.DISTANCE:
            out[:, i] = np.linalg.norm(p[:, 1] - p[:, 0], axis=-1)
        elif d.kind is Kind.CIRCUMFERENCE:
            seg = np.roll(p, -1, axis=1) - p
            out[:, i] = np.linalg.norm(seg, axis=-1).sum(axis=1)
        else:
            ax = AXES[d.axis]
            out[:, i] = p[:, 1, ax] - p[:, 0, ax]
    return out


def _average_pairs(spec: MeasurementSpec, raw: np.ndarray) -> np.ndarray:
    out = np.empty((raw.shape[0], spec.num_outputs))
    for k, ids in enumerate(spec.slots):
        if len(ids) == 1:
            out[:, k] = raw[:, ids[0]]
        else:
            out[:, k] = 0.5 * (raw[:, ids[0]] + raw[:, ids[1]])
    return out


def measure_mesh(mesh: Mesh, spec: MeasurementSpec) -> np.ndarray:
    """Measurements (metres, length K) of an already evaluated mesh."""
    anchors = []
    lookup = {}
    local = []
    for d in spec.defs:
        ids = []
        for a in d.anchors:
            if a.source == "vertex" and a.index >= mesh.num_vertices:
                raise InvalidArgumentError(
                    f"measurement '{d.name}': vertex anchor {a.index} out of range "
                    f"for a mesh with {mesh.num_vertices} vertices"
                )
            if a.source == "joint" and (mesh.joints is None or a.index >= mesh.joints.shape[0]):
                raise InvalidArgumentError(
                    f"measurement '{d.name}': joint anchor {a.index} unavailable on this mesh"
                )
            if a not in lookup:
                lookup[a] = len(anchors)
                src = mesh.vertices if a.source == "vertex" else mesh.joints
                anchors.append(src[a.index])
            ids.append(lookup[a])
        local.append(np.asarray(ids))
    pts = np.asarray(anchors)[None]
    return _average_pairs(spec, _raw_values(spec, local, pts))[0]


def measure(model: LinearShapeModel, spec: MeasurementSpec, beta) -> np.ndarray:
    """Measurements of the T-pose body with coefficients ``beta``."""
    return measure_mesh(shape_to_vertices(model, beta), spec)


def measure_batch(model: LinearShapeModel, spec: MeasurementSpec, betas,
                  compiled: _Compiled | None = None) -> np.ndarray:
    """Row-wise ``measure`` for an (n, |beta|) array, evaluated on anchors only."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 2 or betas.shape[1] != model.num_coeffs:
        raise InvalidArgumentError(
            f"betas must have shape (n, {model.num_coeffs}), got {betas.shape}"
        )
    c = compiled if compiled is not None else _Compiled(model, spec)
    return _average_pairs(spec, _raw_values(spec, c.local, c.points(betas)))


def measurement_jacobian(model: LinearShapeModel, spec: MeasurementSpec, beta) -> np.ndarray:
    """Analytic d(measure)/d(beta), shape (K, |beta|)."""
    beta = _check_beta(model, beta)
    c = _Compiled(model, spec)
    nb = model.num_coeffs
    pts = c.points(beta[None])[0]
    dpts = c.basis.reshape(len(c.anchors), 3, nb)
    raw = np.zeros((len(spec.defs), nb))
    for i, (d, ids) in enumerate(zip(spec.defs, c.local)):
        if d.kind is Kind.AXIS_DIFFERENCE:
            ax = AXES[d.axis]
            raw[i] = dpts[ids[1], ax] - dpts[ids[0], ax]
            continue
        segments = [(ids[0], ids[1])] if d.kind is Kind.DISTANCE else list(zip(ids, np.roll(ids, -1)))
        for a, b in segments:
            diff = pts[b] - pts[a]
            length = np.linalg.norm(diff)
            if length <= SEGMENT_EPS:
                raise SingularityError(
                    f"measurement '{d.name}': zero-length segment between anchors "
                    f"{c.anchors[a]} and {c.anchors[b]}; derivative undefined"
                )
            raw[i] += (diff / length) @ (dpts[b] - dpts[a])
    return _average_pairs(spec, raw.T).T


# ---------------------------------------------------------------------------
# JSON I/O

def spec_to_dict(spec: MeasurementSpec) -> dict:
    defs = []
    for d in spec.defs:
        entry = {
            "name": d.name,
            "kind": d.kind.value,
            "anchors": [{a.source: a.index} for a in d.anchors],
        }
        if d.axis is not None:
            entry["axis"] = d.axis
        if d.pair_with is not None:
            entry["pair_with"] = d.pair_with
        defs.append(entry)
    return {"defs": defs, "output_names": list(spec.output_names)}


def _parse_anchor(raw, def_name: str) -> Anchor:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise FormatError(f"measurement '{def_name}': anchor must be {{\"vertex\": i}} or {{\"joint\": j}}, got {raw!r}")
    ((source, index),) = raw.items()
    if index is None:
        raise FormatError(f"measurement '{def_name}': anchor placeholder not filled in")
    try:
        return Anchor(source, index)
    except InvalidArgumentError as exc:
        raise FormatError(f"measurement '{def_name}': {exc}") from exc


def spec_from_dict(data: dict, source="<spec>") -> MeasurementSpec:
    if not isinstance(data, dict) or not isinstance(data.get("defs"), list):
        raise FormatError(f"{source}: spec must be an object with a 'defs' list")
    defs = []
    for k, entry in enumerate(data["defs"]):
        if not isinstance(entry, dict) or "name" not in entry:
            raise FormatError(f"{source}: definition #{k} has no name")
        name = entry["name"]
        for key in ("kind", "anchors"):
            if key not in entry:
                raise FormatError(f"{source}: measurement '{name}' is missing '{key}'")
        if not isinstance(entry["anchors"], list):
            raise FormatError(f"{source}: measurement '{name}': anchors must be a list")
        anchors = [_parse_anchor(a, name) for a in entry["anchors"]]
        try:
            defs.append(MeasurementDef(name, entry["kind"], anchors,
                                       entry.get("axis"), entry.get("pair_with")))
        except InvalidArgumentError as exc:
            raise FormatError(f"{source}: {exc}") from exc
    try:
        return MeasurementSpec(defs, data.get("output_names"))
    except InvalidArgumentError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def load_spec(path) -> MeasurementSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    return spec_from_dict(data, source=path)


def save_spec(spec: MeasurementSpec, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# ready-made specs

def _ring_at(part, frac: float) -> int:
    return min(len(part.rings) - 1, max(0, int(frac * len(part.rings))))


def _ring_waypoints(part, ring: int) -> list[Anchor]:
    return [VertexId(v) for v in part.rings[ring]]


def _ring_defs(prefix: str, part, ring: int, depth: bool = True):
    ext = part.ring_extremes(ring)
    out = [MeasurementDef(f"{prefix}_width", Kind.DISTANCE, [VertexId(ext["-x"]), VertexId(ext["+x"])])]
    if depth:
        out.append(MeasurementDef(f"{prefix}_depth", Kind.DISTANCE, [VertexId(ext["-z"]), VertexId(ext["+z"])]))
    out.append(MeasurementDef(f"{prefix}_circumference", Kind.CIRCUMFERENCE, _ring_waypoints(part, ring)))
    return out


def synthetic_spec(num_vertices: int) -> MeasurementSpec:
    """Measurement spec matching the ``body-like`` synthetic layout.

    Mixes widths, depths, circumferences, joint-based lengths and two
    axis differences; limb measurements come in averaged left/right pairs.
    """
    parts = {p.name: p for p in body_layout(num_vertices)}
    torso = parts["torso"]
    # joints: 3 per part (bottom, middle, top ring centroids) in layout order
    jidx = {name: 3 * k for k, name in enumerate(parts)}

    defs = []
    defs += _ring_defs("chest", torso, _ring_at(torso, 0.8))
    defs += _ring_defs("stomach", torso, _ring_at(torso, 0.5))
    defs += _ring_defs("hip", torso, _ring_at(torso, 0.15), depth=False)
    if len(parts) == 1:
        defs.append(MeasurementDef("height", Kind.AXIS_DIFFERENCE,
                                   [VertexId(torso.bottom_cap), VertexId(torso.top_cap)], axis="y"))
        defs.append(MeasurementDef("torso_length", Kind.DISTANCE,
                                   [JointId(jidx["torso"]), JointId(jidx["torso"] + 2)]))
        return MeasurementSpec(defs)

    defs.append(MeasurementDef("shoulder_width", Kind.AXIS_DIFFERENCE,
                               [JointId(jidx["right_arm"] + 2), JointId(jidx["left_arm"] + 2)], axis="x"))
    defs.append(MeasurementDef("height", Kind.AXIS_DIFFERENCE,
                               [VertexId(parts["left_leg"].bottom_cap), VertexId(torso.top_cap)], axis="y"))
    defs.append(MeasurementDef("torso_length", Kind.DISTANCE,
                               [JointId(jidx["torso"]), JointId(jidx["torso"] + 2)]))

    def paired(stem, kind, anchors_for):
        left, right = f"left_{stem}", f"right_{stem}"
        return [MeasurementDef(left, kind, anchors_for("left"), pair_with=right),
                MeasurementDef(right, kind, anchors_for("right"), pair_with=left)]

    def arm(side):
        return parts[f"{side}_arm"]

    def leg(side):
        return parts[f"{side}_leg"]

    defs += paired("arm_length", Kind.DISTANCE,
                   lambda s: [JointId(jidx[f"{s}_arm"]), JointId(jidx[f"{s}_arm"] + 2)])
    defs += paired("leg_length", Kind.DISTANCE,
                   lambda s: [JointId(jidx[f"{s}_leg"]), JointId(jidx[f"{s}_leg"] + 2)])
    defs += paired("calf_length", Kind.DISTANCE,
                   lambda s: [VertexId(leg(s).bottom_cap), JointId(jidx[f"{s}_leg"] + 1)])
    defs += paired("thigh_circumference", Kind.CIRCUMFERENCE,
                   lambda s: _ring_waypoints(leg(s), _ring_at(leg(s), 0.75)))
    defs += paired("calf_circumference", Kind.CIRCUMFERENCE,
                   lambda s: _ring_waypoints(leg(s), _ring_at(leg(s), 0.3)))
    defs += paired("bicep_circumference", Kind.CIRCUMFERENCE,
                   lambda s: _ring_waypoints(arm(s), _ring_at(arm(s), 0.75)))
    defs += paired("forearm_circumference", Kind.CIRCUMFERENCE,
                   lambda s: _ring_waypoints(arm(s), _ring_at(arm(s), 0.3)))
    return MeasurementSpec(defs)


def axis_difference_spec(model: LinearShapeModel, count: int, seed: int,
                         min_condition: float = 1e6) -> MeasurementSpec:
    """Random ``axis_difference``-only spec whose Jacobian has full row rank.

    Pairs of vertices and axes are redrawn until the (constant) Jacobian
    has condition number below ``min_condition``.
    """
    if count < 1 or count > model.num_coeffs:
        raise InvalidArgumentError(
            f"count must be in [1, {model.num_coeffs}] for a full-rank spec, got {count}"
        )
    rng = np.random.default_rng(seed)
    for _ in range(100):
        defs = []
        for k in range(count):
            a, b = rng.choice(model.num_vertices, size=2, replace=False)
            axis = "xyz"[int(rng.integers(3))]
            defs.append(MeasurementDef(f"d{k:02d}_{axis}", Kind.AXIS_DIFFERENCE,
                                       [VertexId(int(a)), VertexId(int(b))], axis=axis))
        spec = MeasurementSpec(defs)
        jac = measurement_jacobian(model, spec, np.zeros(model.num_coeffs))
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[-1] > 0 and sv[0] / sv[-1] < min_condition:
            return spec
    raise InvalidArgumentError("could not draw a well-conditioned axis_difference spec")


# Output slot names of a 23-measurement SMPL-style spec. Vertex and joint IDs
# must be filled in by the user for their model asset.
_SMPL_TEMPLATE = [
    ("chest_width", "distance", 2), ("chest_depth", "distance", 2),
    ("chest_circumference", "circumference", 3),
    ("stomach_width", "distance", 2), ("stomach_depth", "distance", 2),
    ("stomach_circumference", "circumference", 3),
    ("hip_width", "distance", 2), ("hip_depth", "distance", 2),
    ("hip_circumference", "circumference", 3),
    ("neck_circumference", "circumference", 3), ("head_circumference", "circumference", 3),
    ("shoulder_width", "distance", 2), ("torso_length", "distance", 2),
]
_SMPL_TEMPLATE_LIMBS = [
    ("upper_arm_length", "distance", 2), ("forearm_length", "distance", 2),
    ("bicep_circumference", "circumference", 3), ("forearm_circumference", "circumference", 3),
    ("wrist_circumference", "circumference", 3), ("thigh_length", "distance", 2),
    ("calf_length", "distance", 2), ("thigh_circumference", "circumference", 3),
    ("calf_circumference", "circumference", 3), ("ankle_circumference", "circumference", 3),
]


def smpl_spec_template() -> dict:
    """JSON-ready 23-output spec skeleton with ``null`` anchor placeholders.

    ``load_spec`` refuses the file until every placeholder is replaced by a
    vertex or joint index (lengths usually use joints, the rest vertices).
    Circumferences list three waypoints; add as many as needed.
    """
    defs = []
    for name, kind, n in _SMPL_TEMPLATE:
        src = "joint" if name.endswith("length") else "vertex"
        defs.append({"name": name, "kind": kind, "anchors": [{src: None} for _ in range(n)]})
    names = [n for n, _, _ in _SMPL_TEMPLATE]
    for stem, kind, n in _SMPL_TEMPLATE_LIMBS:
        src = "joint" if stem.endswith("length") else "vertex"
        for side, other in (("left", "right"), ("right", "left")):
            defs.append({"name": f"{side}_{stem}", "kind": kind,
                         "anchors": [{src: None} for _ in range(n)],
                         "pair_with": f"{other}_{stem}"})
        names.append(stem)
    return {"defs": defs, "output_names": names}
