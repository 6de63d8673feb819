import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semshape.errors import FormatError, InvalidArgumentError, SingularityError
from semshape.measurements import (Kind, JointId, MeasurementDef, MeasurementSpec, VertexId,
                                   axis_difference_spec, load_spec, measure, measure_batch,
                                   measure_mesh, measurement_jacobian, pair_output_name,
                                   save_spec, smpl_spec_template, spec_from_dict,
                                   synthetic_spec)
from semshape.shape_model import LinearShapeModel, Mesh, generate_synthetic_model


def _points_model(points, nb=1):
    pts = np.asarray(points, dtype=float)
    return LinearShapeModel(pts.reshape(-1), np.zeros((pts.size, nb)))


def test_unit_distance():
    model = _points_model([[0, 0, 0], [1, 0, 0]])
    spec = MeasurementSpec([MeasurementDef("d", "distance", [VertexId(0), VertexId(1)])])
    assert measure(model, spec, [0.0]) == pytest.approx([1.0], abs=1e-15)


def test_square_circumference_closes_loop():
    model = _points_model([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    spec = MeasurementSpec([MeasurementDef("c", Kind.CIRCUMFERENCE, [VertexId(i) for i in range(4)])])
    assert measure(model, spec, [0.0])[0] == pytest.approx(4.0, abs=1e-15)


def test_pair_is_averaged():
    model = _points_model([[0, 0, 0], [0.30, 0, 0], [0, 1, 0], [0.34, 1, 0]])
    spec = MeasurementSpec([
        MeasurementDef("left_leg", "distance", [VertexId(0), VertexId(1)], pair_with="right_leg"),
        MeasurementDef("right_leg", "distance", [VertexId(2), VertexId(3)], pair_with="left_leg"),
    ])
    assert spec.output_names == ("leg",)
    assert measure(model, spec, [0.0])[0] == pytest.approx(0.32, abs=1e-15)


def test_axis_difference_is_signed():
    model = _points_model([[0, 2, 0], [5, 0.5, 0]])
    spec = MeasurementSpec([MeasurementDef("h", "AxisDifference", [VertexId(0), VertexId(1)], axis="y")])
    assert measure(model, spec, [0.0])[0] == pytest.approx(-1.5)


def test_joint_anchors(body_model, body_spec):
    sw = body_spec.slot_definitions(body_spec.index("shoulder_width"))[0]
    assert all(a.source == "joint" for a in sw.anchors)
    m = measure(body_model, body_spec, np.zeros(30))
    assert np.all(np.isfinite(m))


def test_batch_matches_single(body_model, body_spec):
    betas = np.random.default_rng(0).normal(0, 1.25, (20, 30))
    batch = measure_batch(body_model, body_spec, betas)
    single = np.array([measure(body_model, body_spec, b) for b in betas])
    assert np.allclose(batch, single, rtol=0, atol=1e-14)


def test_synthetic_spec_mixes_kinds(body_spec):
    kinds = {d.kind for d in body_spec.defs}
    assert kinds == {Kind.DISTANCE, Kind.CIRCUMFERENCE, Kind.AXIS_DIFFERENCE}
    assert any(d.pair_with for d in body_spec.defs)
    assert body_spec.num_outputs == 18
    assert len(synthetic_spec(30).output_names) == len(set(synthetic_spec(30).output_names))


# ---------------------------------------------------------------------------
# validation

def test_def_validation():
    with pytest.raises(InvalidArgumentError, match="at least 3"):
        MeasurementDef("c", "circumference", [VertexId(0), VertexId(1)])
    with pytest.raises(InvalidArgumentError, match="exactly 2"):
        MeasurementDef("d", "distance", [VertexId(0)])
    with pytest.raises(InvalidArgumentError, match="axis"):
        MeasurementDef("a", "axis_difference", [VertexId(0), VertexId(1)])
    with pytest.raises(InvalidArgumentError, match="axis is only valid"):
        MeasurementDef("d", "distance", [VertexId(0), VertexId(1)], axis="x")
    with pytest.raises(InvalidArgumentError, match="kind"):
        MeasurementDef("d", "geodesic", [VertexId(0), VertexId(1)])


def _d(name, pair=None, kind="distance"):
    n = 3 if kind == "circumference" else 2
    return MeasurementDef(name, kind, [VertexId(i) for i in range(n)], pair_with=pair)


def test_spec_validation():
    with pytest.raises(InvalidArgumentError, match="duplicate"):
        MeasurementSpec([_d("a"), _d("a")])
    with pytest.raises(InvalidArgumentError, match="unknown measurement 'zz'"):
        MeasurementSpec([_d("a", "zz")])
    with pytest.raises(InvalidArgumentError, match="not symmetric"):
        MeasurementSpec([_d("left_a", "right_a"), _d("right_a")])
    with pytest.raises(InvalidArgumentError, match="different kind"):
        MeasurementSpec([_d("left_a", "right_a"), _d("right_a", "left_a", "circumference")])
    with pytest.raises(InvalidArgumentError, match="collide"):
        MeasurementSpec([_d("left_a", "right_a"), _d("right_a", "left_a"), _d("a")])
    with pytest.raises(InvalidArgumentError, match="do not match"):
        MeasurementSpec([_d("a")], output_names=["b"])


def test_index_lists_valid_names(body_spec):
    with pytest.raises(InvalidArgumentError, match="valid names: chest_width"):
        body_spec.index("neck")


def test_pair_output_name():
    assert pair_output_name("left_calf_length", "right_calf_length") == "calf_length"
    assert pair_output_name("calf_l", "calf_r") == "calf"
    assert pair_output_name("foo", "bar") == "bar|foo"


def test_anchor_out_of_range_names_definition():
    model = _points_model([[0, 0, 0], [1, 0, 0]])
    spec = MeasurementSpec([MeasurementDef("far", "distance", [VertexId(0), VertexId(5)])])
    with pytest.raises(InvalidArgumentError, match="'far'"):
        measure(model, spec, [0.0])
    with pytest.raises(InvalidArgumentError, match="'far'"):
        measure_batch(model, spec, [[0.0]])


def test_joint_anchor_without_regressor():
    model = _points_model([[0, 0, 0], [1, 0, 0]])
    spec = MeasurementSpec([MeasurementDef("j", "distance", [JointId(0), VertexId(1)])])
    with pytest.raises(InvalidArgumentError, match="no joint regressor"):
        measure_batch(model, spec, [[0.0]])
    with pytest.raises(InvalidArgumentError, match="'j'"):
        measure(model, spec, [0.0])


# ---------------------------------------------------------------------------
# invariants

@st.composite
def _mesh_and_spec(draw):
    n = draw(st.integers(4, 12))
    v = draw(arrays(np.float64, (n, 3), elements=st.floats(-2, 2)))
    rng = np.random.default_rng(draw(st.integers(0, 10_000)))
    defs = []
    for k in range(4):
        ids = [VertexId(int(i)) for i in rng.choice(n, 3, replace=False)]
        defs.append(MeasurementDef(f"d{k}", "distance", ids[:2]))
        defs.append(MeasurementDef(f"c{k}", "circumference", ids))
        defs.append(MeasurementDef(f"a{k}", "axis_difference", ids[:2], axis="xyz"[k % 3]))
    return v, MeasurementSpec(defs)


@given(_mesh_and_spec(), arrays(np.float64, 3, elements=st.floats(-100, 100)))
def test_translation_invariance(ms, shift):
    v, spec = ms
    a = measure_mesh(Mesh(v), spec)
    b = measure_mesh(Mesh(v + shift), spec)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


@given(_mesh_and_spec(), st.floats(0.01, 100))
def test_scale_equivariance(ms, s):
    v, spec = ms
    a = measure_mesh(Mesh(v), spec)
    b = measure_mesh(Mesh(v * s), spec)
    assert np.allclose(b, s * a, rtol=1e-12, atol=1e-12)


@given(_mesh_and_spec())
def test_nonnegativity(ms):
    v, spec = ms
    m = measure_mesh(Mesh(v), spec)
    kinds = np.array([d.kind is not Kind.AXIS_DIFFERENCE for d in spec.defs])
    assert np.all(m[kinds] >= 0)


def _fd_jacobian(model, spec, beta, h=1e-6):
    cols = []
    for i in range(model.num_coeffs):
        e = np.zeros(model.num_coeffs)
        e[i] = h
        cols.append((measure(model, spec, beta + e) - measure(model, spec, beta - e)) / (2 * h))
    return np.array(cols).T


def _jacobian_cases(n=60):
    rng = np.random.default_rng(123)
    for k in range(n):
        profile = "body-like" if k % 2 == 0 else "random-smooth"
        nv = int(rng.choice([40, 90, 200]))
        nb = int(rng.integers(2, 9))
        model = generate_synthetic_model(k, nv, nb, profile)
        if profile == "body-like":
            spec = synthetic_spec(nv)
        else:
            defs = []
            for j in range(5):
                ids = [VertexId(int(i)) for i in rng.choice(nv, 4, replace=False)]
                defs += [MeasurementDef(f"d{j}", "distance", ids[:2]),
                         MeasurementDef(f"c{j}", "circumference", ids),
                         MeasurementDef(f"a{j}", "axis_difference", ids[2:], axis="xyz"[j % 3])]
            spec = MeasurementSpec(defs)
        yield model, spec, rng.normal(0, 1.25, nb)


def test_jacobian_matches_finite_differences():
    worst = 0.0
    count = 0
    for model, spec, beta in _jacobian_cases():
        jac = measurement_jacobian(model, spec, beta)
        worst = max(worst, np.max(np.abs(jac - _fd_jacobian(model, spec, beta))))
        count += 1
    assert count >= 50
    assert worst < 1e-6


def test_axis_difference_jacobian_is_constant_and_exact(small_model):
    spec = axis_difference_spec(small_model, 5, seed=1)
    rng = np.random.default_rng(0)
    j0 = measurement_jacobian(small_model, spec, np.zeros(8))
    m0 = measure(small_model, spec, np.zeros(8))
    for _ in range(20):
        beta = rng.normal(0, 2, 8)
        assert np.array_equal(measurement_jacobian(small_model, spec, beta), j0)
        assert np.allclose(measure(small_model, spec, beta), m0 + j0 @ beta, rtol=0, atol=1e-14)


def test_zero_basis_jacobian():
    model = _points_model([[0, 0, 0], [1, 0, 0], [0, 1, 0]], nb=3)
    spec = MeasurementSpec([MeasurementDef("c", "circumference", [VertexId(i) for i in range(3)])])
    assert np.array_equal(measurement_jacobian(model, spec, np.zeros(3)), np.zeros((1, 3)))


def test_jacobian_singular_segment():
    model = _points_model([[0, 0, 0], [0, 0, 0]])
    spec = MeasurementSpec([MeasurementDef("zero", "distance", [VertexId(0), VertexId(1)])])
    with pytest.raises(SingularityError, match="'zero'"):
        measurement_jacobian(model, spec, [0.0])


# ---------------------------------------------------------------------------
# JSON

def test_spec_round_trip_preserves_order(tmp_path, body_spec):
    save_spec(body_spec, tmp_path / "s.json")
    back = load_spec(tmp_path / "s.json")
    assert [d.name for d in back.defs] == [d.name for d in body_spec.defs]
    assert back.output_names == body_spec.output_names
    assert back.defs == body_spec.defs


@pytest.mark.parametrize("entry,pattern", [
    ({"name": "c", "kind": "circumference", "anchors": [{"vertex": 0}, {"vertex": 1}]}, "'c'"),
    ({"name": "p", "kind": "distance", "anchors": [{"vertex": 0}, {"vertex": 1}],
      "pair_with": "ghost"}, "'p'.*ghost"),
    ({"name": "x", "kind": "distance", "anchors": [{"vertex": None}, {"vertex": 1}]},
     "'x'.*placeholder"),
    ({"name": "y", "kind": "distance", "anchors": [{"bone": 1}, {"vertex": 1}]}, "'y'"),
])
def test_spec_load_errors_name_definition(tmp_path, entry, pattern):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"defs": [entry]}))
    with pytest.raises(FormatError, match=pattern):
        load_spec(path)


def test_spec_load_duplicate_and_malformed(tmp_path):
    d = {"name": "a", "kind": "distance", "anchors": [{"vertex": 0}, {"vertex": 1}]}
    with pytest.raises(FormatError, match="duplicate.*'a'"):
        spec_from_dict({"defs": [d, d]})
    path = tmp_path / "s.json"
    path.write_text("{")
    with pytest.raises(FormatError, match="byte offset"):
        load_spec(path)


def test_smpl_template_shape(tmp_path):
    tpl = smpl_spec_template()
    assert len(tpl["output_names"]) == 23
    pairs = [d for d in tpl["defs"] if "pair_with" in d]
    assert len(pairs) == 20 and len(tpl["defs"]) == 33
    # placeholders must be filled in before the template loads
    with pytest.raises(FormatError, match="placeholder"):
        spec_from_dict(tpl)
    filled = json.loads(json.dumps(tpl).replace("null", "0"))
    for d in filled["defs"]:
        for k, a in enumerate(d["anchors"]):
            a[next(iter(a))] = k
    spec = spec_from_dict(filled)
    assert spec.num_outputs == 23
