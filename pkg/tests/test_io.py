import json

import numpy as np
import pytest
from PIL import Image

from sinkbary.errors import DimensionMismatch, InvalidMeasure
from sinkbary.frank_wolfe import FWConfig, GridMinimize, BarycenterProblem, barycenter
from sinkbary.io import (
    rasterize,
    read_graph,
    read_image,
    read_measure,
    read_pgm,
    read_points,
    write_measure,
    write_pgm,
    write_trace,
)
from sinkbary.measure import dirac, image_to_measure, new_measure
from sinkbary.sinkhorn import SinkhornConfig


def test_measure_roundtrip(tmp_path, rng):
    m = new_measure(rng.random((5, 3)), rng.dirichlet(np.ones(5)))
    for ext in ("json", "csv"):
        p = tmp_path / f"m.{ext}"
        write_measure(str(p), m)
        assert read_measure(str(p)) == m


def test_json_uniform_default(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"dim": 2, "points": [[0, 0], [1, 1]]}))
    np.testing.assert_array_equal(read_measure(str(p)).weights, [0.5, 0.5])


def test_json_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"dim": 3, "points": [[0, 0]]}))
    with pytest.raises(DimensionMismatch):
        read_measure(str(p))
    p.write_text(json.dumps({"weights": [1]}))
    with pytest.raises(InvalidMeasure):
        read_measure(str(p))
    with pytest.raises(InvalidMeasure):
        read_measure(str(tmp_path / "m.txt"))


def test_csv_requires_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("0,0,1\n")
    with pytest.raises(InvalidMeasure):
        read_measure(str(p))
    p.write_text("x1,x2\n0,0\n")
    with pytest.raises(InvalidMeasure):
        read_measure(str(p))
    np.testing.assert_array_equal(read_points(str(p)), [[0.0, 0.0]])


def test_pgm_ascii_and_binary(tmp_path):
    img = np.array([[0, 10, 255], [7, 0, 3]])
    p2 = tmp_path / "a.pgm"
    p2.write_text("P2\n# comment\n3 2\n255\n0 10 255\n7 0 3\n")
    np.testing.assert_array_equal(read_pgm(str(p2)), img)
    p5 = tmp_path / "b.pgm"
    write_pgm(str(p5), img)
    np.testing.assert_array_equal(read_image(str(p5)), img)
    p5.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(InvalidMeasure):
        read_pgm(str(p5))


def test_png(tmp_path):
    img = np.array([[0, 50], [100, 200]], dtype=np.uint8)
    p = tmp_path / "i.png"
    Image.fromarray(img).save(p)
    np.testing.assert_array_equal(read_image(str(p)), img)


def test_render_center_dirac():
    # the box is centred on the atom, so it lands on the middle pixel
    out = rasterize(dirac((0.5, 0.5)), (3, 3), box=((0, 0), (1, 1)))
    expected = np.zeros((3, 3))
    expected[1, 1] = 255
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(rasterize(dirac((2.0, -1.0)), (3, 3)), expected)


def test_render_two_atoms():
    out = rasterize(new_measure([(0, 0), (1, 1)]), (4, 4))
    assert np.count_nonzero(out) == 2
    assert out[0, 0] == out[3, 3] == 255


def test_render_image_roundtrip():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (6, 9)).astype(float)
    img[img < 40] = 0
    s = 1.0 / 9
    m = image_to_measure(img, s)
    box = ((0.5 * s, 0.5 * s), ((9 - 0.5) * s, (6 - 0.5) * s))
    out = rasterize(m, img.shape, box)
    np.testing.assert_allclose(out, np.rint(img / img.max() * 255), atol=1)


def test_render_needs_2d():
    with pytest.raises(DimensionMismatch):
        rasterize(dirac((0, 0, 0)), (2, 2))


def test_trace_csv(tmp_path):
    problem = BarycenterProblem([dirac((0, 0)), dirac((1, 0))])
    seg = np.column_stack([np.linspace(0, 1, 11), np.zeros(11)])
    st = barycenter(problem, SinkhornConfig(0.1), FWConfig(iterations=3, objective_every=2,
                                                           minimize=GridMinimize(candidates=seg)))
    p = tmp_path / "t.csv"
    write_trace(str(p), st)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,objective,gap,x1,x2,sinkhorn_iters_total"
    assert len(lines) == 5
    rows = [line.split(",") for line in lines[1:]]
    assert [r[1] != "" for r in rows] == [True, False, True, True]
    assert rows[3][2:5] == ["", "", ""]
    totals = [int(r[-1]) for r in rows]
    assert totals == sorted(totals)


def test_graph_file(tmp_path):
    write_measure(str(tmp_path / "a.json"), dirac((0, 0)))
    (tmp_path / "g.json").write_text(json.dumps(
        {"vertices": 2, "edges": [[0, 1, 1.0]], "known": {"0": "a.json"}, "unknown": [1]}))
    g = read_graph(str(tmp_path / "g.json"))
    assert g.known[0] == dirac((0, 0)) and g.unknown == [1]
    (tmp_path / "h.json").write_text(json.dumps({"vertices": 2}))
    with pytest.raises(InvalidMeasure):
        read_graph(str(tmp_path / "h.json"))
