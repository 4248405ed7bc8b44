import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlperim.gridgeom import GridSet, GridError
from nlperim.io import format_pbm, parse_pbm, write_set, read_set, write_csv, write_json


@settings(max_examples=50, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 40), st.integers(1, 40))))
def test_pbm_text_round_trip(u):
    text = format_pbm(u)
    np.testing.assert_array_equal(parse_pbm(text), u)
    assert all(len(line) < 70 for line in text.splitlines())


def test_set_round_trip_2d_and_3d(tmp_path):
    rng = np.random.default_rng(0)
    E = GridSet(rng.random((7, 9)) < 0.5, 0.125, origin=(-0.5, -1.0))
    p = tmp_path / "e.pbm"
    write_set(E, str(p))
    F = read_set(str(p))
    assert F == E and F.h == E.h and np.array_equal(F.origin, E.origin)
    first = p.read_bytes()
    write_set(F, str(p))
    assert p.read_bytes() == first
    E3 = GridSet(rng.random((3, 4, 5)) < 0.5, 0.5)
    write_set(E3, str(tmp_path / "c.pbm"))
    F3 = read_set(str(tmp_path / "c.pbm"))
    assert F3.shape == (3, 4, 5) and F3 == E3


def test_read_without_sidecar(tmp_path):
    p = tmp_path / "a.pbm"
    p.write_text("P1\n# comment\n3 2\n1 0 1\n0 1 0\n")
    E = read_set(str(p), h=0.5)
    assert E.h == 0.5
    np.testing.assert_array_equal(E.u, [[1, 0, 1], [0, 1, 0]])


@pytest.mark.parametrize("text", ["P4\n1 1\n1\n", "P1\nx 2\n", "P1\n2 2\n1 0 1\n", "P1\n1 1\n2\n", ""])
def test_malformed_pbm(text):
    with pytest.raises(GridError):
        parse_pbm(text)


def test_sidecar_shape_mismatch(tmp_path):
    p = tmp_path / "a.pbm"
    write_set(GridSet(np.ones((2, 2), bool)), str(p))
    (tmp_path / "a.json").write_text(json.dumps({"h": 1.0, "shape": [3, 3]}))
    with pytest.raises(GridError):
        read_set(str(p))


def test_csv_and_json(tmp_path):
    write_csv(str(tmp_path / "t.csv"), ["a", "b", "c", "d"], [[1, 0.1, True, "x"]])
    assert (tmp_path / "t.csv").read_text() == "a,b,c,d\n1,0.1,1,x\n"
    write_json(str(tmp_path / "t.json"), {"b": 1, "a": [1.5]})
    assert json.loads((tmp_path / "t.json").read_text()) == {"a": [1.5], "b": 1}
    assert (tmp_path / "t.json").read_text().index('"a"') < (tmp_path / "t.json").read_text().index('"b"')
