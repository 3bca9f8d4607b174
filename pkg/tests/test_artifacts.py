import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counterspec.artifacts import metadata, read_summary, read_table, to_jsonable, write_summary, write_table

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(-10 ** 9, 10 ** 9), floats, floats), min_size=0, max_size=20))
def test_table_round_trip_is_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("t") / "t.csv"
    write_table(path, ["step", "a", "b"], rows)
    back = read_table(path)
    assert list(back) == ["step", "a", "b"]
    for k, name in enumerate(["step", "a", "b"]):
        np.testing.assert_array_equal(back[name], np.array([r[k] for r in rows], dtype=float))


def test_table_rejects_bad_rows(tmp_path):
    with pytest.raises(ValueError):
        write_table(tmp_path / "x.csv", ["a", "b"], [[1.0]])
    with pytest.raises(ValueError):
        write_table(tmp_path / "y.csv", ["a"], [[math.inf]])
    assert not (tmp_path / "y.csv").exists()


def test_summary_round_trip(tmp_path):
    doc = {"x": np.array([1.0, 2.0]), "p": math.inf, "ok": np.bool_(True), "n": np.int64(3)}
    write_summary(tmp_path / "s.json", doc)
    assert read_summary(tmp_path / "s.json") == {"x": [1.0, 2.0], "p": "inf", "ok": True, "n": 3}
    assert to_jsonable((-math.inf, math.nan)) == ["-inf", "nan"]


def test_metadata_fields():
    meta = metadata({"a": 1}, backend="python")
    assert meta["config"] == {"a": 1} and meta["backend"] == "python"
    assert {"counterspec_version", "numpy_version", "python_version", "created"} <= set(meta)
