"""File formats: exact float round trips and manifest headers."""

import json
import math

import numpy as np
from hypothesis import given, strategies as st

from amlpf.io import (
    format_float,
    format_value,
    make_manifest,
    read_csv,
    write_csv,
    write_json,
)


@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips_exactly(x):
    assert float(format_float(x)) == x


def test_format_float_17_digits():
    assert format_float(1.0 / 3.0) == "0.33333333333333331"


def test_format_value_types():
    assert format_value(7) == "7"
    assert format_value(np.int64(7)) == "7"
    assert format_value(True) == "1"
    assert format_value("abc") == "abc"
    assert float(format_value(np.float64(0.1))) == 0.1


def test_make_manifest_fields():
    m = make_manifest(42, "ff00", extra={"subcommand": "bench"})
    assert m["seed"] == 42
    assert m["config_sha256"] == "ff00"
    assert m["subcommand"] == "bench"
    assert "version" in m


def test_write_json_sorted_and_sanitized(tmp_path):
    path = tmp_path / "x.json"
    write_json(path, {"b": np.array([1.5, 2.5]), "a": np.int64(3)},
               manifest={"seed": 1})
    text = path.read_text()
    blob = json.loads(text)
    assert blob == {"a": 3, "b": [1.5, 2.5], "manifest": {"seed": 1}}
    assert text.index('"a"') < text.index('"b"') < text.index('"manifest"')


def test_csv_round_trip(tmp_path):
    path = tmp_path / "x.csv"
    rows = [[1, "pf", math.pi], [2, "mlpf", 1e-300]]
    write_csv(path, ["k", "name", "value"], rows, manifest={"seed": 9})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest ")
    assert json.loads(lines[0][len("# manifest "):]) == {"seed": 9}
    header, out = read_csv(path)
    assert header == ["k", "name", "value"]
    assert float(out[0][2]) == math.pi
    assert float(out[1][2]) == 1e-300


def test_write_csv_without_manifest(tmp_path):
    path = tmp_path / "plain.csv"
    write_csv(path, ["a"], [[1]])
    assert path.read_text() == "a\n1\n"


def test_read_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert read_csv(path) == ([], [])


def test_identical_payloads_are_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    payload = {"values": np.linspace(0, 1, 5), "n": 5}
    write_json(p1, payload, manifest={"seed": 3})
    write_json(p2, payload, manifest={"seed": 3})
    assert p1.read_bytes() == p2.read_bytes()
