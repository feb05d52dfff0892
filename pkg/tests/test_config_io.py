import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from ifptk import presets
from ifptk.config import SCHEMA_VERSION, load_config
from ifptk.domain import Barrier, DensityField, SpatialGrid, TimeMesh
from ifptk.errors import DomainError
from ifptk.forward import solve_forward
from ifptk.io import read_table, write_estimate, write_history, write_json, write_summary
from ifptk.montecarlo import SurvivalEstimate


class TestLoadConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.lam == 1.0 and cfg.seed == 0
        assert cfg.build_grid().n_nodes == 2401
        assert cfg.build_mesh().dt == pytest.approx(1e-3)
        assert cfg.report_times() == [0.25, 0.5, 1.0]

    def test_overrides_skip_none(self):
        cfg = load_config(seed=7, threads=None)
        assert cfg.seed == 7 and cfg.threads == 1

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"grid": {"dx": 0.1, "bogus": 1}}))
        with pytest.raises(ValidationError):
            load_config(p)

    def test_bad_grid_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"grid": {"x_min": 1, "x_max": 0}}))
        with pytest.raises(ValidationError):
            load_config(p)

    def test_infinity_literal(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"barrier": {"kind": "constant", "value": -Infinity}}')
        assert load_config(p).barrier.value == -math.inf

    def test_paths_relative_to_config(self, tmp_path):
        (tmp_path / "sub").mkdir()
        t = np.linspace(0.0, 1.0, 11)
        (tmp_path / "sub" / "g.csv").write_text("t,G\n" + "".join(f"{a},{b}\n" for a, b in zip(t, np.exp(-t / 2))))
        p = tmp_path / "sub" / "c.json"
        p.write_text(json.dumps({"survival": {"kind": "csv", "path": "g.csv"}}))
        cfg = load_config(p)
        G = cfg.build_survival(cfg.build_grid(), cfg.build_mesh(), cfg.build_u0())
        assert G.value(1.0) == pytest.approx(math.exp(-0.5))

    def test_csv_kind_needs_path(self):
        cfg = load_config(barrier={"kind": "csv"})
        with pytest.raises(DomainError):
            cfg.build_barrier()

    def test_manifest_has_every_default(self):
        dump = load_config().manifest_dump()
        assert dump["pricing"]["theta"] == pytest.approx(1 / 3)
        assert dump["monte_carlo"]["n_paths"] == 100000
        assert SCHEMA_VERSION == 1

    def test_manifest_serializes_infinity(self):
        dump = load_config(barrier={"kind": "constant", "value": math.inf}).manifest_dump()
        assert dump["barrier"]["value"] == "Infinity"


class TestPresets:
    def test_barriers(self):
        mesh = TimeMesh(1.0, 4)
        np.testing.assert_allclose(presets.barrier("linear", mesh, value=1.0, slope=2.0).values, 1 + 2 * mesh.times)
        s = presets.barrier("sinusoidal", mesh, amplitude=0.3)
        np.testing.assert_allclose(s.values, 0.3 * np.sin(2 * np.pi * mesh.times), atol=1e-15)
        assert presets.barrier("plus_inf", mesh).values[0] == math.inf
        with pytest.raises(DomainError):
            presets.barrier("zigzag", mesh)

    def test_exponential_survival(self):
        G = presets.exponential_survival(0.5, 1.0, 2.0)
        assert G.value(2.0) == pytest.approx(math.exp(-1.0))


class TestIO:
    def test_read_table_skips_header_and_comments(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("# note\nx,y\n1,2\n# mid\n3,4\n")
        np.testing.assert_array_equal(read_table(p, 2), [[1, 2], [3, 4]])

    def test_read_table_column_count(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1,2,3\n")
        with pytest.raises(DomainError):
            read_table(p, 2)

    def test_read_table_garbage(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,x\n")
        with pytest.raises(DomainError):
            read_table(p, 2)

    def test_history_stride_keeps_last_row(self, tmp_path):
        grid = SpatialGrid(-3.0, 3.0, 7)
        mesh = TimeMesh(1.0, 5)
        h = solve_forward(DensityField.gaussian(grid), Barrier.constant(mesh, 0.0), mesh)
        write_history(tmp_path / "h.csv", h, stride=2)
        data = read_table(tmp_path / "h.csv", 8)
        np.testing.assert_allclose(data[:, 0], [0.0, 0.4, 0.8, 1.0])
        np.testing.assert_array_equal(data[-1, 1:], h.values[-1])

    def test_summary_columns(self, tmp_path):
        grid = SpatialGrid(-3.0, 3.0, 7)
        mesh = TimeMesh(1.0, 2)
        h = solve_forward(DensityField.gaussian(grid), Barrier.constant(mesh, -math.inf), mesh)
        write_summary(tmp_path / "s.csv", h)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "t,mass,min,max,argmax"
        assert float(lines[1].split(",")[4]) == 0.0

    def test_estimate_seed_comment(self, tmp_path):
        est = SurvivalEstimate(np.array([1.0]), np.array([0.5]), np.array([0.01]), 10)
        write_estimate(tmp_path / "e.csv", est, seed=42)
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "# seed=42"

    def test_json_numpy(self, tmp_path):
        write_json(tmp_path / "m.json", {"a": np.arange(3), "b": np.float64(1.5), "c": np.bool_(True)})
        assert json.loads((tmp_path / "m.json").read_text()) == {"a": [0, 1, 2], "b": 1.5, "c": True}

    def test_json_non_finite_as_strings(self, tmp_path):
        write_json(tmp_path / "m.json", {"x": [math.inf, -math.inf, math.nan], "y": np.float64(math.nan)})
        text = (tmp_path / "m.json").read_text()
        assert json.loads(text) == {"x": ["Infinity", "-Infinity", "NaN"], "y": "NaN"}


def test_manifest_config_round_trips(tmp_path):
    cfg = load_config(barrier={"kind": "constant", "value": -math.inf})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.manifest_dump()))
    assert load_config(p).barrier.value == -math.inf
