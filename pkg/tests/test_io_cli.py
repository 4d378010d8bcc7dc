import csv
import json

import numpy as np
import pytest

from wassreg import Dataset, InputError, TimeGrid, test_global
from wassreg.cli import main
from wassreg.experiments import replicate_rng
from wassreg.io import emit_report, load_dataset, load_report, read_table, save_dataset
from wassreg.simulate import SimConfig, generate_dataset


def _sim(n=40, seed=0, **kw):
    cfg = SimConfig(n=n, grid_size=kw.pop("grid_size", 101), **kw)
    return generate_dataset(cfg, np.random.default_rng(seed)).data


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestDatasetFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        full = _sim(n=10, alpha=(0.3, -0.2), beta=(0.1, 0.4))
        d = Dataset(full.X[:3, :1], full.Q[:3], full.grid, full.q[:3], full.dq[:3])
        path = tmp_path / "d.csv"
        save_dataset(d, path)
        back = load_dataset(path)
        for a, b in ((d.X, back.X), (d.Q, back.Q), (d.q, back.q), (d.dq, back.dq),
                     (d.grid.points, back.grid.points)):
            assert a.tobytes() == b.tobytes()
        assert back.names == d.names

    def test_densities_optional(self, tmp_path):
        d = _sim(n=5)
        save_dataset(d, tmp_path / "d.csv", include_densities=False)
        back = load_dataset(tmp_path / "d.csv")
        assert back.q is None and back.dq is None

    def _write(self, path, header, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def test_shuffled_columns_rejected(self, tmp_path):
        self._write(tmp_path / "d.csv", ["x:a", "q:0", "q:0.6", "q:0.3", "q:1"],
                    [[0.1, 0, 1, 2, 3]])
        with pytest.raises(InputError, match="increasing"):
            load_dataset(tmp_path / "d.csv")

    def test_missing_endpoint_rejected(self, tmp_path):
        self._write(tmp_path / "d.csv", ["x:a", "q:0", "q:0.5", "q:0.9"], [[0.1, 0, 1, 2]])
        with pytest.raises(InputError, match="endpoints"):
            load_dataset(tmp_path / "d.csv")

    def test_bad_cell_reports_row(self, tmp_path):
        self._write(tmp_path / "d.csv", ["x:a", "q:0", "q:1"], [[0.1, 0, 1], [0.2, "oops", 1]])
        with pytest.raises(InputError, match="row 1"):
            load_dataset(tmp_path / "d.csv")

    def test_decreasing_row_rejected(self, tmp_path):
        self._write(tmp_path / "d.csv", ["x:a", "q:0", "q:1"], [[0.1, 2, 1]])
        with pytest.raises(InputError, match="decrease"):
            load_dataset(tmp_path / "d.csv")

    def test_raw_samples(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = []
        xs = rng.uniform(-0.5, 0.5, 50)
        for i, x in enumerate(xs):
            for v in rng.normal(x, 1.0, 300):
                rows.append([f"s{i}", x, v])
        self._write(tmp_path / "raw.csv", ["id", "x:dose", "value"], rows)
        d = load_dataset(tmp_path / "raw.csv", grid_size=201)
        assert d.n == 50 and d.p == 1 and d.names == ("dose",)
        assert d.Q.shape == (50, 201) and d.q.shape == (50, 201)
        np.testing.assert_allclose(d.X[:, 0], xs)
        assert np.all(np.diff(d.Q, axis=1) >= 0)
        assert np.all(np.abs(d.Q[:, 100] - xs) < 0.5)

    def test_raw_samples_too_small(self, tmp_path):
        self._write(tmp_path / "raw.csv", ["id", "x:a", "value"],
                    [["a", 0.0, float(v)] for v in range(10)])
        with pytest.raises(InputError, match="at least 20"):
            load_dataset(tmp_path / "raw.csv")


class TestReports:
    def test_report_round_trip(self, tmp_path):
        rep = test_global(_sim(n=60, alpha=(0.5, 0.5), beta=(0.5, 0.5)), R=2000, seed=3)
        emit_report(rep, tmp_path / "r.json")
        back = load_report(tmp_path / "r.json")
        assert back == rep
        assert json.loads((tmp_path / "r.json").read_text())["kind"] == "global"

    def test_list_requires_known_object(self, tmp_path):
        with pytest.raises(TypeError):
            emit_report(object(), tmp_path / "x")


def _cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture
def dataset_file(tmp_path):
    path = tmp_path / "data.csv"
    save_dataset(_sim(n=80, alpha=(0.4, 0.2), beta=(0.3, 0.1)), path)
    return path


class TestCli:
    def test_simulate_and_fit(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        assert _cli("simulate", "--n", 30, "--seed", 1, "--grid-size", 51,
                    "--coef", "0.5,0,0.2,0", "--output", out) == 0
        assert load_dataset(out).n == 30
        assert _cli("fit", "--input", out, "--output", tmp_path / "fit.csv",
                    "--at", "0.1,0.2") == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0 <= summary["r_squared"] <= 1
        header = _read_csv(tmp_path / "fit.csv")[0]
        assert header[0] == "t" and len(header) == 2

    def test_seed_required(self, dataset_file, tmp_path):
        for cmd in (["test-global"], ["band", "--at", "0,0"]):
            assert _cli(*cmd, "--input", dataset_file, "--output", tmp_path / "o") == 2
        assert _cli("simulate", "--output", tmp_path / "o") == 2

    def test_missing_input_file(self, tmp_path):
        assert _cli("test-global", "--input", tmp_path / "nope.csv", "--seed", 1,
                    "--output", tmp_path / "o") == 2

    def test_singular_design_exit_code(self, tmp_path):
        d = _sim(n=30)
        X = np.column_stack([d.X[:, 0], 2 * d.X[:, 0]])
        save_dataset(Dataset(X, d.Q, d.grid, d.q, d.dq), tmp_path / "s.csv")
        assert _cli("test-global", "--input", tmp_path / "s.csv", "--seed", 1,
                    "--output", tmp_path / "o.json") == 3

    def test_partial_bootstrap_unsupported(self, dataset_file, tmp_path):
        assert _cli("test-partial", "--input", dataset_file, "--partition", "x2",
                    "--method", "bootstrap", "--seed", 1, "--output", tmp_path / "o") == 4

    def test_test_global_report(self, dataset_file, tmp_path):
        out = tmp_path / "g.json"
        assert _cli("test-global", "--input", dataset_file, "--seed", 7, "--reps", 2000,
                    "--output", out) == 0
        rep = load_report(out)
        assert rep.kind == "global" and rep.seed == 7 and rep.replications == 2000

    def test_band_csv_sorted(self, dataset_file, tmp_path):
        out = tmp_path / "b.csv"
        assert _cli("band", "--input", dataset_file, "--at", "0.1,-0.1", "--seed", 2,
                    "--reps", 1000, "--output", out) == 0
        rows = read_table(out)
        assert list(rows[0]) == ["abscissa", "lower", "center", "upper", "standardization"]
        a = np.array([float(r["abscissa"]) for r in rows])
        assert np.all(np.diff(a) >= 0)
        lo, hi = (np.array([float(r[k]) for r in rows]) for k in ("lower", "upper"))
        assert np.all(lo <= hi)

    def test_density_band_cli(self, dataset_file, tmp_path):
        assert _cli("band", "--band", "density", "--input", dataset_file, "--at", "0,0",
                    "--seed", 2, "--reps", 1000, "--output", tmp_path / "d.csv") == 0

    def test_reproduce_table1_header(self, tmp_path):
        out = tmp_path / "t1.csv"
        assert _cli("reproduce", "table1", "--seed", 1, "--reps", 2, "--ns", "60",
                    "--xs", "0", "--output", out) == 0
        rows = _read_csv(out)
        assert rows[0] == ["band", "x", "linear_n60", "nonlinear_n60"]
        assert [r[0] for r in rows[1:]] == ["winf", "density"]

    @pytest.mark.parametrize("target,extra", [("fig2", ["--signals", "0,0.5", "--boot-reps", 49]),
                                              ("table1", ["--xs", "0,0.3"])])
    def test_reproduce_independent_of_workers(self, tmp_path, target, extra):
        outs = []
        for w in (1, 2):
            out = tmp_path / f"{target}_{w}.csv"
            assert _cli("reproduce", target, "--seed", 11, "--reps", 3, "--ns", "60",
                        "--workers", w, *extra, "--output", out) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_replicate_streams_are_distinct():
    a = replicate_rng(1, 0, 0, 0).random(4)
    b = replicate_rng(1, 0, 1, 0).random(4)
    c = replicate_rng(1, 0, 0, 0).random(4)
    assert not np.array_equal(a, b) and np.array_equal(a, c)
