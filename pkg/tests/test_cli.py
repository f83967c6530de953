import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from warpsmooth import cli, smoothing as sm, microlocal as ml
from warpsmooth.geometry import ManifoldModel, RadialGrid

FAST = {
    "grid": {"n_points": 1023},
    "evolve": {"T": 0.05, "dt": 1e-3},
    "smoothing": {"k_list": [2, 4, 8, 16], "min_r2": -1e9,
                  "family": {"kind": "coherent", "x0": 3.0, "width": 0.3}},
    "resolvent": {"h_list": [0.25, 0.125, 0.0625, 0.03125, 0.015625], "min_r2": -1e9},
    "commutant": {"h_list": [0.0625, 0.03125, 0.015625], "garding_h_list": [0.0625, 0.03125]},
}


@pytest.fixture
def cfg_path(tmp_path):
    def make(extra=None, name="c.json"):
        d = json.loads(json.dumps(FAST))
        for k, v in (extra or {}).items():
            d.setdefault(k, {}).update(v)
        d["output"] = {"directory": str(tmp_path / "out")}
        p = tmp_path / name
        p.write_text(json.dumps(d))
        return p
    return make


def _files(tmp_path):
    out = tmp_path / "out"
    return sorted(p.name for p in out.iterdir()) if out.exists() else []


def test_manifold_happy_path(cfg_path, tmp_path, capsys):
    assert cli.main(["manifold", "--config", str(cfg_path())]) == 0
    names = _files(tmp_path)
    assert len(names) == 3 and all(n.startswith("manifold-") for n in names)
    rep = json.loads((tmp_path / "out" / names[1]).read_text())["report"]
    assert rep["all_valid"] and rep["profiles"]["A1"]["validation"]["ok"]
    assert rep["profiles"]["A1"]["trapping_lower_bound"] > 0
    svg = (tmp_path / "out" / names[2]).read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_same_config_is_byte_identical(cfg_path, tmp_path):
    p = cfg_path()
    assert cli.main(["commutant-test", "--config", str(p)]) == 0
    first = {n: (tmp_path / "out" / n).read_bytes() for n in _files(tmp_path)}
    for n in first:
        (tmp_path / "out" / n).unlink()
    assert cli.main(["commutant-test", "--config", str(p), "--jobs", "2"]) == 0
    second = {n: (tmp_path / "out" / n).read_bytes() for n in _files(tmp_path)}
    assert first == second


def test_empty_sweep_fails_fast(cfg_path, tmp_path, capsys):
    p = cfg_path({"smoothing": {"k_list": []}})
    assert cli.main(["smoothing-scan", "--config", str(p)]) == 2
    assert _files(tmp_path) == []
    assert "smoothing.k_list" in capsys.readouterr().err


@pytest.mark.parametrize("args,needle", [
    (["--set", "grid.n_points=255", "--set", "smoothing.k_list=[16,32,64,128]"], "dx^2"),
    (["--set", "commutant.h_tilde=0.1"], "h_tilde / h"),
    (["--set", "commutant.eps=0.1"], "4 eps"),
    (["--set", "resolvent.h_list=[0.5,0.25,0.2,0.1,0.05]"], "dyadic"),
    (["--set", "evolve.dt=1.0"], "dt"),
    (["--set", "nosuch.key=1"], "unknown config key"),
    (["--set", "grid"], "key=value"),
    (["--set", "output.formats=[\"png\"]"], "formats"),
])
def test_validation_errors(cfg_path, tmp_path, capsys, args, needle):
    assert cli.main(["all", "--config", str(cfg_path())] + args) == 2
    assert needle in capsys.readouterr().err
    assert _files(tmp_path) == []


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["manifold", "--config", str(tmp_path / "nope.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_numerical_failure_exit_code(cfg_path, tmp_path, capsys):
    p = cfg_path({"smoothing": {"min_r2": 1.5}})
    assert cli.main(["smoothing-scan", "--config", str(p)]) == 3
    assert "PoorFit" in capsys.readouterr().err
    assert _files(tmp_path) == []


def test_env_overrides_output_directory(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv("WARPSMOOTH_OUT", str(tmp_path / "env"))
    assert cli.main(["manifold", "--config", str(cfg_path())]) == 0
    assert len(list((tmp_path / "env").iterdir())) == 3
    assert _files(tmp_path) == []


def test_unwritable_output_cleans_up(cfg_path, tmp_path, capsys):
    (tmp_path / "out").write_text("a file, not a directory")
    assert cli.main(["manifold", "--config", str(cfg_path())]) == 2
    assert str(tmp_path / "out") in capsys.readouterr().err


def test_partial_write_is_removed(tmp_path, monkeypatch):
    files = {"a.json": "{}", "b.csv": "x", "c.svg": "<svg/>"}
    real_open = open

    def flaky(path, *a, **k):
        if str(path).endswith("c.svg"):
            raise OSError("disk full")
        return real_open(path, *a, **k)
    monkeypatch.setattr("builtins.open", flaky)
    with pytest.raises(OSError, match="disk full"):
        cli.emit_report(files, tmp_path / "o")
    monkeypatch.undo()
    assert list((tmp_path / "o").iterdir()) == []


def test_smoothing_report_is_module_output(cfg_path, tmp_path):
    """The CLI copies module results verbatim (no recomputed theory fields)."""
    p = cfg_path({"manifold": {"m1": None, "m2": None}})
    assert cli.main(["smoothing-scan", "--config", str(p)]) == 0
    name = [n for n in _files(tmp_path) if n.endswith(".json")][0]
    got = json.loads((tmp_path / "out" / name).read_text())["report"]
    model = ManifoldModel.flat()
    fam = sm.DataFamily("coherent", 3.0, 0.3)
    rep = sm.exponent_fit(model, fam, [2, 4, 8, 16], 0.05, RadialGrid(8.0, 1023),
                          sm.EvolveConfig(T=0.05), min_r2=-1e9)
    want = json.loads(cli.dumps(rep.to_dict()))
    assert got == want
    assert got["theory_exponent"] == sm.theory_exponent(None)


def test_theory_fields_come_from_modules(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setattr(ml, "commutator_scaling_test",
                        lambda *a, **k: ml.CommutatorReport([ml.CommutatorRecord(0.1, 0.5, 1.0, 1.0, 0.0, 0)],
                                                            1.0, 1.0, 0.0, 123.25, 0.0))
    assert cli.main(["commutant-test", "--config", str(cfg_path())]) == 0
    name = [n for n in _files(tmp_path) if n.endswith(".json")][0]
    rep = json.loads((tmp_path / "out" / name).read_text())["report"]
    assert rep["commutator"]["theory_slope"] == 123.25


def test_all_subcommand(cfg_path, tmp_path):
    p = cfg_path({"evolve": {"data": {"kind": "gaussian_coherent", "x0": 3.0, "width": 0.3, "k": 4}}})
    assert cli.main(["all", "--config", str(p), "--set", "output.formats=[\"json\",\"csv\"]"]) == 0
    names = _files(tmp_path)
    assert sum(n.endswith(".json") for n in names) == 6 and not any(n.endswith(".svg") for n in names)
    h = cli.load_config(p, ['output.formats=["json","csv"]']).hash()
    index = json.loads((tmp_path / "out" / f"all-{h}.json").read_text())
    assert set(index["reports"]) == {"manifold", "evolve", "smoothing-scan", "resolvent-scan", "commutant-test"}


def test_csv_is_rfc4180_with_17_digits(cfg_path, tmp_path):
    assert cli.main(["commutant-test", "--config", str(cfg_path())]) == 0
    name = [n for n in _files(tmp_path) if n.endswith(".csv")][0]
    raw = (tmp_path / "out" / name).read_bytes()
    assert raw.count(b"\r\n") == 4
    row = raw.split(b"\r\n")[1].decode().split(",")
    assert float(row[2]) == float(format(float(row[2]), ".17g"))


def test_set_parses_json_values():
    raw = {}
    cli.apply_override(raw, "smoothing.k_list=[8,16]")
    cli.apply_override(raw, "manifold.m1=null")
    cli.apply_override(raw, "output.directory=plain-text")
    assert raw == {"smoothing": {"k_list": [8, 16]}, "manifold": {"m1": None},
                   "output": {"directory": "plain-text"}}


@given(st.integers(1, 3), st.floats(0.05, 0.5), st.lists(st.sampled_from([8, 16, 32, 64]), max_size=4),
       st.booleans(), st.sampled_from(["quasimode", "coherent"]))
def test_config_roundtrip(m1, eps, ks, psi, kind):
    c = cli.ExperimentConfig.from_dict({"manifold": {"m1": m1}, "resolvent": {"eps": eps, "use_psi": psi},
                                        "smoothing": {"k_list": ks, "family": {"kind": kind}}})
    d = c.to_dict()
    again = cli.ExperimentConfig.from_dict(json.loads(json.dumps(d)))
    assert again == c and again.to_dict() == d and again.hash() == c.hash()
