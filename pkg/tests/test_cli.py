import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcv import cli
from pcv import datafiles as df
from pcv.pricing import LifeTable
from pcv.synthetic import random_parameters, synthetic_panel

OBSERVED, FUTURE = 12, 4


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    params = random_parameters(np.random.default_rng(21), n=2, ell=2, p=1, l=1, noise_scale=0.02)
    data = synthetic_panel(params, OBSERVED + FUTURE, seed=22).data
    b, z = data.b_tilde.copy(), data.z.copy()
    b[OBSERVED:] = np.nan
    z[OBSERVED:] = np.nan
    data = replace(data, b_tilde=b, z=z)
    paths = df.write_panel(data, root, companies=["alpha", "beta"])
    df.write_parameters(params, root / "params.csv")
    table = LifeTable.from_mortality(40.0, np.linspace(0.01, 0.03, OBSERVED + FUTURE + 1))
    df.write_csv(root / "lifetable.csv", ["x", "t", "tpx"], table.rows())
    return {"root": root, "params": params, "data": data, **paths}


def _args(demo, *extra):
    base = ["--panel", str(demo["panel"]), "--macro", str(demo["macro"]), "--exog", str(demo["exog"]),
            "--params", str(demo["root"] / "params.csv"),
            "--lifetable", str(demo["root"] / "lifetable.csv")]
    return base + list(extra)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -------------------------------------------------------------------------
# files
# -------------------------------------------------------------------------

def test_panel_round_trip(demo, tmp_path):
    panel = df.read_panel(demo["panel"], demo["macro"], demo["exog"])
    assert panel.observed == OBSERVED and panel.companies == ["alpha", "beta"]
    data = demo["data"]
    assert np.array_equal(panel.data.b_tilde, data.b_tilde, equal_nan=True)
    assert np.array_equal(panel.data.z, data.z, equal_nan=True)
    assert np.array_equal(panel.data.pays_dividend, data.pays_dividend)
    assert np.array_equal(panel.data.delta_tilde[data.pays_dividend],
                          data.delta_tilde[data.pays_dividend])
    again = df.write_panel(panel.data, tmp_path, panel.companies)
    assert again["panel"].read_bytes() == demo["panel"].read_bytes()


def test_parameter_round_trip(demo, tmp_path):
    df.write_parameters(demo["params"], tmp_path / "p.csv")
    back = df.read_parameters(tmp_path / "p.csv")
    for name, block in demo["params"].blocks().items():
        assert np.array_equal(back.blocks()[name], block)


def test_blank_dividend_cell_means_no_dividend(tmp_path):
    (tmp_path / "panel.csv").write_text(
        "t,company,b_tilde,delta_tilde,pays_dividend\n1,a,0.1,,1\n2,a,0.2,-3.0,\n")
    (tmp_path / "macro.csv").write_text("t,z1\n1,0.01\n2,0.02\n")
    (tmp_path / "exog.csv").write_text("t,psi1\n1,1\n2,1\n")
    panel = df.read_panel(tmp_path / "panel.csv", tmp_path / "macro.csv", tmp_path / "exog.csv")
    assert panel.data.pays_dividend[:, 0].tolist() == [False, True]
    assert panel.data.delta_tilde[0, 0] == 0.0


def test_bad_cell_reports_its_line(tmp_path):
    (tmp_path / "panel.csv").write_text("t,company,b_tilde,delta_tilde,pays_dividend\n1,a,oops,,0\n")
    with pytest.raises(df.DataFileError) as err:
        df.read_panel(tmp_path / "panel.csv", tmp_path / "m.csv", tmp_path / "e.csv")
    assert err.value.line == 2 and "b_tilde" in str(err.value)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_number_format_round_trips(x):
    assert float(df.fmt(x)) == x


# -------------------------------------------------------------------------
# configuration
# -------------------------------------------------------------------------

settings_values = st.fixed_dictionaries({
    "seed": st.integers(0, 10**6),
    "tol": st.floats(1e-12, 1.0),
    "strike": st.lists(st.floats(0.01, 100.0), min_size=1, max_size=3),
    "accelerate": st.booleans(),
    "convention": st.sampled_from(["book", "price"]),
    "out": st.text(alphabet="abcxyz/_-.", min_size=1, max_size=12).filter(lambda s: s.strip() == s),
})


@given(settings_values)
def test_config_round_trips_through_its_canonical_text(values):
    cfg = cli.RunConfig({**cli.RunConfig.from_text("").values, **values})
    text = cfg.to_text()
    again = cli.RunConfig.from_text(text)
    assert again.values == cfg.values and again.to_text() == text


def test_command_line_beats_file_beats_defaults(tmp_path):
    (tmp_path / "run.cfg").write_text("seed = 5\npaths = 77  # comment\ntol = 1e-3\n")
    args = cli.build_parser().parse_args(["verify", "--config", str(tmp_path / "run.cfg"),
                                          "--seed", "9", "--set", "tol=1e-4"])
    cfg = cli.resolve_config(args)
    assert cfg["seed"] == 9 and cfg["paths"] == 77 and cfg["tol"] == 1e-4
    assert cfg["max_iter"] == cli.SETTINGS["max_iter"][1]


def test_unknown_setting_is_a_usage_error(capsys):
    assert cli.main(["verify", "--set", "colour=blue"]) == cli.EXIT_USAGE
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "colour" in err["message"]


# -------------------------------------------------------------------------
# commands
# -------------------------------------------------------------------------

def test_missing_file_gives_machine_readable_error(demo, tmp_path, capsys):
    code = cli.main(["smooth", "--panel", str(tmp_path / "none.csv"), "--macro", "m", "--exog", "e",
                     "--params", "p"])
    assert code == cli.EXIT_USAGE
    assert json.loads(capsys.readouterr().err)["path"].endswith("none.csv")


def test_domain_error_exit_code(demo, tmp_path, capsys):
    code = cli.main(_args(demo, "price-option", "--out", str(tmp_path), "--set", "maturity=14",
                          "--set", "strike=-1"))
    assert code == cli.EXIT_DOMAIN
    assert json.loads(capsys.readouterr().err)["command"] == "price-option"


def test_value_is_book_times_exp_smoothed_ratio(demo, tmp_path):
    assert cli.main(_args(demo, "smooth", "--out", str(tmp_path))) == 0
    assert cli.main(_args(demo, "value", "--out", str(tmp_path))) == 0
    smooth, value = _read(tmp_path / "smooth.csv"), _read(tmp_path / "value.csv")
    assert len(value) == 2 * (OBSERVED + 1)
    for s, v in zip(smooth, value):
        assert float(v["value"]) == pytest.approx(float(v["book"]) * math.exp(float(s["m_tilde"])),
                                                  rel=1e-14)


def test_option_report_satisfies_parity(demo, tmp_path):
    assert cli.main(_args(demo, "price-option", "--out", str(tmp_path), "--set", "maturity=15",
                          "--set", "strike=0.9,1.1")) == 0
    rows = _read(tmp_path / "option.csv")
    assert [r["company"] for r in rows] == ["alpha", "beta"]
    for r in rows:
        c, p, B, F, K = (float(r[k]) for k in ("call", "put", "bond", "forward", "strike"))
        assert abs(c - p - B * (F - K)) <= 1e-12


def test_pricing_beyond_the_supplied_rows_is_refused(demo, tmp_path, capsys):
    code = cli.main(_args(demo, "price-option", "--out", str(tmp_path),
                          "--set", f"maturity={OBSERVED + FUTURE + 1}", "--set", "strike=1"))
    assert code == cli.EXIT_USAGE
    capsys.readouterr()


@pytest.mark.parametrize("command", [
    ["smooth"], ["value"], ["forecast"], ["estimate", "--max-iter", "5"],
    ["price-option", "--set", "maturity=14", "--set", "strike=1"],
    ["price-insurance", "--set", "maturity=16", "--set", "product=ul_endow", "--set", "age=40",
     "--set", "G_star=0.9"],
    ["hedge", "--set", "maturity=6", "--set", "kind=call", "--set", "strike=1"],
    ["hedge", "--set", "maturity=6", "--set", "kind=seg_endow", "--set", "age=40",
     "--set", "G_star=1"],
    ["simulate", "--paths", "5", "--set", "horizon=4", "--seed", "3"],
])
def test_reruns_are_byte_identical(demo, tmp_path, command):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = _args(demo, *command, "--out", str(out))
        if command[0] == "estimate":
            args = [a for a in args if not a.endswith("params.csv") and a != "--params"]
        assert cli.main(args) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1] and outputs[0]


def test_forecast_covers_the_future_rows(demo, tmp_path):
    assert cli.main(_args(demo, "forecast", "--out", str(tmp_path))) == 0
    rows = _read(tmp_path / "forecast.csv")
    assert sorted({int(r["t"]) for r in rows}) == list(range(OBSERVED + 1, OBSERVED + FUTURE + 1))
    assert all(float(r["var"]) > 0 for r in rows)
