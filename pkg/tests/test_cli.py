import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from nsvar import cli
from nsvar.errors import ConfigError, DataError
from nsvar.var_core import ReducedFormParams, simulate_var

RESTRICTIONS = """\
[model]
variables = ["rate", "output"]
lags = 1
constant = true
date_column = "date"

[[narrative]]
kind = "shock_sign"
shock = "rate"
period = "2001-03"
sign = "+"
"""

TARGETS = """\
[[target]]
variable = "output"
shock = "rate"
horizons = [0, 3]

[[hypothesis]]
variable = "output"
shock = "rate"
horizon = 0
interval = [-10.0, 0.0]
"""


def write_dataset(path, T=80, seed=0):
    rng = np.random.default_rng(seed)
    params = ReducedFormParams.from_sigma(np.array([[0.1, 0.5, 0.1], [0.0, 0.2, 0.6]]),
                                          np.array([[1.0, 0.3], [0.3, 0.8]]), p=1, has_constant=True)
    Y, _ = simulate_var(params, T - 1, rng)
    dates = [f"{2000 + m // 12}-{m % 12 + 1:02d}" for m in range(T)]
    lines = ["date,rate,output,unused"]
    lines += [f"{d},{a:.6f},{b:.6f},x" for d, (a, b) in zip(dates, Y)]
    path.write_text("\n".join(lines) + "\n")
    return Y


@pytest.fixture
def workspace(tmp_path):
    write_dataset(tmp_path / "data.csv")
    (tmp_path / "restrictions.toml").write_text(RESTRICTIONS)
    (tmp_path / "targets.toml").write_text(TARGETS)
    return tmp_path


def run_args(ws, out="out", *extra):
    return ["run", "--data", str(ws / "data.csv"), "--config", str(ws / "restrictions.toml"),
            "--targets", str(ws / "targets.toml"), "--out", str(ws / out),
            "--phi-draws", "120", "--q-draws", "300", "--seed", "7", *extra]


# --------------------------------------------------------------------------
# data ingestion

def test_load_csv_columns_and_dates(workspace):
    loaded = cli.load_csv(workspace / "data.csv", ["output", "rate"], "date")
    assert loaded.variables == ["output", "rate"]
    assert loaded.dates[0] == "2000-01" and len(loaded.dates) == 80
    raw = np.genfromtxt(workspace / "data.csv", delimiter=",", skip_header=1, usecols=(2, 1))
    assert_allclose(loaded.data, raw)


def test_load_csv_log_transform(tmp_path):
    (tmp_path / "d.csv").write_text("a,b\n1,2.718281828459045\n2,1\n")
    loaded = cli.load_csv(tmp_path / "d.csv", log_columns=["b"])
    assert_allclose(loaded.data[:, 1], [1.0, 0.0])
    assert_allclose(loaded.data[:, 0], [1.0, 2.0])


@pytest.mark.parametrize("text,fragment", [
    ("a,b\n1,2\n3,x\n", "row 3, column 'b'"),
    ("a,b\n1,2\n3\n", "row 3 has 1 cells"),
    ("a,b\n1,nan\n", "row 2, column 'b'"),
    ("a,a\n1,2\n", "duplicate"),
    ("", "empty"),
])
def test_load_csv_errors_locate_cell(tmp_path, text, fragment):
    (tmp_path / "d.csv").write_text(text)
    with pytest.raises(DataError, match=fragment):
        cli.load_csv(tmp_path / "d.csv")


def test_load_csv_missing_column_and_bad_log(tmp_path):
    (tmp_path / "d.csv").write_text("a,b\n1,-2\n")
    with pytest.raises(DataError, match="not found"):
        cli.load_csv(tmp_path / "d.csv", ["a", "c"])
    with pytest.raises(DataError, match="row 2, column 'b'"):
        cli.load_csv(tmp_path / "d.csv", log_columns=["b"])
    with pytest.raises(DataError):
        cli.load_csv(tmp_path / "missing.csv")


# --------------------------------------------------------------------------
# targets

def test_parse_targets_resolves_names():
    targets, hyps = cli.parse_targets(TARGETS, ["rate", "output"])
    entry, i, j = targets[0]
    assert (i, j, entry.horizons) == (1, 0, (0, 3))
    assert hyps[0][0].interval == (-10.0, 0.0)


@pytest.mark.parametrize("text", [
    "",
    '[[target]]\nvariable = "gdp"\nshock = "rate"\n',
    '[[target]]\nvariable = "output"\nshock = "rate"\nhorizons = [3, 1]\n',
    '[[target]]\nvariable = "output"\nshock = "rate"\nextra = 1\n',
    '[[target]]\nvariable = "output"\nshock = "rate"\n[[hypothesis]]\nvariable = "output"\n'
    'shock = "rate"\ninterval = [1.0, 0.0]\n',
])
def test_parse_targets_errors(text):
    with pytest.raises(ConfigError):
        cli.parse_targets(text, ["rate", "output"])


def test_choose_algorithm():
    from nsvar.restrictions import HistDecomp, RestrictionSet, ShockSign
    linear = RestrictionSet(narrative=(ShockSign(0, 1),))
    assert cli.choose_algorithm("auto", linear, {0}) == "chebyshev"
    assert cli.choose_algorithm("auto", linear, {1}) == "mc"
    nonlinear = RestrictionSet(narrative=(HistDecomp(0, 0, 1),))
    assert cli.choose_algorithm("auto", nonlinear, {0}) == "mc"
    with pytest.raises(ConfigError):
        cli.choose_algorithm("chebyshev", nonlinear, {0})


# --------------------------------------------------------------------------
# end-to-end runs

def test_run_writes_report(workspace):
    assert cli.main(run_args(workspace)) == 0
    report = json.loads((workspace / "out" / "report.json").read_text())
    assert report["status"] == "ok" and report["algorithm"] == "chebyshev"
    assert report["config"]["lags"] == 1 and report["config"]["date_column"] == "date"
    assert "workers" not in report["config"]
    block = report["targets"][0]
    assert block["horizon"] == [0, 1, 2, 3]
    for lo, hi in zip(block["mean_l"], block["mean_u"]):
        assert lo <= hi
    region = block["robust_region"]["0.68"]
    assert all(lo <= hi for lo, hi in zip(region["lo"], region["hi"]))
    hyp = report["hypotheses"][0]
    assert 0.0 <= hyp["lower_prob"] <= hyp["upper_prob"] <= 1.0
    assert (workspace / "out" / "timing.json").exists()
    assert (workspace / "out" / "target_0_output_rate.csv").read_text().startswith("horizon,mean_l")


def test_run_byte_identical_and_worker_independent(workspace):
    assert cli.main(run_args(workspace, "a")) == 0
    first = (workspace / "a" / "report.json").read_bytes()
    assert cli.main(run_args(workspace, "a")) == 0
    assert first == (workspace / "a" / "report.json").read_bytes()
    assert cli.main(run_args(workspace, "c", "--workers", "3")) == 0
    parallel = json.loads((workspace / "c" / "report.json").read_text())
    serial = json.loads(first)
    assert parallel["config"].pop("out") != serial["config"].pop("out")
    assert parallel == serial


def test_mc_and_chebyshev_agree_roughly(workspace):
    assert cli.main(run_args(workspace, "cheb", "--algorithm", "chebyshev")) == 0
    assert cli.main(run_args(workspace, "mc", "--algorithm", "mc")) == 0
    cheb = json.loads((workspace / "cheb" / "report.json").read_text())["targets"][0]
    mc = json.loads((workspace / "mc" / "report.json").read_text())["targets"][0]
    # MC bounds sit inside the exact ones and close to them
    assert np.all(np.array(mc["mean_l"]) >= np.array(cheb["mean_l"]) - 1e-9)
    assert np.all(np.array(mc["mean_u"]) <= np.array(cheb["mean_u"]) + 1e-9)
    assert_allclose(mc["mean_l"], cheb["mean_l"], atol=0.05)


def test_standard_modes_agree_for_shock_sign(workspace):
    # a single shock-sign restriction has constant r = 1/2, so reweighting is a no-op up to resampling
    outs = {}
    for mode in ("standard_unconditional", "standard_conditional"):
        assert cli.main(run_args(workspace, mode, "--mode", mode, "--r-draws", "2000")) == 0
        outs[mode] = json.loads((workspace / mode / "report.json").read_text())["targets"][0]
    a, b = outs["standard_unconditional"], outs["standard_conditional"]
    assert_allclose(a["median"], b["median"], atol=0.15)
    assert "hpd" in a and a["horizon"] == [0, 1, 2, 3]


def test_cli_overrides_model_table(workspace):
    args = cli.build_parser().parse_args(run_args(workspace, "o", "--lags", "2", "--no-constant"))
    cfg = cli.config_from_args(args)
    assert cfg.lags == 2 and cfg.constant is False and cfg.date_column == "date"


def test_exit_code_config(workspace, capsys):
    (workspace / "bad.toml").write_text(RESTRICTIONS.split("[[narrative]]")[0] + '[[narrative]]\nkind = "shock_sign"\nshock = "nope"\nperiod = 3\n')
    args = run_args(workspace)
    args[args.index("--config") + 1] = str(workspace / "bad.toml")
    assert cli.main(args) == 2
    assert "configuration error" in capsys.readouterr().err


def test_exit_code_data(workspace, capsys):
    text = (workspace / "data.csv").read_text().splitlines()
    cells = text[5].split(",")
    cells[1] = "oops"
    text[5] = ",".join(cells)
    (workspace / "data.csv").write_text("\n".join(text) + "\n")
    assert cli.main(run_args(workspace)) == 3
    assert "row 6" in capsys.readouterr().err


def test_exit_code_zero_plausibility(tmp_path, capsys):
    # two shock-sign restrictions at the same period with opposite signs cannot both hold
    write_dataset(tmp_path / "data.csv")
    (tmp_path / "restrictions.toml").write_text(
        RESTRICTIONS + '\n[[narrative]]\nkind = "shock_sign"\nshock = "rate"\nperiod = "2001-03"\nsign = "-"\n')
    (tmp_path / "targets.toml").write_text(TARGETS)
    args = run_args(tmp_path)
    assert cli.main(args) == 4
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["status"] == "zero_plausibility" and report["plausibility"] == 0.0
    assert "zero plausibility" in capsys.readouterr().err


def test_invalid_settings_rejected(workspace):
    assert cli.main(run_args(workspace, "o", "--alpha", "1.5")) == 2
    assert cli.main(run_args(workspace, "o", "--q-draws", "10", "--max-q-attempts", "5")) == 2


# --------------------------------------------------------------------------
# lab subcommands

def read_curve(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def test_lab_likelihood(tmp_path):
    out = tmp_path / "lik.csv"
    assert cli.main(["lab", "likelihood", "--grid", "201", "--out", str(out)]) == 0
    curve = read_curve(out)
    assert len(curve) == 201
    assert len(np.unique(curve["value"])) == 2
    assert_allclose(curve["probability"], 0.5)


def test_lab_hellinger(tmp_path):
    out = tmp_path / "h.csv"
    assert cli.main(["lab", "hellinger", "--grid", "101", "--M", "20000", "--out", str(out)]) == 0
    curve = read_curve(out)
    k = np.nanargmin(curve["value"])
    from nsvar.bivariate_lab import true_theta
    assert abs(curve["theta"][k] - true_theta()) <= curve["theta"][1] - curve["theta"][0]


def test_lab_consistency(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["lab", "consistency", "--T", "10,100", "--replications", "20", "--out", str(out)]) == 0
    curve = read_curve(out)
    assert len(curve) == 40
    assert np.median(curve["width"][curve["T"] == 100]) < np.median(curve["width"][curve["T"] == 10])
    assert cli.main(["lab", "consistency", "--T", "0", "--out", str(out)]) == 2


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "nsvar", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "lab" in res.stdout
