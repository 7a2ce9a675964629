import hashlib

import pytest

from windowabc.cli import RunConfig, UsageError, cmd_compare, cmd_fit, main, read_config_file

REGIME = "beta_i=0.6,beta_e=0.3,alpha=0.5,gamma=0.4,mu=0.02,n_pop=1e6,c_e=1,c_r=0.5,days={days}"
SMALL = ["--s-initial", "15", "--horizon", "5", "--n-particles", "30", "--n-generations", "2",
         "--log-level", "WARNING"]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def series_csv(tmp_path):
    out = tmp_path / "series.csv"
    assert main(["synth", "--regime", REGIME.format(days=30), "--output", str(out),
                 "--log-level", "WARNING"]) == 0
    return out


def test_fit_one_replicate(tmp_path, series_csv):
    out = tmp_path / "fit"
    rc = main(["fit", "--input", str(series_csv), "--region", "synthetic", "--output", str(out),
               "--replicates", "1", *SMALL])
    assert rc == 0
    assert sorted(p.name for p in out.iterdir()) == ["config.ini", "replicate_00", "summary.csv"]
    assert (out / "replicate_00" / "run.json").exists()


def test_fit_summary_is_reproducible(tmp_path, series_csv):
    args = ["fit", "--input", str(series_csv), "--region", "synthetic", "--replicates", "2", *SMALL]
    assert main([*args, "--output", str(tmp_path / "a")]) == 0
    assert main([*args, "--output", str(tmp_path / "b")]) == 0
    assert digest(tmp_path / "a" / "summary.csv") == digest(tmp_path / "b" / "summary.csv")
    header = (tmp_path / "a" / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("window,end_day,replicates,eps_fit_mean,eps_fit_std")


def test_worker_processes_do_not_change_results(tmp_path, series_csv):
    args = ["fit", "--input", str(series_csv), "--region", "synthetic", "--replicates", "2", *SMALL]
    assert main([*args, "--output", str(tmp_path / "serial")]) == 0
    assert main([*args, "--output", str(tmp_path / "pool"), "--workers", "2"]) == 0
    assert digest(tmp_path / "serial" / "summary.csv") == digest(tmp_path / "pool" / "summary.csv")


def test_config_snapshot_reproduces_run(tmp_path, series_csv):
    first = tmp_path / "first"
    assert main(["fit", "--input", str(series_csv), "--region", "synthetic",
                 "--output", str(first), "--seed", "5", *SMALL]) == 0
    second = tmp_path / "second"
    assert main(["fit", "--config", str(first / "config.ini"), "--output", str(second),
                 "--log-level", "WARNING"]) == 0
    assert digest(first / "summary.csv") == digest(second / "summary.csv")
    a = first / "replicate_00" / "posterior_1.csv"
    assert digest(a) == digest(second / "replicate_00" / "posterior_1.csv")


def test_flags_override_config_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\ninput = x.csv\nregion = A\nn-particles = 200\nseed = 3\n"
                   "[bounds]\nmu = 0, 0.05\n")
    values = read_config_file(ini)
    assert values["n_particles"] == 200 and values["bounds"]["mu"] == (0.0, 0.05)
    from windowabc.cli import build_parser, resolve_config

    args = build_parser().parse_args(["fit", "--config", str(ini), "--n-particles", "50"])
    cfg = resolve_config(args)
    assert cfg.n_particles == 50 and cfg.seed == 3
    assert cfg.param_bounds().to_dict()["mu"] == [0.0, 0.05]


def test_compare_identical_modes_gives_unit_ratios(tmp_path, series_csv, monkeypatch):
    # run PAST against itself by forcing both jobs to the same mode
    import windowabc.cli as cli

    real = cli._run_replicate
    monkeypatch.setattr(cli, "_run_replicate", lambda job: real((job[0], "past", job[2])))
    cfg = RunConfig(input=str(series_csv), region="synthetic", output=str(tmp_path / "cmp"),
                    s_initial=15, horizon=5, n_particles=30, n_generations=2)
    assert cmd_compare(cfg) == 0
    text = (tmp_path / "cmp" / "summary.txt").read_text()
    assert "fraction_above_one: 0\n" in text
    rows = (tmp_path / "cmp" / "ratios.csv").read_text().splitlines()[1:]
    assert rows and all(r.split(",")[5] == "1" for r in rows)


def test_compare_outputs(tmp_path, series_csv):
    out = tmp_path / "cmp"
    rc = main(["compare", "--input", str(series_csv), "--region", "synthetic", "--output", str(out),
               *SMALL])
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    assert {"flat", "past", "ratios.csv", "heatmap_flat.csv", "heatmap_past.csv",
            "summary.txt", "config.ini"} <= names
    assert "fraction_above_one:" in (out / "summary.txt").read_text()


def test_usage_errors_exit_one(tmp_path, series_csv, capsys):
    assert main(["fit", "--input", str(series_csv)]) == 1
    assert main(["fit", "--input", str(series_csv), "--region", "synthetic",
                 "--replicates", "0"]) == 1
    assert main(["fit", "--input", str(series_csv), "--region", "synthetic",
                 "--bound", "mu=oops"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["fit", "--no-such-flag"])
    assert info.value.code == 1
    assert main(["synth", "--regime", "beta_i=1", "--output", str(tmp_path / "x.csv")]) == 1


def test_runtime_errors_exit_two(tmp_path, series_csv, capsys):
    out = ["--output", str(tmp_path / "out")]
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--region", "A", *out,
                 "--log-level", "WARNING"]) == 2
    assert main(["fit", "--input", str(series_csv), "--region", "nowhere", *out, *SMALL]) == 2
    # too short for a 30-day first window plus horizon
    assert main(["fit", "--input", str(series_csv), "--region", "synthetic", *out,
                 "--log-level", "WARNING"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("windowabc:") for line in err)


def test_run_config_validation():
    with pytest.raises(UsageError):
        RunConfig(input="a", region="b", s_min=5)
    with pytest.raises(UsageError):
        RunConfig(input="a", region="b", mode="sideways")
    assert RunConfig(input="a", region="b", seed=4, replicates=3).replicate_seeds() == [4, 5, 6]


def test_cmd_fit_direct(tmp_path, series_csv):
    cfg = RunConfig(input=str(series_csv), region="synthetic", output=str(tmp_path / "o"),
                    s_initial=15, horizon=5, n_particles=30, n_generations=2, mode="flat")
    assert cmd_fit(cfg) == 0
    assert "mode = flat" in (tmp_path / "o" / "config.ini").read_text()
