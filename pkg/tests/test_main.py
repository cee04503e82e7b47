import builtins
import json
import logging

import numpy as np
import pandas as pd
import pytest

import main


@pytest.fixture(autouse=True)
def _drop_print_handlers():
    yield
    root = logging.getLogger()
    for h in [h for h in root.handlers if isinstance(h, main.PrintHandler)]:
        root.removeHandler(h)


def _csv(path, array):
    np.savetxt(path, np.atleast_2d(array), delimiter=",", fmt="%.17g")
    return str(path)


def _toy(tmp_path, n=10, p=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X[:, 0] + 0.1 * rng.standard_normal(n)
    return _csv(tmp_path / "X.csv", X), _csv(tmp_path / "y.csv", y[:, None])


SIM_ARGS = ["--set", "n=60", "--set", "p=10", "--set", "sparsity=3", "--set", "k_min=1",
            "--set", "k_max=1", "--set", "replicates=1"]


def test_timestamped_print_injects_flush_and_parses_source():
    calls = []

    def fake_print(*args, **kwargs):
        calls.append((args, kwargs))

    tp = main._make_timestamped_print(fake_print)
    tp("[Scan] hello world")

    out = calls[-1][0][0]
    assert calls[-1][1].get("flush") is True
    assert "Scan" in out and "hello world" in out


def test_timestamped_print_headers():
    calls = []
    tp = main._make_timestamped_print(lambda *a, **k: calls.append(a[0]))

    tp("[Test] ERROR: boom")
    tp("[Simulate] WARNING: 3 replicate(s) not identifiable")
    assert "ERROR" in calls[0]
    assert "WARN" in calls[1]


def test_install_pretty_print_idempotent(monkeypatch):
    if hasattr(main.install_pretty_print, "_installed"):
        delattr(main.install_pretty_print, "_installed")

    monkeypatch.setattr(builtins, "print", lambda *a, **k: None)
    main.install_pretty_print()
    p1 = builtins.print
    main.install_pretty_print()
    assert builtins.print is p1


def test_print_handler_routes_library_logs(capsys):
    main.setup_logging("info")
    main.setup_logging("info")
    assert sum(isinstance(h, main.PrintHandler) for h in logging.getLogger().handlers) == 1

    logging.getLogger("Scan").warning("2 covariate(s) have an undefined relative error")
    assert "[Scan] WARNING: 2 covariate(s)" in capsys.readouterr().out


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "sim"
    assert main.main(["simulate", *SIM_ARGS, "--out", str(out)]) == 0

    est = pd.read_csv(out / "estimates.csv")
    assert list(est.columns) == ["scenario", "method", "k", "replicate", "alpha_hat", "flag"]
    assert len(est) == 2

    summary = pd.read_csv(out / "summary.csv")
    assert len(summary) == 2
    plot = pd.read_csv(out / "plot_independent.csv")
    assert list(plot.columns) == ["k", "cpc_mean", "cpc_lo", "cpc_hi", "psc_mean", "psc_lo", "psc_hi"]

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["n"] == 60
    assert "estimates.csv" in manifest["outputs"]


def test_simulate_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main.main(["simulate", *SIM_ARGS, "--out", str(a)])
    main.main(["simulate", *SIM_ARGS, "--out", str(b), "--threads", "4"])

    for name in ("estimates.csv", "summary.csv", "plot_independent.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_svg(tmp_path):
    out = tmp_path / "svg"
    assert main.main(["simulate", *SIM_ARGS, "--svg", "--out", str(out)]) == 0
    assert (out / "plot_independent.svg").read_text().lstrip().startswith("<?xml")


def test_simulate_config_file_digest(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("n = 60\np = 10\nsparsity = 3\nk_max = 2\nreplicates = 1\n", encoding="utf-8")
    out = tmp_path / "o"

    assert main.main(["simulate", "--config", str(conf), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["inputs"]["run.conf"]) == 64


def test_simulate_bad_config_value_exits_1(tmp_path):
    assert main.main(["simulate", "--set", "sparsity=0", "--out", str(tmp_path)]) == 1
    assert main.main(["simulate", "--set", "bogus=1", "--out", str(tmp_path)]) == 1


def test_simulate_missing_config_exits_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        main.main(["simulate", "--config", str(tmp_path / "missing.conf")])
    assert int(e.value.code) == 1


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as e:
        main.main(["scan"])
    assert int(e.value.code) == 1


def test_scan_toy(tmp_path):
    X, y = _toy(tmp_path)
    out = tmp_path / "scan"

    assert main.main(["scan", "--matrix", X, "--response", y, "-k", "2", "--out", str(out)]) == 0
    frame = pd.read_csv(out / "scan.csv")
    assert len(frame) == 5
    assert list(frame["j"]) == [1, 2, 3, 4, 5]

    hist = pd.read_csv(out / "histogram.csv")
    assert list(hist.columns) == ["metric", "bin_lo", "bin_hi", "count"]
    assert set(hist["metric"]) == {"abs_err", "rel_err"}


def test_scan_zero_response(tmp_path):
    X, _ = _toy(tmp_path)
    y = _csv(tmp_path / "zero.csv", np.zeros((10, 1)))

    assert main.main(["scan", "--matrix", X, "--response", y, "-k", "2", "--out", str(tmp_path / "z")]) == 0
    frame = pd.read_csv(tmp_path / "z" / "scan.csv")
    assert (frame["alpha_cpc"] == 0).all() and (frame["alpha_psc"] == 0).all()


def test_scan_dimension_mismatch_exits_2(tmp_path):
    X, _ = _toy(tmp_path)
    y = _csv(tmp_path / "short.csv", np.zeros((9, 1)))
    assert main.main(["scan", "--matrix", X, "--response", y, "--out", str(tmp_path)]) == 2


def test_constant_column_exits_2(tmp_path):
    M = np.random.default_rng(0).standard_normal((8, 3))
    M[:, 1] = 4.0
    X = _csv(tmp_path / "c.csv", M)
    assert main.main(["decompose", "--matrix", X, "--out", str(tmp_path)]) == 2


def test_test_command_reject_and_accept(tmp_path):
    X, y = _toy(tmp_path, n=200, p=6, seed=1)
    out = tmp_path / "t"

    rc = main.main(["test", "--matrix", X, "--response", y, "-k", "2", "--bound", "0", "--sigma", "0.1", "--out", str(out)])
    assert rc == 0
    row = pd.read_csv(out / "test.csv").iloc[0]
    assert bool(row["reject"]) is True
    assert row["quantile_family"] == "normal"
    assert row["N_source"] == "bound"

    zero = _csv(tmp_path / "zero.csv", np.zeros((200, 1)))
    rc = main.main(["test", "--matrix", X, "--response", zero, "-k", "2", "--bound", "0", "--sigma", "1", "--out", str(out)])
    assert rc == 0
    assert bool(pd.read_csv(out / "test.csv").iloc[0]["reject"]) is False


def test_test_command_estimated_sigma_and_truth(tmp_path):
    X, y = _toy(tmp_path, n=100, p=6, seed=2)
    beta = _csv(tmp_path / "beta.csv", np.array([[1.0], [0.0], [0.0], [0.0], [0.0], [0.0]]))
    out = tmp_path / "t"

    rc = main.main(["test", "--matrix", X, "--response", y, "-k", "1", "--truth-beta", beta,
                    "--estimate-sigma", "--dof-convention", "residual", "--out", str(out)])
    assert rc == 0
    row = pd.read_csv(out / "test.csv").iloc[0]
    assert row["quantile_family"] == "student(df=98)"
    assert row["N_source"] == "truth"


def test_test_command_reads_dof_convention_from_config(tmp_path):
    X, y = _toy(tmp_path, n=100, p=6, seed=2)
    conf = tmp_path / "test.conf"
    conf.write_text("dof_convention = residual\n", encoding="utf-8")
    common = ["test", "--matrix", X, "--response", y, "-k", "1", "--bound", "0", "--estimate-sigma"]

    assert main.main([*common, "--config", str(conf), "--out", str(tmp_path / "a")]) == 0
    assert pd.read_csv(tmp_path / "a" / "test.csv").iloc[0]["quantile_family"] == "student(df=98)"
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["dof_convention"] == "residual"
    assert "test.conf" in manifest["inputs"]

    assert main.main([*common, "--set", "dof_convention=residual", "--dof-convention", "sample",
                      "--out", str(tmp_path / "b")]) == 0
    assert pd.read_csv(tmp_path / "b" / "test.csv").iloc[0]["quantile_family"] == "student(df=99)"

    assert main.main([*common, "--set", "dof_convention=exact", "--out", str(tmp_path / "c")]) == 1


@pytest.mark.parametrize("command", ["scan", "test"])
def test_negative_k_exits_1(tmp_path, command):
    X, y = _toy(tmp_path)
    argv = [command, "--matrix", X, "--response", y, "-k", "-1", "--out", str(tmp_path)]
    if command == "test":
        argv += ["--bound", "0", "--sigma", "1"]
    with pytest.raises(SystemExit) as e:
        main.main(argv)
    assert int(e.value.code) == 1


def test_single_column_matrix_exits_2(tmp_path):
    X = _csv(tmp_path / "one.csv", np.array([[1.0], [2.0], [4.0]]))
    y = _csv(tmp_path / "y3.csv", np.array([[1.0], [0.0], [2.0]]))
    assert main.main(["scan", "--matrix", X, "--response", y, "-k", "0", "--out", str(tmp_path)]) == 2


def test_test_command_invalid_level_exits_1(tmp_path):
    X, y = _toy(tmp_path, n=50, p=4)
    rc = main.main(["test", "--matrix", X, "--response", y, "-k", "1", "--bound", "0", "--sigma", "1",
                    "--level", "1.5", "--out", str(tmp_path)])
    assert rc == 1


def test_test_command_not_identifiable_exits_3(tmp_path):
    _, y = _toy(tmp_path, n=20, p=4)
    M = np.random.default_rng(4).standard_normal((20, 3))
    # The last column duplicates the target, so the leave-one-out basis contains it.
    X = _csv(tmp_path / "dup.csv", np.column_stack([M, M[:, 0]]))
    rc = main.main(["test", "--matrix", X, "--response", y, "-k", "3", "--bound", "0", "--sigma", "1",
                    "--out", str(tmp_path)])
    assert rc == 3


def test_decompose_flat_spectrum(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.standard_normal((30, 4))
    q, _ = np.linalg.qr(a - a.mean(axis=0))
    X = _csv(tmp_path / "q.csv", q)
    out = tmp_path / "d"

    assert main.main(["decompose", "--matrix", X, "--out", str(out)]) == 0
    spec = pd.read_csv(out / "spectrum.csv")
    assert list(spec.columns) == ["index", "singular_value", "alignment", "cumulative_explained"]
    assert np.allclose(spec["singular_value"], 1.0, atol=1e-8)
    assert spec["cumulative_explained"].iloc[-1] == pytest.approx(1.0)


def test_decompose_exclude_out_of_range(tmp_path):
    X, _ = _toy(tmp_path)
    with pytest.raises(SystemExit) as e:
        main.main(["decompose", "--matrix", X, "--exclude", "9", "--out", str(tmp_path)])
    assert int(e.value.code) == 1


def test_decompose_structured_alignment(tmp_path):
    from simulation import gen_design

    X = gen_design("structured", 200, 20, seed=4)
    path = _csv(tmp_path / "s.csv", X.values)

    main.main(["decompose", "--matrix", path, "--out", str(tmp_path / "full")])
    main.main(["decompose", "--matrix", path, "--exclude", "1", "--out", str(tmp_path / "loo")])

    full = pd.read_csv(tmp_path / "full" / "spectrum.csv")
    loo = pd.read_csv(tmp_path / "loo" / "spectrum.csv")
    assert full["alignment"].abs().iloc[:2].max() > 0.99
    assert loo["alignment"].abs().iloc[:2].max() < 0.1
