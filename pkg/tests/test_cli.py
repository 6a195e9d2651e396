import json

import pytest

from biphoton.cli import main

PIPELINE_CONFIG = {
    "seed": 11,
    "source": {"pair_rate": 1e5, "tau_c": 4.4},
    "signal_detector": {"quantum_efficiency": 0.9, "jitter_sigma": 0.43},
    "idler_detector": {"quantum_efficiency": 0.9, "jitter_sigma": 0.43},
    "duty_cycle": {"load_duration_us": 500, "fwm_duration_us": 200,
                   "cycles": 2000},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One simulate -> correlate run shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.json"
    config.write_text(json.dumps(PIPELINE_CONFIG))
    stream = root / "run.tags"
    hist = root / "hist.csv"
    assert main(["simulate", "--config", str(config), "--out", str(stream)]) == 0
    assert main(["correlate", "--input", str(stream), "--out", str(hist)]) == 0
    return {"root": root, "config": config, "stream": stream, "hist": hist}


class TestPipeline:
    def test_simulate_writes_stream_and_manifest(self, workspace):
        manifest = json.loads(
            (workspace["root"] / "run.tags.manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["n_gates"] == 2000
        assert manifest["n_tags"] > 0
        assert len(manifest["config_sha256"]) == 64

    def test_correlate_writes_csv_and_sidecar(self, workspace):
        lines = workspace["hist"].read_text().splitlines()
        assert lines[0] == "bin_center_ns,counts,g2,g2_err"
        assert len(lines) == 286 + 1
        meta = json.loads((str(workspace["hist"]) + ".meta.json")
                          and (workspace["root"] / "hist.csv.meta.json").read_text())
        assert meta["bin_width_ns"] == 1.4
        assert meta["g_acc_per_bin"] > 0
        assert meta["duration_s"] == pytest.approx(0.4)

    def test_fit_recovers_source_parameters(self, workspace, capsys):
        report_path = workspace["root"] / "cross.json"
        code = main(["fit", "--input", str(workspace["hist"]),
                     "--model", "cross", "--out", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["converged"]
        assert report["params"]["tau_c"] == pytest.approx(4.4, abs=0.3)
        # Two detectors at 0.43 ns jitter add in quadrature to 0.61 ns.
        assert report["params"]["tau_d"] == pytest.approx(0.61, abs=0.1)
        assert report["coincidence_rate_hz"] > 0
        assert "converged" in capsys.readouterr().out

    def test_fit_residuals_csv(self, workspace):
        out = workspace["root"] / "cross2.json"
        res = workspace["root"] / "residuals.csv"
        assert main(["fit", "--input", str(workspace["hist"]), "--model",
                     "cross", "--out", str(out), "--residuals", str(res)]) == 0
        lines = res.read_text().splitlines()
        assert lines[0] == "x,observed,model,residual"
        assert len(lines) == 286 + 1

    def test_metrics_from_fit_report(self, workspace, capsys):
        report_path = workspace["root"] / "cross.json"
        assert main(["metrics", "--fit-report", str(report_path)]) == 0
        out = capsys.readouterr().out
        assert "bandwidth" in out
        assert "spectral brightness" in out

    def test_report_without_autos_marks_r_unavailable(self, workspace, capsys):
        assert main(["report", "--cross",
                     str(workspace["root"] / "cross.json")]) == 0
        out = capsys.readouterr().out
        assert "Cauchy-Schwarz R: unavailable" in out
        assert "bandwidth" in out

    def test_report_with_autos_computes_ratio(self, workspace, capsys):
        auto = {"params": {"g0": 0.22, "tau_c": 18.9, "tau_d": 9.77},
                "uncertainties": {"g0": 0.03, "tau_c": 2.7, "tau_d": 1.1}}
        auto_path = workspace["root"] / "auto.json"
        auto_path.write_text(json.dumps(auto))
        out_path = workspace["root"] / "summary.txt"
        assert main(["report", "--cross", str(workspace["root"] / "cross.json"),
                     "--auto-signal", str(auto_path),
                     "--auto-idler", str(auto_path),
                     "--out", str(out_path)]) == 0
        out = capsys.readouterr().out
        assert "Cauchy-Schwarz R = " in out
        assert "NON-CLASSICAL" in out
        assert out_path.read_text().strip() in out

    def test_seed_flag_overrides_config(self, workspace):
        other = workspace["root"] / "other.tags"
        assert main(["simulate", "--config", str(workspace["config"]),
                     "--seed", "12", "--out", str(other)]) == 0
        assert other.read_bytes() != workspace["stream"].read_bytes()

    def test_repeat_run_is_byte_identical(self, workspace):
        again = workspace["root"] / "again.tags"
        assert main(["simulate", "--config", str(workspace["config"]),
                     "--out", str(again)]) == 0
        assert again.read_bytes() == workspace["stream"].read_bytes()


class TestEdgeCases:
    def test_zero_cycles_gives_empty_stream(self, tmp_path, capsys):
        config = tmp_path / "empty.json"
        config.write_text(json.dumps(
            {"source": {"pair_rate": 1e5}, "duty_cycle": {"cycles": 0}}))
        stream = tmp_path / "empty.tags"
        assert main(["simulate", "--config", str(config),
                     "--out", str(stream)]) == 0
        assert "wrote 0 tags" in capsys.readouterr().out
        hist = tmp_path / "empty.csv"
        assert main(["correlate", "--input", str(stream),
                     "--out", str(hist)]) == 0

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"source": {"pair_rte": 1.0}}))
        code = main(["simulate", "--config", str(config),
                     "--out", str(tmp_path / "x.tags")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_corrupted_stream_exits_4(self, workspace, tmp_path, capsys):
        damaged = tmp_path / "damaged.tags"
        damaged.write_bytes(workspace["stream"].read_bytes()[:-3])
        code = main(["correlate", "--input", str(damaged),
                     "--out", str(tmp_path / "h.csv")])
        assert code == 4

    def test_missing_input_exits_3(self, tmp_path):
        code = main(["correlate", "--input", str(tmp_path / "nope.tags"),
                     "--out", str(tmp_path / "h.csv")])
        assert code == 3

    def test_fit_without_accidental_floor_exits_2(self, tmp_path):
        csv_path = tmp_path / "h.csv"
        csv_path.write_text("bin_center_ns,counts\n0.0,5\n1.0,3\n")
        code = main(["fit", "--input", str(csv_path), "--model", "cross",
                     "--out", str(tmp_path / "r.json")])
        assert code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


class TestSequenceCommand:
    def test_valid_duty_cycle_reports_layout(self, tmp_path, capsys):
        config = tmp_path / "seq.json"
        config.write_text(json.dumps(
            {"duty_cycle": {"load_duration_us": 500, "fwm_duration_us": 200,
                            "cycles": 3}}))
        out = tmp_path / "program.csv"
        assert main(["sequence", "--config", str(config),
                     "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "35 slots/cycle" in text
        assert "3 gate windows" in text
        assert out.read_text().startswith("slot,time_us,")

    def test_oversized_cycle_exits_2(self, tmp_path, capsys):
        config = tmp_path / "big.json"
        config.write_text(json.dumps(
            {"duty_cycle": {"load_duration_us": 500, "fwm_duration_us": 200},
             "hardware": {"ram_words": 10}}))
        assert main(["sequence", "--config", str(config)]) == 2


class TestODFitCommand:
    def test_scan_recovers_od(self, tmp_path, capsys):
        import numpy as np
        from biphoton.fitting import ModelKind, model_eval
        rng = np.random.default_rng(3)
        x = np.linspace(-60, 60, 121)
        y = model_eval(ModelKind.ABSORPTION_OD, np.array([20.0, 6.065, 0.0]), x)
        y = y * (1 + 0.01 * rng.standard_normal(len(x)))
        scan = tmp_path / "scan.csv"
        with open(scan, "w") as fh:
            fh.write("detuning_mhz,transmission\n")
            for xi, yi in zip(x, y):
                fh.write(f"{xi},{yi}\n")
        report_path = tmp_path / "od.json"
        assert main(["od-fit", "--input", str(scan), "--noise", "0.01",
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["params"]["od"] == pytest.approx(20.0, abs=0.5)
        assert report["atom_number"] == pytest.approx(5.5e7, rel=0.03)
        assert "atom number" in capsys.readouterr().out
