import csv
import json

import numpy as np
import pytest

from evtol_tdrl import checkpoint
from evtol_tdrl.cli import main
from evtol_tdrl.errors import ContractViolation
from evtol_tdrl.metrics import AccuracyReport, accuracy, execute_normalized
from evtol_tdrl.transformer import (
    TrajectoryTransformer,
    TransformerConfig,
    load_model,
    save_model,
)
from evtol_tdrl.vehicle import VehicleConfig


def _controls(path, power, theta, n=400):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["P", "theta"])
        for _ in range(n):
            w.writerow([power, theta])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestAccuracy:
    def test_headline_values(self):
        assert accuracy(1740.0, 1693.0) == 1.0 - 47.0 / 1693.0
        assert round(accuracy(1740.0, 1693.0), 3) == 0.972
        assert round(accuracy(1759.0, 1693.0), 3) == 0.961
        assert accuracy(1693.0, 1693.0) == 1.0

    def test_symmetric_error(self):
        assert accuracy(1646.0, 1693.0) == accuracy(1740.0, 1693.0)

    def test_reference_must_be_positive(self):
        with pytest.raises(ContractViolation):
            accuracy(1.0, 0.0)

    def test_report(self):
        r = AccuracyReport.of(1759.0, 1693.0)
        assert r.to_dict() == {"e_generated": 1759.0, "e_reference": 1693.0, "ra": 1.0 - 66.0 / 1693.0}

    def test_execute_holds_last_action(self):
        run = execute_normalized(np.array([[0.0, 1.0]]), VehicleConfig())
        assert run.cause == "ground" and run.steps > 1


class TestCheckpoint:
    def test_roundtrip_bytes(self, tmp_path):
        m = TrajectoryTransformer(TransformerConfig(d_model=8, d_k=4, d_v=4, heads=2), seed=3)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(a, m, seed=3)
        m2, meta = load_model(a)
        save_model(b, m2, seed=3)
        assert a.read_bytes() == b.read_bytes()
        assert meta["config"]["d_model"] == 8
        for k, v in m.state_dict().items():
            assert np.array_equal(v, m2.state_dict()[k])

    def test_layout(self):
        blob = checkpoint.encode({"w": np.array([[1.0, 2.0]])}, {"seed": 1})
        assert blob[:8] == checkpoint.MAGIC
        n = int.from_bytes(blob[8:16], "little")
        header = json.loads(blob[16 : 16 + n])
        assert header["manifest"] == [{"name": "w", "shape": [1, 2]}]
        assert np.frombuffer(blob[16 + n :], "<f8").tolist() == [1.0, 2.0]

    def test_corrupt(self):
        blob = checkpoint.encode({"w": np.zeros(3)}, {})
        with pytest.raises(ContractViolation):
            checkpoint.decode(b"XXXXXXXX" + blob[8:])
        with pytest.raises(ContractViolation):
            checkpoint.decode(blob[:-8])


class TestCommands:
    def test_simulate_flat_wing_min_power_hits_ground(self, tmp_path, capsys):
        _controls(tmp_path / "c.csv", 180000.0, 1.5707963267948966)
        out = tmp_path / "log.csv"
        assert main(["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["termination_cause"] == "ground" and summary["steps"] < 20
        rows = _rows(out)
        assert rows[-1]["cause"] == "ground"
        manifest = json.loads((tmp_path / "log.csv.manifest.json").read_text())
        assert manifest["command"] == "simulate" and str(out) in manifest["outputs"]

    def test_evaluate_self_is_one(self, tmp_path, capsys):
        _controls(tmp_path / "c.csv", 300000.0, 0.3)
        log = tmp_path / "log.csv"
        main(["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(log)])
        capsys.readouterr()
        rep = tmp_path / "ra.json"
        assert main(["evaluate", "--trajectory", str(log), "--reference", str(log), "--out", str(rep)]) == 0
        assert json.loads(rep.read_text())["ra"] == 1.0

    def test_export_plots(self, tmp_path, capsys):
        _controls(tmp_path / "c.csv", 300000.0, 0.3)
        log = tmp_path / "log.csv"
        main(["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(log)])
        assert main(["export-plots", "--csv", str(log), "--out-dir", str(tmp_path / "p")]) == 0
        svg = (tmp_path / "p" / "trajectory_y_vs_x.svg").read_text()
        assert svg.startswith("<svg") and "<polyline" in svg
        assert (tmp_path / "p" / "speed_vx_vs_t.svg").exists()

    def test_usage_errors(self, tmp_path, capsys):
        assert main(["no-such-command"]) == 2
        assert main(["simulate", "--controls", "x.csv"]) == 2
        assert main(["train-sac", "--mode", "sideways", "--out", "a"]) == 2
        assert main(["simulate", "--controls", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv")]) == 3

    def test_bad_config_section(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"nonsense": {}}')
        _controls(tmp_path / "c.csv", 300000.0, 0.3)
        args = ["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(tmp_path / "o.csv"), "--config", str(cfg)]
        assert main(args) == 3

    def test_config_changes_vehicle(self, tmp_path, capsys):
        _controls(tmp_path / "c.csv", 200000.0, 0.0, n=50)
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"vehicle": {"eta": 0.7}}')
        main(["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(tmp_path / "a.csv")])
        main(["simulate", "--controls", str(tmp_path / "c.csv"), "--out", str(tmp_path / "b.csv"), "--config", str(cfg)])
        a = _rows(tmp_path / "a.csv")
        b = _rows(tmp_path / "b.csv")
        assert float(a[10]["y"]) > float(b[10]["y"])

    def test_optimize_ref_small_budget(self, tmp_path, capsys):
        out = tmp_path / "ref.json"
        assert main(["optimize-ref", "--verification", "--budget", "65", "--seed", "1", "--out", str(out),
                     "--controls-out", str(tmp_path / "ctrl.csv")]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["control"]["power"]) == 20 and doc["evaluations"] == 65
        # the exported controls replay through simulate with the same energy
        capsys.readouterr()
        main(["simulate", "--controls", str(tmp_path / "ctrl.csv"), "--out", str(tmp_path / "log.csv")])
        rows = _rows(tmp_path / "log.csv")
        if doc["feasible"]:
            assert float(rows[-1]["energy_Wh"]) == doc["energy_wh"]
        assert len(rows) >= 1
