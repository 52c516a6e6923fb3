"""Tests for cbcporo.cli commands."""

import argparse
import json
from pathlib import Path
from unittest.mock import patch

import pytest
import scipy.io

from cbcporo.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, cmd_export_mesh, cmd_nondim, main
from cbcporo.core.config import Experiment
from cbcporo.core.report import ResultTable


def experiment_args(**kwargs) -> argparse.Namespace:
    defaults = dict(config=None, out=None, format=None, mode=None, theta=None, tol=None, max_it=None, threads=None)
    return argparse.Namespace(**{**defaults, **kwargs})


@pytest.fixture
def unit_config(tmp_path: Path) -> Path:
    path = tmp_path / "unit.json"
    path.write_text(json.dumps({"nondim": {"presets": ["unit"]}}))
    return path


class TestMain:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == EXIT_OK
        assert "usage" in capsys.readouterr().out

    def test_unknown_option(self):
        with pytest.raises(SystemExit):
            main(["sweep", "--mode", "ilu"])

    def test_config_error_exits_one(self, tmp_path: Path, capsys):
        result = main(["sweep", "--config", str(tmp_path / "missing.json")])
        assert result == EXIT_ERROR
        assert "cbcporo: sweep error: config file not found" in capsys.readouterr().err


class TestExperimentCommands:
    def test_prints_report_to_stdout(self, unit_config: Path, capsys):
        result = cmd_nondim(experiment_args(config=str(unit_config)))
        assert result == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("scenario,group,min,max")
        assert "unit,Da," in out

    def test_writes_report(self, unit_config: Path, tmp_path: Path, capsys):
        out = tmp_path / "reports" / "nondim.json"
        result = main(["nondim", "--config", str(unit_config), "--out", str(out), "--format", "json"])
        assert result == EXIT_OK
        assert "nondim: 6 rows written to" in capsys.readouterr().out
        data = json.loads(out.read_text())
        assert data["experiment"] == "nondim"
        assert len(data["rows"]) == 6

    def test_markdown_format(self, unit_config: Path, capsys):
        assert main(["nondim", "--config", str(unit_config), "--format", "md"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("# nondim")

    def test_failures_exit_two(self, capsys):
        table = ResultTable("sweep", ["n"], meta={"failures": 3})
        table.add_row(n=4)
        with patch.dict("cbcporo.experiments.runner.HANDLERS", {Experiment.SWEEP: lambda cfg: table}):
            result = main(["sweep"])
        assert result == EXIT_NOT_CONVERGED
        captured = capsys.readouterr()
        assert "sweep: 3 cell(s) did not converge" in captured.err
        assert captured.out.startswith("n\n4")

    def test_overrides_reach_the_handler(self):
        seen = {}

        def handler(cfg):
            seen["cfg"] = cfg
            return ResultTable("qblock_cond", ["n"])

        with patch.dict("cbcporo.experiments.runner.HANDLERS", {Experiment.QBLOCK_COND: handler}):
            main(["qblock-cond", "--mode", "exact", "--theta", "0.5", "--tol", "1e-6", "--max-it", "7", "--threads", "3"])
        cfg = seen["cfg"]
        assert cfg.mode.value == "exact"
        assert cfg.qblock_theta == (0.5,)
        assert (cfg.tol, cfg.max_it, cfg.threads) == (1e-6, 7, 3)


class TestExportMesh:
    def test_writes_mesh(self, tmp_path: Path, capsys):
        out = tmp_path / "mesh.txt"
        args = argparse.Namespace(n=4, interface_x=0.5, regime="mixed", out=str(out), matrices=None)
        assert cmd_export_mesh(args) == EXIT_OK
        assert "Mesh saved:" in capsys.readouterr().out
        assert out.read_text().startswith("# cbcporo mesh v1")

    def test_writes_matrices(self, tmp_path: Path):
        mats = tmp_path / "mtx"
        result = main(["export-mesh", "2", "--out", str(tmp_path / "m.txt"), "--matrices", str(mats)])
        assert result == EXIT_OK
        for name in ("E", "B", "M_T", "M_TF", "M_F", "K", "T"):
            assert (mats / f"{name}.mtx").is_file()
        assert scipy.io.mmread(str(mats / "E.mtx")).shape == (50, 50)

    def test_bad_interface_exits_one(self, tmp_path: Path, capsys):
        result = main(["export-mesh", "3", "--out", str(tmp_path / "m.txt")])
        assert result == EXIT_ERROR
        assert "export-mesh error" in capsys.readouterr().err
