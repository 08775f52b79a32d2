import os
import tempfile
import pytest
from unittest.mock import patch

import pandas as pd

from arl_lab.cli import (
    CHECKPOINT_FILE, CURRENT_VERSION, EXIT_CONFIG, EXIT_RUNTIME, MANIFEST_FILE, METRICS_FILE,
    find_runs, load_experiment_data, main, run_name,
)
from arl_lab.config import parse_config
from arl_lab.datasets import load_csv, parse_schema
from arl_lab.errors import CheckpointError, DatasetError

FRONTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fronts")

SMALL_EXPERIMENT = """\
version: 1
dataset.kind: mixture
dataset.samplesPerComponent: 20
arl.variant: maxent
arl.alpha: 0.1
arl.epochs: 2
arl.batchSize: 16
arl.seed: 3
adversary.kind: logistic
adversary.maxEpochs: 3
adversary.patience: 2
"""


def write_experiment(temp_dir, text=SMALL_EXPERIMENT):
    path = os.path.join(temp_dir, "small.conf")
    with open(path, "w") as f:
        f.write(text)
    return path


class TestMainBasics:
    """Test top-level argument handling."""

    def test_version_flag(self, capsys):
        """Test --version."""
        main(["--version"])
        assert CURRENT_VERSION in capsys.readouterr().out

    def test_no_command_prints_help(self, capsys):
        """Test running without a subcommand."""
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == EXIT_CONFIG
        assert "usage" in capsys.readouterr().out

    def test_invalid_config_value(self, capsys):
        """Test that a bad config value exits with the config status."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = write_experiment(temp_dir, "arl.alpha: -1\n")
            with pytest.raises(SystemExit) as excinfo:
                main(["train", "--config", path, "--out", os.path.join(temp_dir, "run")])
        assert excinfo.value.code == EXIT_CONFIG
        assert "error: arl.alpha" in capsys.readouterr().out

    def test_bad_sweep_list(self, capsys):
        """Test an unparsable --alphas value."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = write_experiment(temp_dir)
            with pytest.raises(SystemExit) as excinfo:
                main(["train", "--config", path, "--alphas", "0.1,lots", "--out", os.path.join(temp_dir, "run")])
        assert excinfo.value.code == EXIT_CONFIG
        assert "--alphas" in capsys.readouterr().out

    def test_run_name(self):
        """Test sweep directory names."""
        assert run_name(0.5, 2) == "alpha-0.5_seed-2"


class TestGenData:
    """Test the gen-data command."""

    def test_writes_loadable_csv(self):
        """Test that the exported mixture loads through its own schema."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "data")
            main(["gen-data", "--seed", "1", "--samples-per-component", "50", "--out", out])
            frame = pd.read_csv(os.path.join(out, "mixture.csv"))
            data = load_csv(os.path.join(out, "mixture.csv"), parse_schema(os.path.join(out, "mixture.schema")))

        assert len(frame) == 200
        assert frame["split"].value_counts().to_dict() == {"train": 160, "test": 40}
        assert len(data) == 200
        assert data.input_dim == 2

    def test_existing_output_needs_force(self, capsys):
        """Test that a non-empty output directory is protected."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "data")
            os.makedirs(out)
            with open(os.path.join(out, "keep.txt"), "w") as f:
                f.write("x")
            with pytest.raises(SystemExit) as excinfo:
                main(["gen-data", "--out", out, "--samples-per-component", "5"])
            assert excinfo.value.code == EXIT_RUNTIME
            assert os.path.exists(os.path.join(out, "keep.txt"))

            main(["gen-data", "--out", out, "--samples-per-component", "5", "--force"])
            assert sorted(os.listdir(out)) == ["mixture.csv", "mixture.schema"]


class TestTrainAndAdversary:
    """Test training, sweeps and the post-hoc adversary end to end."""

    def test_single_run_then_adversary(self, capsys):
        """Test run artifacts and the trade-off row they produce."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = write_experiment(temp_dir)
            run_dir = os.path.join(temp_dir, "run")
            main(["train", "--config", config, "--out", run_dir, "-q"])
            assert sorted(os.listdir(run_dir)) == sorted([CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE])
            assert len(pd.read_csv(os.path.join(run_dir, METRICS_FILE))) == 2
            manifest = parse_config(os.path.join(run_dir, MANIFEST_FILE))
            assert manifest["arl.seed"] == 3

            main(["adversary", run_dir, "-q"])
            rows = pd.read_csv(os.path.join(run_dir, "adversary", "tradeoff.csv"))
            assert os.path.exists(os.path.join(run_dir, "adversary", "adversary-run.txt"))

        assert len(rows) == 1
        assert rows["variant"].iloc[0] == "maxent"
        assert 0.0 <= rows["adv_acc"].iloc[0] <= 100.0
        assert "Final epoch" in capsys.readouterr().out

    def test_sweep_layout(self):
        """Test one run directory per (alpha, seed)."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = write_experiment(temp_dir)
            out = os.path.join(temp_dir, "sweep")
            main(["train", "--config", config, "--out", out, "--alphas", "0,0.5", "--seeds", "1", "-q"])
            assert sorted(os.listdir(out)) == ["alpha-0.0_seed-1", "alpha-0.5_seed-1"]
            runs = find_runs(out)
            manifest = parse_config(os.path.join(out, "alpha-0.5_seed-1", MANIFEST_FILE))

        assert len(runs) == 2
        assert manifest["arl.alpha"] == 0.5
        assert manifest["arl.seed"] == 1

    def test_rerun_writes_identical_metrics(self):
        """Test that two runs of the same config produce byte-identical metric files."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = write_experiment(temp_dir)
            contents = []
            for name in ("first", "second"):
                run_dir = os.path.join(temp_dir, name)
                main(["train", "--config", config, "--out", run_dir, "-q"])
                with open(os.path.join(run_dir, METRICS_FILE), "rb") as f:
                    contents.append(f.read())

        assert contents[0] == contents[1]

    def test_missing_dataset_file_leaves_no_output(self, capsys):
        """Test a csv experiment whose training file does not exist."""
        with tempfile.TemporaryDirectory() as temp_dir:
            main(["gen-data", "--out", os.path.join(temp_dir, "data"), "--samples-per-component", "5"])
            config = write_experiment(temp_dir, "version: 1\ndataset.kind: csv\n"
                                                "dataset.schema: data/mixture.schema\n"
                                                "dataset.train: data/missing.csv\n")
            out = os.path.join(temp_dir, "run")
            with pytest.raises(SystemExit) as excinfo:
                main(["train", "--config", config, "--out", out, "-q"])
            assert excinfo.value.code == EXIT_CONFIG
            assert not os.path.exists(out)
        assert "missing.csv" in capsys.readouterr().out

    def test_failure_mid_sweep_leaves_no_output(self):
        """Test that a sweep whose second run cannot read its data keeps nothing."""
        def load_once(experiment):
            if experiment["arl.seed"] == 2:
                raise DatasetError("data file vanished")
            return load_experiment_data(experiment)

        with tempfile.TemporaryDirectory() as temp_dir:
            config = write_experiment(temp_dir)
            out = os.path.join(temp_dir, "sweep")
            with patch("arl_lab.cli.load_experiment_data", side_effect=load_once):
                with pytest.raises(SystemExit) as excinfo:
                    main(["train", "--config", config, "--out", out, "--seeds", "1,2", "-q"])
            assert excinfo.value.code == EXIT_RUNTIME
            assert not os.path.exists(out)
            assert os.listdir(temp_dir) == ["small.conf"]

    def test_adversary_config_only_retunes_the_attack(self, capsys):
        """Test that --config keeps each run's variant, alpha, seed and split."""
        with tempfile.TemporaryDirectory() as temp_dir:
            config = write_experiment(temp_dir)
            out = os.path.join(temp_dir, "sweep")
            main(["train", "--config", config, "--out", out, "--seeds", "1,2", "-q"])
            attack = write_experiment(temp_dir, "arl.variant: ml\narl.seed: 9\narl.alpha: 5\nadversary.maxEpochs: 1\n")
            capsys.readouterr()
            main(["adversary", out, "--config", attack, "-q"])
            rows = pd.read_csv(os.path.join(out, "adversary", "tradeoff.csv"))

        assert rows["seed"].tolist() == [1, 2]
        assert set(rows["variant"]) == {"maxent"}
        assert set(rows["alpha"]) == {0.1}
        assert capsys.readouterr().out.count("(1 epochs)") == 2

    def test_find_runs_without_checkpoints(self):
        """Test a directory holding no runs."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(CheckpointError):
                find_runs(temp_dir)


class TestDynamicsCommand:
    """Test the dynamics command."""

    def test_writes_grid_trajectory_and_report(self, capsys):
        """Test the three artifacts for a short run."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "dyn")
            main(["dynamics", "--variant", "maxent", "--alpha", "1", "--slice", "w3", "--start", "0.008,0.006,0",
                  "--steps", "100", "--grid-size", "3", "--out", out, "-q"])
            grid = pd.read_csv(os.path.join(out, "grid.csv"))
            trajectory = pd.read_csv(os.path.join(out, "trajectory.csv"))
            with open(os.path.join(out, "report.txt")) as f:
                report = f.read()

        assert len(grid) == 27
        assert trajectory["step"].iloc[-1] == 100
        assert (trajectory["w3"] == 0).all()
        assert "variant: maxent" in report
        assert "gridFile: grid.csv" in report
        assert "Origin verdict: inconclusive" in capsys.readouterr().out


class TestParetoCommand:
    """Test the pareto command."""

    def test_input_dir_with_patterns(self, capsys):
        """Test selecting the CIFAR-100 accuracy tables by pattern."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "front")
            main(["pareto", "--input-dir", FRONTS_DIR, "--include", "cifar100/accuracy_*.csv",
                  "--exclude", "*noprivacy*", "--out", out])
            frame = pd.read_csv(os.path.join(out, "front.csv"), comment="#")

        output = capsys.readouterr().out
        assert "objectives: target_acc:max,adv_acc:min" in output
        assert "hypervolume:" in output
        assert set(frame["variant"]) <= {"ml", "maxent"}
        assert len(frame) > 0

    @patch("arl_lab.cli.copy_to_clipboard")
    def test_copy_flag(self, mock_copy):
        """Test that -c hands the summary to the clipboard."""
        with tempfile.TemporaryDirectory() as temp_dir:
            main(["pareto", os.path.join(FRONTS_DIR, "cifar10", "entropy_ml.csv"),
                  "--objectives", "target_acc:max,adv_entropy:max", "--sensitive-classes", "10",
                  "--out", os.path.join(temp_dir, "front"), "-c"])
        mock_copy.assert_called_once()
        assert "points: 5" in mock_copy.call_args[0][0]

    def test_entropy_above_log_m(self, capsys):
        """Test that a too-small m is rejected."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(SystemExit) as excinfo:
                main(["pareto", os.path.join(FRONTS_DIR, "cifar100", "entropy_ml.csv"),
                      "--objectives", "target_acc:max,adv_entropy:max", "--sensitive-classes", "10",
                      "--out", os.path.join(temp_dir, "front")])
        assert excinfo.value.code == EXIT_CONFIG
        assert "exceeds" in capsys.readouterr().out

    def test_no_files(self, capsys):
        """Test running without any metric file."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(SystemExit) as excinfo:
                main(["pareto", "--out", os.path.join(temp_dir, "front")])
        assert excinfo.value.code == EXIT_CONFIG
