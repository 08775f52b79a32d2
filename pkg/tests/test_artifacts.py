import os
import tempfile
import pytest
from unittest.mock import patch

import pyperclip

from arl_lab.artifacts import (
    collect_metric_files, copy_to_clipboard, create_pattern_spec, matches_patterns,
    normalize_patterns, save_to_file, staged_output,
)
from arl_lab.errors import OutputExistsError


def touch(root, relative):
    path = os.path.join(root, relative)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        f.write("target_acc,adv_acc\n")
    return path


class TestPatterns:
    """Test glob pattern handling."""

    def test_normalize_comma_separated(self):
        """Test splitting and trimming."""
        assert normalize_patterns(" a/*.csv , ,b.csv") == ["a/*.csv", "b.csv"]
        assert normalize_patterns(None) == []

    def test_match_all_without_patterns(self):
        """Test that no patterns or '*' selects everything."""
        assert create_pattern_spec([]) is None
        assert create_pattern_spec(["*"]) is None
        assert matches_patterns("/root/x/y.csv", "/root", None)

    def test_relative_matching(self):
        """Test that paths are matched relative to the root."""
        spec = create_pattern_spec(["runs/**/tradeoff.csv"])
        assert matches_patterns("/w/runs/a/adversary/tradeoff.csv", "/w", spec)
        assert not matches_patterns("/w/other/tradeoff.csv", "/w", spec)


class TestCollectMetricFiles:
    """Test metric file discovery."""

    def test_include_exclude_and_order(self):
        """Test selection and sorted output."""
        with tempfile.TemporaryDirectory() as temp_dir:
            touch(temp_dir, "b/tradeoff.csv")
            touch(temp_dir, "a/tradeoff.csv")
            touch(temp_dir, "a/metrics.csv")
            touch(temp_dir, "a/notes.txt")
            touch(temp_dir, "c/scratch/tradeoff.csv")

            everything = collect_metric_files(temp_dir)
            selected = collect_metric_files(temp_dir, "**/tradeoff.csv", "c/")

            assert [os.path.relpath(p, temp_dir) for p in everything] == [
                os.path.join("a", "metrics.csv"),
                os.path.join("a", "tradeoff.csv"),
                os.path.join("b", "tradeoff.csv"),
                os.path.join("c", "scratch", "tradeoff.csv"),
            ]
            assert [os.path.relpath(p, temp_dir) for p in selected] == [
                os.path.join("a", "tradeoff.csv"),
                os.path.join("b", "tradeoff.csv"),
            ]

    def test_include_cannot_select_non_csv(self):
        """Test that only CSV files are ever returned."""
        with tempfile.TemporaryDirectory() as temp_dir:
            touch(temp_dir, "a/notes.txt")
            assert collect_metric_files(temp_dir, "*.txt") == []


class TestStagedOutput:
    """Test atomic output directories."""

    def test_success_replaces_directory(self):
        """Test that staged files appear only after the block."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "out")
            with staged_output(out) as staging:
                save_to_file(os.path.join(staging, "report.txt"), "hello")
                assert not os.path.exists(out)
            assert os.listdir(out) == ["report.txt"]
            assert [n for n in os.listdir(temp_dir) if n.startswith(".staging-")] == []

    def test_failure_leaves_nothing_behind(self):
        """Test that an error discards the staging directory."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "out")
            with pytest.raises(RuntimeError):
                with staged_output(out) as staging:
                    save_to_file(os.path.join(staging, "partial.txt"), "x")
                    raise RuntimeError("boom")
            assert os.listdir(temp_dir) == []

    def test_non_empty_output_needs_force(self):
        """Test overwrite protection and --force."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "out")
            touch(out, "old.csv")
            with pytest.raises(OutputExistsError):
                with staged_output(out):
                    pass
            with staged_output(out, force=True) as staging:
                save_to_file(os.path.join(staging, "new.csv"), "x")
            assert os.listdir(out) == ["new.csv"]

    def test_empty_existing_directory_is_reused(self):
        """Test that an empty directory needs no --force."""
        with tempfile.TemporaryDirectory() as temp_dir:
            out = os.path.join(temp_dir, "out")
            os.makedirs(out)
            with staged_output(out) as staging:
                save_to_file(os.path.join(staging, "a.txt"), "x")
            assert os.listdir(out) == ["a.txt"]


class TestClipboard:
    """Test clipboard integration."""

    @patch("arl_lab.artifacts.pyperclip.copy")
    def test_copy_success(self, mock_copy, capsys):
        """Test a successful copy."""
        copy_to_clipboard("hypervolume: 0.5")
        mock_copy.assert_called_once_with("hypervolume: 0.5")
        assert "Summary copied to clipboard!" in capsys.readouterr().out

    @patch("arl_lab.artifacts.pyperclip.copy", side_effect=pyperclip.PyperclipException("no display"))
    def test_copy_failure(self, mock_copy, capsys):
        """Test that a missing clipboard is reported, not raised."""
        copy_to_clipboard("x")
        assert "Failed to copy to clipboard: no display" in capsys.readouterr().out
