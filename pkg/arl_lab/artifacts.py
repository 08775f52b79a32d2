import os
import shutil
import logging
import tempfile
from contextlib import contextmanager

import pathspec
import pyperclip

from .errors import OutputExistsError

logger = logging.getLogger(__name__)

METRIC_FILE_PATTERNS = ["*.csv"]


def create_pattern_spec(patterns):
    """Create a pathspec object from a list of glob patterns."""
    if not patterns or patterns == ["*"]:
        return None
    return pathspec.PathSpec.from_lines(pathspec.patterns.GitWildMatchPattern, patterns)


def matches_patterns(file_path, root_dir, pattern_spec):
    """Check if a file matches the given pattern spec."""
    if pattern_spec is None:
        return True  # No patterns means match all

    # Get relative path from root directory
    relative_path = os.path.relpath(file_path, root_dir)
    # Normalize path separators for cross-platform compatibility
    relative_path = relative_path.replace(os.sep, '/')

    return pattern_spec.match_file(relative_path)


def normalize_patterns(patterns):
    """Split comma-separated pattern strings and drop empty entries."""
    if isinstance(patterns, str):
        patterns = [p.strip() for p in patterns.split(",")]
    return [p for p in (patterns or []) if p and p.strip()]


def collect_metric_files(root_dir, include_patterns=None, exclude_patterns=None):
    """
    Metric CSVs under `root_dir` matching the include patterns (all CSVs by
    default) and none of the exclude patterns, in sorted relative-path order.
    """
    include_spec = create_pattern_spec(normalize_patterns(include_patterns) or METRIC_FILE_PATTERNS)
    exclude_spec = create_pattern_spec(normalize_patterns(exclude_patterns))
    csv_spec = create_pattern_spec(METRIC_FILE_PATTERNS)

    selected = []
    for dir_path, dir_names, file_names in os.walk(root_dir):
        dir_names.sort()
        for name in sorted(file_names):
            file_path = os.path.join(dir_path, name)
            if not matches_patterns(file_path, root_dir, csv_spec):
                continue
            if not matches_patterns(file_path, root_dir, include_spec):
                continue
            if exclude_spec is not None and matches_patterns(file_path, root_dir, exclude_spec):
                continue
            selected.append(file_path)
    logger.info("Selected %d metric file(s) under %s", len(selected), root_dir)
    return selected


@contextmanager
def staged_output(out_dir, force=False):
    """
    Yield a staging directory that replaces `out_dir` only when the block
    finishes without error. An existing non-empty `out_dir` needs `force`.
    """
    out_dir = os.path.abspath(out_dir)
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise OutputExistsError(f"{out_dir} already holds files; pass --force to overwrite")
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)

    staging = tempfile.mkdtemp(prefix=".staging-", dir=parent)
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if os.path.exists(out_dir):
        shutil.rmtree(out_dir)
    os.replace(staging, out_dir)


def save_to_file(output_path, content):
    """Save text content to a file."""
    with open(output_path, "w", encoding="utf-8") as f:
        f.write(content)


def copy_to_clipboard(content):
    """Copy the provided content to the clipboard."""
    try:
        pyperclip.copy(content)
        print("Summary copied to clipboard!")
    except pyperclip.PyperclipException as e:
        print(f"Failed to copy to clipboard: {e}")
