"""Shared fixture repositories.

Fixtures are built programmatically so line numbers and token sets stay
exact; several tests assert on both.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest


def write_tree(root: Path, files: dict[str, str]) -> Path:
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    return root


def joined(lines: list[str]) -> str:
    return "\n".join(lines) + "\n"


# --- mini repo: 3 files x 25 lines -----------------------------------------

def build_mini_repo(root: Path) -> Path:
    files = {}
    for name in ("alpha", "beta", "gamma"):
        lines = [f"{name}_value_{i} = mix({name}_seed_{i}, {i})" for i in range(1, 26)]
        files[f"{name}.py"] = joined(lines)
    return write_tree(root, files)


@pytest.fixture()
def mini_repo(tmp_path: Path) -> Path:
    return build_mini_repo(tmp_path / "mini")


# --- motivating repo: an API invisible to the first retrieval round ---------
#
# The target file cuts at line 31, right before a call to
# run_bundle_alignment. The last 20 context lines (11..30) share no token
# with the file defining that API, so the first retrieval round cannot rank
# it; a canned draft that guesses the call brings the definition into round
# two. Distractor files overlap the context vocabulary just enough to fill
# the first round's top-k with positive scores.

MOTIVATING_TARGET = "studio/gallery_board.py"
MOTIVATING_API_FILE = "engine/alignment.py"
MOTIVATING_CUT_LINE = 31
MOTIVATING_GROUND_TRUTH = "run_bundle_alignment(board_specs, shade_totals)"
MOTIVATING_PREDICTION = "run_bundle_alignment(frame_batch, pose_seed, max_passes=9)"
MOTIVATING_QUALIFIED_API = "engine.alignment.run_bundle_alignment"

_ALIGNMENT_LINES = [
    "def run_bundle_alignment(frame_batch, pose_seed, max_passes=16, tolerance=0.000001):",
    '    """Refine pose_seed against frame_batch until drift sinks within tolerance."""',
    "    drift = tolerance + len(frame_batch)",
    "    refined = [pose_seed for _ in frame_batch]",
    "    return refined[:max_passes]",
    "",
    "",
    "def quick_alignment(frame_batch, pose_seed):",
    "    return run_bundle_alignment(frame_batch, pose_seed, max_passes=4)",
]

_TARGET_LINES = [
    '"""Mosaic gallery assembly: board rows, shading, banner layout."""',   # 1
    "from engine.alignment import run_bundle_alignment",                     # 2
    "from studio.palette import shade_lookup",                               # 3
    "",                                                                       # 4
    "FRAME_ROWS = 9",                                                         # 5
    "SEED_ROWS = 7",                                                          # 6
    "",                                                                       # 7
    'gallery_title = "atrium mosaics"',                                       # 8
    'gallery_motto = "color first"',                                          # 9
    "",                                                                       # 10
    "board_specs = []",                                                       # 11
    'board_specs.append(("mosaic", "amber", 2))',                             # 12
    'board_specs.append(("ribbon", "teal", 3))',                              # 13
    'board_specs.append(("lattice", "coral", 5))',                            # 14
    'banner_caption = "autumn showcase"',                                     # 15
    'shade_totals = {"amber": 11, "teal": 7}',                                # 16
    "corner_margin = 12",                                                     # 17
    "footer_margin = 8",                                                      # 18
    'headline_style = "bold"',                                                # 19
    'accent_style = "muted"',                                                 # 20
    'board_census = {"mosaic": 2, "ribbon": 3}',                              # 21
    "panel_gap = 6",                                                          # 22
    "trim_gap = 5",                                                           # 23
    "canvas_width = 720",                                                     # 24
    "canvas_height = 480",                                                    # 25
    'studio_notes = "arrange board rows via shading"',                        # 26
    "caption_text = banner_caption.upper()",                                  # 27
    "shade_map = shade_lookup(board_specs)",                                  # 28
    "frame_rows_doubled = FRAME_ROWS + FRAME_ROWS",                           # 29
    "seed_rows_doubled = SEED_ROWS + SEED_ROWS",                              # 30
    "run_bundle_alignment(board_specs, shade_totals)",                        # 31
    "",                                                                       # 32
    'gallery_manifest = {"title": gallery_title, "motto": gallery_motto}',    # 33
    'closing_caption = "end of tour"',                                        # 34
    'closing_style = "italic"',                                               # 35
    "final_gap = 2",                                                          # 36
    "final_margin = 3",                                                       # 37
    "display_total = canvas_width + canvas_height",                           # 38
    'archive_note = "rows archived via palette"',                             # 39
    'show_complete = "yes"',                                                  # 40
]

_PALETTE_LINES = [
    '"""Shading tables for the gallery builders."""',
    "",
    'SHADE_BASE = {"amber": 140, "teal": 150}',
    'SHADE_EDGE = {"coral": 160, "lattice": 170}',
    "",
    "",
    "def shade_lookup(spec_rows):",
    '    """Map spec rows onto shade codes."""',
    "    codes = {}",
    "    for row in spec_rows:",
    "        codes[row[0]] = SHADE_BASE.get(row[1], 101)",
    "    return codes",
    "",
    "",
    "def blend_codes(first_code, second_code):",
    "    mixed = min(first_code, second_code) + 40",
    "    bounded = max(mixed, 105)",
    "    return bounded",
    "",
    "",
    "def edge_code(label):",
    "    fallback = SHADE_EDGE.get(label, 115)",
    "    tinted = fallback + 25",
    '    notes = "autumn showcase palette"',
    "    return notes, tinted",
]

_BANNER_LINES = [
    '"""Banner rails and caption frames for the gallery hall."""',
    "",
    "RAIL_SPANS = [108, 112, 126]",
    'RAIL_LABELS = ("headline_style", "accent_style")',
    "",
    "",
    "def rail_offsets(spans):",
    "    offsets = []",
    "    for span in spans:",
    "        offsets.append(span + 14)",
    "    return offsets",
    "",
    "",
    "def caption_frame(width_units, height_units):",
    "    frame_area = width_units * height_units",
    "    corner_margin = 12",
    "    framed = frame_area + corner_margin",
    "    return framed",
    "",
    "",
    "def hall_notes():",
    '    motto_lines = ["bold banners", "muted rails"]',
    "    spacing_units = 117",
    "    footer_margin = 8",
    "    return motto_lines, spacing_units, footer_margin",
]

_TRIM_LINES = [
    '"""Trim rail measurements for display walls."""',
    "",
    "TRIM_UNITS = [104, 109, 121]",
    'WALL_CODES = {"lattice": 131, "coral": 137}',
    "",
    "",
    "def rail_lengths(units):",
    "    lengths = []",
    "    for unit in units:",
    "        lengths.append(unit * 11)",
    "    return lengths",
    "",
    "",
    "def wall_layout(codes):",
    "    layout_rows = sorted(codes)",
    '    autumn_label = "autumn"',
    '    showcase_label = "showcase"',
    "    return layout_rows, autumn_label, showcase_label",
    "",
    "",
    "def trim_summary():",
    '    summary_text = "lattice plus coral trim"',
    "    total_units = 143",
    '    accent_style = "muted"',
    "    return summary_text, total_units, accent_style",
]

_CENSUS_LINES = [
    '"""Census tallies for wall exhibits."""',
    "",
    "TALLY_BINS = [102, 118, 164]",
    'EXHIBIT_CODES = {"amber": 172, "teal": 183}',
    "",
    "",
    "def tally_exhibits(bins):",
    "    tallies = []",
    "    for entry in bins:",
    "        tallies.append(entry + 7)",
    "    return tallies",
    "",
    "",
    "def exhibit_styles():",
    '    styles = ("bold", "muted")',
    '    shade_totals = {"amber": 11}',
    "    return styles, shade_totals",
    "",
    "",
    "def census_caption():",
    '    caption = "autumn wall census"',
    "    corner_margin = 12",
    "    rows_counted = 157",
    "    footer_margin = 8",
    "    return caption, rows_counted, footer_margin",
]


def build_motivating_repo(root: Path) -> Path:
    return write_tree(
        root,
        {
            MOTIVATING_API_FILE: joined(_ALIGNMENT_LINES),
            MOTIVATING_TARGET: joined(_TARGET_LINES),
            "studio/palette.py": joined(_PALETTE_LINES),
            "studio/banner_kit.py": joined(_BANNER_LINES),
            "studio/trim_rails.py": joined(_TRIM_LINES),
            "studio/census_kit.py": joined(_CENSUS_LINES),
        },
    )


@pytest.fixture(scope="session")
def motivating_repo(tmp_path_factory) -> Path:
    return build_motivating_repo(tmp_path_factory.mktemp("motivating") / "gallery")


# --- mathkit repo: executable function-completion fixture -------------------

_OPS_LINES = [
    '"""Small numeric helpers used by the check scripts."""',  # 1
    "",                                                         # 2
    "def clamp_value(value, low, high):",                       # 3
    "    if value < low:",                                      # 4
    "        return low",                                       # 5
    "    if value > high:",                                     # 6
    "        return high",                                      # 7
    "    return value",                                         # 8
    "",                                                         # 9
    "",                                                         # 10
    "def scale_series(values, factor):",                        # 11
    "    scaled = []",                                          # 12
    "    for item in values:",                                  # 13
    "        scaled.append(item * factor)",                     # 14
    "    return scaled",                                        # 15
    "",                                                         # 16
    "",                                                         # 17
    "def series_mean(values):",                                 # 18
    "    total = sum(values)",                                  # 19
    "    count = len(values)",                                  # 20
    "    return total / count",                                 # 21
]

_CHECK_TEMPLATE = """import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from mathkit.ops import {func}

{asserts}
print("ok")
"""

_CHECKS = {
    "clamp_value": (
        "check_clamp.py",
        "assert clamp_value(5, 0, 10) == 5\n"
        "assert clamp_value(-2, 0, 10) == 0\n"
        "assert clamp_value(99, 0, 10) == 10",
    ),
    "scale_series": (
        "check_scale.py",
        "assert scale_series([1, 2, 3], 2) == [2, 4, 6]\n"
        "assert scale_series([], 5) == []",
    ),
    "series_mean": (
        "check_mean.py",
        "assert series_mean([2, 4, 6]) == 4",
    ),
}

MATHKIT_SPANS = {
    "mathkit.ops.clamp_value": (4, 8),
    "mathkit.ops.scale_series": (12, 15),
    "mathkit.ops.series_mean": (19, 21),
}


def build_mathkit_repo(root: Path) -> tuple[Path, dict[str, str]]:
    files = {
        "mathkit/__init__.py": '"""Numeric helper package."""\n',
        "mathkit/ops.py": joined(_OPS_LINES),
    }
    test_map = {}
    for func, (script, asserts) in _CHECKS.items():
        files[f"tests/{script}"] = _CHECK_TEMPLATE.format(func=func, asserts=asserts)
        test_map[f"mathkit.ops.{func}"] = f"{sys.executable} tests/{script}"
    return write_tree(root, files), test_map


@pytest.fixture()
def mathkit_repo(tmp_path: Path) -> tuple[Path, dict[str, str]]:
    return build_mathkit_repo(tmp_path / "mathkit_repo")


# --- line-eligibility repo: exactly 40 eligible lines ------------------------

def build_line_repo(root: Path) -> tuple[Path, int, int]:
    """Returns (root, eligible_count, unique_text_count)."""
    a_lines = ["# staged module, header comment keeps line 1 ineligible"]
    for i in range(1, 24):  # 23 unique eligible lines
        a_lines.append(f"value_a_{i} = combine(alpha_a_{i}, beta_a_{i}, gamma_a_{i})")
        a_lines.append("")               # blank: ineligible
        a_lines.append(f"# note {i}")    # comment: ineligible
    dup = "repeat_target = combine(rep_a, rep_b, rep_c)"
    a_lines.append(dup)                   # eligible
    a_lines.append("x = 1")               # too few tokens: ineligible
    a_lines.append(dup)                   # duplicate eligible line
    b_lines = ["# second module"]
    for i in range(1, 16):  # 15 unique eligible lines
        b_lines.append(f"value_b_{i} = combine(alpha_b_{i}, beta_b_{i}, gamma_b_{i})")
        b_lines.append("total = 0")       # 2 tokens: ineligible
    write_tree(root, {"mod_a.py": joined(a_lines), "mod_b.py": joined(b_lines)})
    return root, 40, 39


# --- function body bounds repo: 2/3/30/31-line bodies ------------------------

def build_bounds_repo(root: Path) -> tuple[Path, dict[str, str]]:
    lines = ['"""Bodies sized around the selection bounds."""', ""]

    def add(name: str, body_lines: int) -> None:
        lines.append(f"def {name}(seed):")
        for i in range(1, body_lines):
            lines.append(f"    step_{i} = seed + {i}")
        lines.append(f"    return seed * {body_lines}")
        lines.append("")
        lines.append("")

    add("two_liner", 2)
    add("three_liner", 3)
    add("thirty_liner", 30)
    add("thirtyone_liner", 31)
    write_tree(root, {"sized.py": joined(lines)})
    test_map = {
        f"sized.{name}": "true"
        for name in ("two_liner", "three_liner", "thirty_liner", "thirtyone_liner")
    }
    return root, test_map


# --- location-label repo ------------------------------------------------------

def build_location_repo(root: Path) -> Path:
    files = {
        "app/main.py": joined(
            [
                '"""Entry point wiring the engine to the renderer."""',
                "import os",
                "from core.engine import start_engine",
                "",
                "workdir = os.getcwd()",
                "handle = start_engine(workdir)",
            ]
        ),
        "app/render_main.py": joined(
            [
                '"""Screen rendering for the main window."""',
                "import hashlib",
                "",
                "def digest_frame(frame):",
                "    return hashlib.sha1(frame).hexdigest()",
            ]
        ),
        "core/engine.py": joined(
            [
                '"""Engine startup."""',
                "import math",
                "",
                "def start_engine(workdir):",
                "    return math.floor(len(workdir))",
            ]
        ),
        "lib/vendor.py": joined(
            [
                '"""Vendored helpers."""',
                "import os",
                "",
                "def vendor_tmp():",
                "    return os.sep",
            ]
        ),
        "lib/isolated.py": joined(
            [
                '"""No relationships with the rest of the tree."""',
                "import json",
                "",
                "def dumps_sorted(obj):",
                "    return json.dumps(obj, sort_keys=True)",
            ]
        ),
    }
    return write_tree(root, files)


LOCATION_TARGET = "app/main.py"
LOCATION_EXPECTATIONS = {
    "core/engine.py": {"imported"},
    "app/render_main.py": {"current_directory", "similar_name"},
    "lib/vendor.py": {"similar_import"},
    "lib/isolated.py": {"others"},
    "app/main.py": {"current_file", "current_directory", "similar_name", "similar_import"},
}


# --- duplication repo: exactly 10 non-blank lines, 4 duplicated ---------------

def build_duplication_repo(root: Path) -> Path:
    lines = [
        "alpha_rate = 1",
        "beta_rate = 2",
        "alpha_rate = 1   ",  # trailing spaces: still a duplicate of line 1
        "",
        "gamma_rate = 3",
        "delta_rate = 4",
        "epsilon_rate = 5",
        "delta_rate = 4",
        "",
        "zeta_rate = 6",
        "eta_rate = 7",
        "theta_rate = 8",
    ]
    return write_tree(root, {"metrics.py": joined(lines)})


# --- synthetic repo for query-equivalence runs --------------------------------

def build_synthetic_repo(root: Path, n_files: int = 8, n_lines: int = 60) -> Path:
    files = {}
    for f in range(n_files):
        tag = chr(ord("a") + f)
        lines = [
            f"mod_{tag}_slot_{j} = weave(mod_{tag}_core_{j}, {j})"
            for j in range(1, n_lines + 1)
        ]
        files[f"mod_{tag}.py"] = joined(lines)
    return write_tree(root, files)
