"""PAF catalog, evaluation and cost queries backed by the pafforge C++ core."""

import json
import os
from pathlib import Path

_data = Path(__file__).parent / "data"
if _data.is_dir():
    os.environ.setdefault("PAFFORGE_DATA_DIR", str(_data))

from . import _core  # noqa: E402
from ._core import Error, activation, catalog_names, depth, maximum, relu, sign, spearman  # noqa: E402

__all__ = [
    "Error",
    "activation",
    "catalog_names",
    "cost",
    "depth",
    "load_report",
    "maximum",
    "paf",
    "plan",
    "relu",
    "sign",
    "spearman",
]


def paf(name: str) -> dict:
    """Catalog entry: stages, per-layer tables and display metadata."""
    return json.loads(_core.paf_json(name))


def plan(name: str) -> dict:
    """Depth, multiplication counts and level trace of the evaluation plan."""
    return json.loads(_core.plan_json(name))


def cost(name: str) -> dict:
    return json.loads(_core.cost_json(name))


def load_report(path) -> dict:
    """A schedule report (JSON or CSV) as a dict."""
    return json.loads(_core.report_json(str(path)))
