from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import colorlog
import numpy as np

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(name)s - %(message)s"


def setup_logging(name: str, log_level: int | str = logging.INFO) -> logging.Logger:
    """Attach a colored stderr handler to ``name``; repeated calls rebind the stream and update the level."""
    logger = logging.getLogger(name)
    logger.setLevel(log_level)

    ours = [h for h in logger.handlers if getattr(h, "_rm_lab", False)]
    if not ours:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))  # 不带时间戳
        handler._rm_lab = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    else:
        for handler in ours:
            handler.setStream(sys.stderr)

    for handler in logger.handlers:
        handler.setLevel(log_level)

    # 防止重复输出
    logger.propagate = False
    return logger


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(value))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(cell) for cell in row])


def _csv_cell(cell: Any) -> Any:
    if isinstance(cell, float | np.floating):
        return format_float(cell)
    if cell is None:
        return ""
    return cell


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)
    return float(slope)
