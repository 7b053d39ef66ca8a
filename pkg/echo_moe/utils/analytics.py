"""
Routing analytics for echo-moe.

Turns per-layer dispatch statistics into tables (pandas), checks the dispatch
invariants before anything is written, and measures routing concentration.
"""

import json
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from ..exceptions import InvariantError, SerializationError
from ..model.moe import DispatchStats

logger = logging.getLogger(__name__)

ROUTING_COLUMNS = ["layer", "expert", "F", "G", "F_image", "F_text"]


def routing_frame(stats: Sequence[DispatchStats]) -> pd.DataFrame:
    """
    One row per (layer, expert).

    Args:
        stats: Dispatch statistics, one entry per transformer block

    Returns:
        DataFrame with columns layer, expert, F, G, F_image, F_text
    """
    rows = []
    for layer, s in enumerate(stats):
        g = s.G_values
        for e in range(s.num_experts):
            rows.append(
                {
                    "layer": layer,
                    "expert": e,
                    "F": float(s.F[e]),
                    "G": float(g[e]),
                    "F_image": float(s.F_image[e]),
                    "F_text": float(s.F_text[e]),
                }
            )
    return pd.DataFrame(rows, columns=ROUTING_COLUMNS)


def check_dispatch(stats: Sequence[DispatchStats], tol: float = 1e-12) -> None:
    """
    Assert the per-layer dispatch invariants.

    Raises:
        InvariantError: If sum(F) != k, an F is outside [0, 1] or sum(G) != 1
    """
    for layer, s in enumerate(stats):
        total_f = float(s.F.sum())
        if abs(total_f - s.k) > tol:
            raise InvariantError(f"layer {layer}: dispatch ratios sum to {total_f}, expected {s.k}")
        if np.any(s.F < 0) or np.any(s.F > 1):
            raise InvariantError(f"layer {layer}: dispatch ratio outside [0, 1]")
        total_g = float(s.G_values.sum())
        if abs(total_g - 1.0) > 1e-10:
            raise InvariantError(f"layer {layer}: gating probabilities sum to {total_g}")


def coefficient_of_variation(values: np.ndarray) -> float:
    """Population std / mean; 0 for a constant or all-zero vector."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean()) if arr.size else 0.0
    if mean == 0.0:
        return 0.0
    return float(arr.std() / mean)


def write_routing_csv(
    path: str | Path,
    stats: Sequence[DispatchStats],
    config_echo: Mapping[str, Any] | None = None,
) -> pd.DataFrame:
    """
    Check the invariants, then write the routing table as CSV.

    The first line is a ``#`` comment carrying the configuration echo; read it
    back with ``pd.read_csv(path, comment="#")``.

    Raises:
        InvariantError: If a layer violates the dispatch invariants
        SerializationError: If the file cannot be written
    """
    check_dispatch(stats)
    frame = routing_frame(stats)
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(f"# config={json.dumps(dict(config_echo or {}), sort_keys=True)}\n")
            frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise SerializationError(f"Failed to write routing statistics to {out}: {e}") from e
    logger.info(f"Wrote routing statistics for {len(stats)} layers to {out}")
    return frame


def modality_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-layer spread of image and text dispatch ratios."""
    grouped = frame.assign(gap=(frame["F_image"] - frame["F_text"]).abs()).groupby("layer")
    return pd.DataFrame(
        {
            "cv_F": grouped["F"].agg(lambda f: coefficient_of_variation(f.to_numpy())),
            "max_F_image": grouped["F_image"].max(),
            "max_F_text": grouped["F_text"].max(),
            "image_text_gap": grouped["gap"].sum(),
        }
    )
