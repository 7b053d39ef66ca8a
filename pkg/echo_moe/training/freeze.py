"""
Stage-dependent freeze policy and parameter accounting.

Parameter names fall into four namespaces:

* base: embeddings, the visual encoder, attention, layer norms, the LM head
* static: the static FFN copy inside every MoE layer
* moe: shared expert, routing experts, router, alpha_raw, lambda_raw
* lora: low-rank adapters

The base stage trains base and static weights with the MoE additions frozen.
Stage I trains only the MoE additions. Stage II trains the MoE additions and
the adapters. The static FFN is frozen in Stages I and II.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping

from ..base.config import Stage
from ..exceptions import ConfigurationError
from ..numerics.tensor import Parameter

logger = logging.getLogger(__name__)

_NAMESPACES: list[tuple[str, re.Pattern[str]]] = [
    ("lora", re.compile(r"^lora\.")),
    ("static", re.compile(r"^blocks\.\d+\.moe\.static_ffn\.")),
    (
        "moe",
        re.compile(r"^blocks\.\d+\.moe\.(shared\.|experts\.\d+\.|router\.|alpha_raw$|lambda_raw$)"),
    ),
    (
        "base",
        re.compile(
            r"^(embed\.(tokens|positions)$|vision\.|final_ln\.|lm_head\.|"
            r"blocks\.\d+\.(ln1|ln2|attn)\.)"
        ),
    ),
]

_TRAINABLE: dict[Stage, frozenset[str]] = {
    Stage.BASE: frozenset({"base", "static"}),
    Stage.STAGE_I: frozenset({"moe"}),
    Stage.STAGE_II: frozenset({"moe", "lora"}),
}


def namespace_of(name: str) -> str:
    """
    Classify a parameter name.

    Raises:
        ConfigurationError: If the name belongs to no known namespace
    """
    for namespace, pattern in _NAMESPACES:
        if pattern.search(name):
            return namespace
    raise ConfigurationError(f"parameter {name!r} belongs to no known namespace")


def freeze_mask(names: Iterable[str], stage: Stage | str) -> dict[str, bool]:
    """
    Frozen flag per parameter name for a training stage.

    Args:
        names: Parameter names of the model
        stage: "base", "I" or "II"

    Returns:
        Mapping from name to True when the parameter is frozen
    """
    trainable = _TRAINABLE[Stage(stage)]
    return {name: namespace_of(name) not in trainable for name in names}


def apply_freeze(params: Mapping[str, Parameter], mask: Mapping[str, bool]) -> None:
    """Set every parameter's frozen flag from ``mask``."""
    for name, param in params.items():
        param.frozen = mask[name]


def count_parameters(params: Mapping[str, Parameter]) -> dict[str, int]:
    """Scalar counts: total, trainable, frozen and per namespace."""
    counts = {"total": 0, "trainable": 0, "frozen": 0, "base": 0, "static": 0, "moe": 0, "lora": 0}
    for name, param in params.items():
        counts["total"] += param.size
        counts["frozen" if param.frozen else "trainable"] += param.size
        counts[namespace_of(name)] += param.size
    return counts
