"""
The desk-scale multimodal causal transformer.

A sequence is the projected visual tokens followed by the text tokens; learned
absolute positions are added after concatenation and attention is causal over
the whole sequence, visual tokens included. Each block is

    X' = MSA(LN(X)) + X
    out = DualPathMoE(LN(X')) + X'
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..base.config import LoraConfig, ModelConfig
from ..exceptions import ContractError, DataError, DimensionError
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import Tensor
from .layers import LayerNorm, Linear, Module, MultiHeadAttention
from .lora import LoraAdapter, create_adapter, lora_merge
from .moe import (
    DispatchStats,
    DualPathMoEParams,
    RoutingDecision,
    balance_loss,
    dispatch_stats,
    moe_layer,
)
from .vision import VisionEncoder

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SequenceInput:
    """
    One training or decoding example.

    ``prompt_ids`` is the conditioning text (begin token, prompt, separator) and
    ``target_ids`` the response including its end token; it is empty when the
    sequence is only a decoding prompt.
    """

    image: np.ndarray | None
    prompt_ids: np.ndarray
    target_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tag: str = ""

    def input_ids(self) -> np.ndarray:
        """Text fed to the model: the prompt and every target but the last."""
        tail = self.target_ids[:-1] if self.target_ids.size else self.target_ids
        return np.concatenate([self.prompt_ids, tail]).astype(np.int64)


@dataclass
class ForwardOutput:
    """Logits of a full sequence and the routing decision of every block."""

    logits: Tensor
    decisions: list[RoutingDecision]
    is_image: np.ndarray
    num_visual: int

    def response_logits(self, prompt_len: int, target_len: int) -> Tensor:
        """Rows predicting the target tokens."""
        start = self.num_visual + prompt_len - 1
        return F.gather_rows(self.logits, np.arange(start, start + target_len))


def embed_text(ids: Sequence[int] | np.ndarray, table: Tensor) -> Tensor:
    """
    Row lookup into the embedding table.

    Raises:
        DataError: If an id is outside the vocabulary
    """
    index = np.asarray(ids, dtype=np.int64).reshape(-1)
    vocab = table.shape[0]
    bad = np.flatnonzero((index < 0) | (index >= vocab))
    if bad.size:
        raise DataError(
            f"token id {int(index[bad[0]])} at position {int(bad[0])} outside vocabulary of {vocab}"
        )
    return F.gather_rows(table, index)


class TransformerBlock(Module):
    """Attention and Dual-path MoE sublayers with pre-norm residuals."""

    def __init__(self, prefix: str, config: ModelConfig, rng: SplitMix64):
        super().__init__(prefix)
        c = config
        self.k = c.top_k
        self.ln1 = self.add_module("ln1", LayerNorm(self.sub("ln1"), c.d_model, c.ln_eps))
        self.attn = self.add_module(
            "attn", MultiHeadAttention(self.sub("attn"), c.d_model, c.n_heads, rng, c.init_std)
        )
        self.ln2 = self.add_module("ln2", LayerNorm(self.sub("ln2"), c.d_model, c.ln_eps))
        self.moe = self.add_module(
            "moe",
            DualPathMoEParams(
                self.sub("moe"),
                d=c.d_model,
                ffn_hidden=c.ffn_hidden,
                expert_hidden=c.expert_hidden,
                shared_hidden=c.shared_width,
                num_experts=c.num_experts,
                rng=rng,
                std=c.init_std,
                use_shared_expert=c.use_shared_expert,
            ),
        )


def block_forward(
    X: Tensor,
    block: TransformerBlock,
    training: bool = False,
    rng: SplitMix64 | None = None,
) -> tuple[Tensor, RoutingDecision]:
    """Apply one block; returns the output and the block's routing decision."""
    attn_rng = rng.fork("attn") if rng else None
    X1 = F.add(block.attn(block.ln1(X), training, attn_rng), X)
    moe_out, decision = moe_layer(block.ln2(X1), block.moe, block.k)
    return F.add(moe_out, X1), decision


def ar_loss(logits: Tensor, targets: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood over response positions."""
    return F.cross_entropy(logits, targets)


def total_loss(ar: Tensor | float, bal: Tensor | float, gamma: float) -> Tensor:
    """
    ar + gamma * bal, with bal already summed over blocks.

    Raises:
        ContractError: If gamma is negative
    """
    if gamma < 0:
        raise ContractError(f"balance weight gamma must be non-negative, got {gamma}")
    return F.add(ar, F.mul(gamma, bal))


class MultimodalTransformer(Module):
    """Visual encoder, token embedding, Dual-path MoE blocks and the LM head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__("")
        self.config = config
        self.seed = seed
        c = config
        rng = SplitMix64(seed, "init")
        self.tokens = self.add_parameter(
            "embed.tokens", rng.fork("embed.tokens").normal((c.vocab_size, c.d_model), c.init_std)
        )
        self.positions = self.add_parameter(
            "embed.positions",
            rng.fork("embed.positions").normal((c.max_len, c.d_model), c.init_std),
        )
        self.vision = self.add_module("vision", VisionEncoder("vision", c, rng))
        self.blocks = [
            self.add_module(f"blocks.{i}", TransformerBlock(f"blocks.{i}", c, rng))
            for i in range(c.n_layers)
        ]
        self.final_ln = self.add_module("final_ln", LayerNorm("final_ln", c.d_model, c.ln_eps))
        self.lm_head = self.add_module(
            "lm_head", Linear("lm_head", c.d_model, c.vocab_size, rng, c.init_std, bias=False)
        )
        self.adapters: dict[str, LoraAdapter] = {}
        self._adapted: dict[str, Linear] = {}
        self.lora_config: LoraConfig | None = None

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def sequence_length(self, seq: SequenceInput) -> int:
        m = self.config.visual_tokens if seq.image is not None else 0
        return m + seq.input_ids().size

    def forward(
        self,
        seq: SequenceInput,
        training: bool = False,
        rng: SplitMix64 | None = None,
    ) -> ForwardOutput:
        """
        Logits for every position of ``seq``.

        Raises:
            ContractError: If the sequence exceeds ``max_len``
        """
        ids = seq.input_ids()
        parts: list[Tensor] = []
        m = 0
        if seq.image is not None:
            visual = self.vision(seq.image, training, rng.fork("vision") if rng else None)
            m = visual.shape[0]
            parts.append(visual)
        if ids.size:
            parts.append(embed_text(ids, self.tokens))
        K = m + ids.size
        if K == 0:
            raise ContractError("cannot run the model on an empty sequence")
        if K > self.config.max_len:
            raise ContractError(f"sequence length {K} exceeds max_len {self.config.max_len}")
        X = parts[0] if len(parts) == 1 else F.concat_rows(parts)
        X = F.add(X, F.gather_rows(self.positions, np.arange(K)))

        decisions = []
        for i, block in enumerate(self.blocks):
            block_rng = rng.fork(f"blocks.{i}") if rng else None
            X, decision = block_forward(X, block, training, block_rng)
            decisions.append(decision)
        logits = self.lm_head(self.final_ln(X))
        is_image = np.zeros(K, dtype=bool)
        is_image[:m] = True
        return ForwardOutput(logits=logits, decisions=decisions, is_image=is_image, num_visual=m)

    def logits(self, seq: SequenceInput) -> np.ndarray:
        """Evaluation-mode logits as a plain array."""
        return self.forward(seq).logits.numpy()

    def layer_stats(self, outputs: Sequence[ForwardOutput]) -> list[DispatchStats]:
        """Per-block dispatch statistics over all tokens of ``outputs``."""
        is_image = np.concatenate([o.is_image for o in outputs])
        return [
            dispatch_stats(RoutingDecision.concat([o.decisions[i] for o in outputs]), is_image)
            for i in range(len(self.blocks))
        ]

    def balance_total(self, stats: Sequence[DispatchStats]) -> Tensor:
        """Balance loss summed over blocks."""
        total: Tensor = Tensor(0.0)
        for s in stats:
            total = F.add(total, balance_loss(s))
        return total

    # ------------------------------------------------------------------
    # Mixing overrides
    # ------------------------------------------------------------------

    def set_alpha_override(self, value: float | None) -> None:
        for block in self.blocks:
            block.moe.alpha_override = value

    def set_lambda_override(self, value: float | None) -> None:
        for block in self.blocks:
            block.moe.lambda_override = value

    # ------------------------------------------------------------------
    # LoRA
    # ------------------------------------------------------------------

    def lora_sites(self, sites: Sequence[str]) -> dict[str, Linear]:
        """Projections addressed by the configured site names."""
        targets: dict[str, Linear] = {}
        for i, block in enumerate(self.blocks):
            for proj_name, linear in block.attn.projections().items():
                if f"attn.{proj_name}" in sites:
                    targets[f"blocks.{i}.attn.{proj_name}"] = linear
        if "vision.proj" in sites:
            targets["vision.proj.fc1"] = self.vision.proj.fc1
            targets["vision.proj.fc2"] = self.vision.proj.fc2
        if "vision.patch" in sites:
            targets["vision.patch"] = self.vision.patch
        return targets

    def attach_lora(self, lora: LoraConfig, seed: int | None = None) -> dict[str, LoraAdapter]:
        """
        Attach zero-initialized adapters to the configured sites.

        Raises:
            ConfigurationError: If the rank exceeds a site's min(d, d')
        """
        if self.adapters:
            raise ContractError("LoRA adapters are already attached")
        rng = SplitMix64(self.seed if seed is None else seed, "lora")
        for site, linear in self.lora_sites(lora.sites).items():
            adapter = create_adapter(
                site,
                d_out=linear.d_out,
                d_in=linear.d_in,
                rank=lora.rank,
                alpha=lora.alpha,
                dropout_p=lora.dropout,
                rng=rng,
                init_std=lora.init_std,
            )
            linear.adapter = adapter
            self.adapters[site] = adapter
            self._adapted[site] = linear
        self.lora_config = lora
        logger.info(f"Attached {len(self.adapters)} LoRA adapters (rank {lora.rank})")
        return self.adapters

    def merge_lora(self) -> None:
        """Fold every adapter into its base weight and detach it."""
        for linear in self._adapted.values():
            if linear.adapter is not None:
                linear.weight.assign(lora_merge(linear.weight, linear.adapter))
                linear.adapter = None
        logger.info(f"Merged {len(self.adapters)} LoRA adapters into base weights")
        self._adapted = {}
        self.adapters = {}
        self.lora_config = None


def greedy_decode(
    model: MultimodalTransformer,
    prompt: SequenceInput,
    max_new: int,
) -> list[int]:
    """
    Append argmax tokens until the end token or ``max_new`` tokens.

    Ties go to the lowest token id. The end token is not included in the result.

    Raises:
        ContractError: If prompt length plus ``max_new`` exceeds ``max_len``
    """
    config = model.config
    if max_new < 0:
        raise ContractError(f"max_new must be non-negative, got {max_new}")
    m = config.visual_tokens if prompt.image is not None else 0
    prompt_ids = np.asarray(prompt.prompt_ids, dtype=np.int64)
    if m + prompt_ids.size + max_new > config.max_len:
        raise ContractError(
            f"prompt of {m + prompt_ids.size} tokens plus {max_new} new tokens "
            f"exceeds max_len {config.max_len}"
        )
    if m + prompt_ids.size == 0:
        raise ContractError("cannot decode from an empty prompt")
    generated: list[int] = []
    for _ in range(max_new):
        ids = np.concatenate([prompt_ids, np.asarray(generated, dtype=np.int64)])
        step = SequenceInput(image=prompt.image, prompt_ids=ids)
        last = model.forward(step).logits.data[-1]
        token = int(np.argmax(last))
        if token == config.eos_id:
            break
        generated.append(token)
    return generated


def validate_sequence(seq: SequenceInput, config: ModelConfig) -> None:
    """
    Check a training sequence against the model geometry.

    Raises:
        ContractError: If the sequence exceeds ``max_len`` or has no response
        DimensionError: If the image has the wrong shape
    """
    if seq.target_ids.size == 0:
        raise ContractError("training sequence has an empty response")
    if seq.prompt_ids.size == 0:
        raise ContractError("training sequence has an empty prompt")
    m = 0
    if seq.image is not None:
        shape = np.shape(seq.image)
        expected = (config.image_size, config.image_size, config.channels)
        if shape != expected and not (config.channels == 1 and shape == expected[:2]):
            raise DimensionError(f"image of shape {shape} does not match {expected}")
        m = config.visual_tokens
    K = m + seq.prompt_ids.size + seq.target_ids.size - 1
    if K > config.max_len:
        raise ContractError(f"sequence length {K} exceeds max_len {config.max_len}")
