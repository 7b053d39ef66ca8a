"""
Tests for top-k routing, the Dual-path MoE layer and dispatch statistics.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from echo_moe.exceptions import ConfigurationError, ContractError, DimensionError
from echo_moe.model.layers import FeedForward
from echo_moe.model.moe import (
    DispatchStats,
    DualPathMoEParams,
    RoutingDecision,
    balance_loss,
    dispatch_stats,
    moe_forward,
    moe_layer,
    route_topk,
)
from echo_moe.numerics import functional as F
from echo_moe.numerics.gradcheck import check_gradients
from echo_moe.numerics.rng import SplitMix64
from echo_moe.numerics.tensor import GradTape, Parameter, Tensor, backward


def make_moe(
    num_experts: int = 4, d: int = 6, seed: int = 0, std: float = 0.5, shared: bool = True
) -> DualPathMoEParams:
    """A small layer with weights large enough to route decisively."""
    return DualPathMoEParams(
        "moe",
        d=d,
        ffn_hidden=5,
        expert_hidden=4,
        shared_hidden=7,
        num_experts=num_experts,
        rng=SplitMix64(seed, "moe"),
        std=std,
        use_shared_expert=shared,
    )


def _ffn(module: FeedForward, x: np.ndarray) -> np.ndarray:
    h = x @ module.fc1.weight.data.T + module.fc1.bias.data
    h = h / (1.0 + np.exp(-h))
    return h @ module.fc2.weight.data.T + module.fc2.bias.data


def brute_force(X: np.ndarray, params: DualPathMoEParams, k: int) -> np.ndarray:
    """Token-by-token, expert-by-expert evaluation of the dual-path output."""
    alpha = params.alpha().item()
    lam = params.lam().item()
    out = np.zeros_like(X)
    for t in range(X.shape[0]):
        x = X[t : t + 1]
        logits = (x @ params.router.weight.data.T)[0]
        chosen = sorted(range(len(logits)), key=lambda e: (-logits[e], e))[:k]
        z = np.array([logits[e] for e in chosen])
        gates = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        mix = np.zeros_like(x)
        for g, e in zip(gates, chosen):
            mix = mix + g * _ffn(params.experts[e], x)
        if params.use_shared_expert:
            mix = lam * _ffn(params.shared, x) + mix
        out[t] = (alpha * _ffn(params.static_ffn, x) + (1.0 - alpha) * mix)[0]
    return out


class TestRouteTopK:
    """Test top-k expert selection."""

    def test_selects_largest(self):
        """The two largest logits win, best first."""
        decision = route_topk(Tensor([[0.1, 0.9, 0.5, 0.3]]), 2)
        assert_array_equal(decision.experts, [[1, 2]])

    def test_gates_over_selected_only(self):
        """Gates renormalize over the selected logits."""
        decision = route_topk(Tensor([[2.0, 1.0, -5.0]]), 2)
        assert_allclose(decision.gates.data, [[0.73106, 0.26894]], atol=1e-5)

    def test_tie_goes_to_lowest_index(self):
        """Equal logits pick the lowest indices with equal gates."""
        decision = route_topk(Tensor(np.zeros((3, 4))), 2)

        assert_array_equal(decision.experts, [[0, 1]] * 3)
        assert_allclose(decision.gates.data, np.full((3, 2), 0.5))
        assert_allclose(decision.probs.data, np.full((3, 4), 0.25))

    @pytest.mark.parametrize("k", [0, 5])
    def test_invalid_k(self, k):
        """k outside [1, E] is a configuration error."""
        with pytest.raises(ConfigurationError):
            route_topk(Tensor(np.zeros((2, 4))), k)

    def test_gates_sum_to_one(self, rng):
        """Per-token gates sum to one."""
        decision = route_topk(Tensor(rng.normal((20, 6), std=2.0)), 3)
        assert_allclose(decision.gates.data.sum(axis=1), np.ones(20), atol=1e-12)

    def test_permutation_stable(self, rng):
        """Permuting experts permutes the decision identically."""
        logits = rng.normal((10, 5))
        perm = np.array([3, 0, 4, 1, 2])
        base = route_topk(Tensor(logits), 2)
        permuted = route_topk(Tensor(logits[:, perm]), 2)

        assert_array_equal(perm[permuted.experts], base.experts)
        assert_allclose(permuted.gates.data, base.gates.data, atol=1e-15)

    @pytest.mark.parametrize("num_experts,k", [(1, 1), (2, 1), (2, 2), (4, 1), (4, 2)])
    def test_matches_enumeration(self, num_experts, k):
        """Selection equals brute-force enumeration on random batches."""
        for batch in range(100):
            logits = SplitMix64(batch, f"enum/{num_experts}/{k}").normal((6, num_experts))
            decision = route_topk(Tensor(logits), k)
            for t in range(6):
                expected = sorted(range(num_experts), key=lambda e: (-logits[t, e], e))[:k]
                assert decision.experts[t].tolist() == expected


class TestMoELayer:
    """Test the dual-path output."""

    def test_alpha_one_is_static_ffn(self, rng):
        """With alpha forced to 1 the output is exactly the static FFN."""
        params = make_moe()
        params.alpha_override = 1.0
        X = Tensor(rng.normal((5, 6)))
        Y, _ = moe_layer(X, params, 2)

        assert_array_equal(Y.data, params.static_ffn(X).data)

    def test_identity_expert_path(self, rng):
        """One bypass expert with a zero second layer and alpha = lambda = 0 returns X."""
        params = make_moe(num_experts=1)
        expert = FeedForward("moe.experts.0", 6, 4, 6, rng, 0.5, bypass=True)
        expert.fc2.weight.assign(np.zeros((6, 4)))
        params.experts[0] = expert
        params.alpha_override = 0.0
        params.lambda_override = 0.0
        X = Tensor(rng.normal((4, 6)))
        Y, _ = moe_layer(X, params, 1)

        assert_array_equal(Y.data, X.data)

    def test_alpha_zero_lambda_zero_is_gated_mixture(self, rng):
        """Forcing both scalars to 0 leaves only the routed experts."""
        params = make_moe()
        params.alpha_override = 0.0
        params.lambda_override = 0.0
        X = rng.normal((5, 6))
        Y, _ = moe_layer(Tensor(X), params, 2)

        assert_allclose(Y.data, brute_force(X, params, 2), atol=1e-10)

    @pytest.mark.parametrize("num_experts,k", [(1, 1), (2, 1), (2, 2), (4, 1), (4, 2)])
    def test_matches_token_loop(self, num_experts, k):
        """The vectorized layer equals the explicit double loop."""
        for batch in range(100):
            params = make_moe(num_experts=num_experts, seed=batch)
            params.alpha_raw.assign(0.3)
            params.lambda_raw.assign(-0.7)
            X = SplitMix64(batch, "x").normal((5, 6))
            Y, _ = moe_layer(Tensor(X), params, k)

            assert_allclose(Y.data, brute_force(X, params, k), atol=1e-10)

    def test_without_shared_expert(self, rng):
        """Disabling the shared expert drops the lambda term."""
        params = make_moe(shared=False)
        X = rng.normal((5, 6))
        Y, _ = moe_layer(Tensor(X), params, 2)

        assert_allclose(Y.data, brute_force(X, params, 2), atol=1e-10)

    def test_width_mismatch(self):
        """Input of the wrong width is a dimension error."""
        with pytest.raises(DimensionError):
            moe_layer(Tensor(np.zeros((2, 5))), make_moe(), 2)

    def test_needs_an_expert(self):
        """Zero experts is a configuration error."""
        with pytest.raises(ConfigurationError):
            make_moe(num_experts=0)

    def test_mixing_scalars_start_at_half(self):
        """alpha_raw and lambda_raw start at zero."""
        params = make_moe()

        assert params.alpha().item() == 0.5
        assert params.lam().item() == 0.5

    def test_gradients_match_finite_differences(self, rng):
        """Router, experts, shared expert, alpha and lambda gradients check out."""
        params = make_moe()
        params.alpha_raw.assign(0.4)
        params.lambda_raw.assign(-0.2)
        X = Tensor(rng.normal((6, 6)))
        weights = Tensor(rng.fork("w").normal((6, 6)))

        def loss() -> Tensor:
            Y, stats = moe_forward(X, params, 2)
            return F.add(F.sum(F.mul(Y, weights)), balance_loss(stats))

        errors = check_gradients(loss, params.named_parameters(), max_coords=6)

        assert set(errors) >= {"moe.alpha_raw", "moe.lambda_raw", "moe.router.weight"}
        assert max(errors.values()) < 1e-4

    def test_frozen_static_ffn_gets_no_gradient(self, rng):
        """Freezing the static copy keeps it out of the gradient map."""
        params = make_moe()
        named = params.named_parameters()
        for name, p in named.items():
            p.frozen = ".static_ffn." in name
        with GradTape() as tape:
            Y, _ = moe_layer(Tensor(rng.normal((3, 6))), params, 2)
            loss = F.sum(Y)
        grads = backward(tape, loss, named.values())

        assert not any(".static_ffn." in name for name in grads)
        assert "moe.experts.0.fc1.weight" in grads


class TestDispatchStats:
    """Test dispatch ratios and mean gating probabilities."""

    def test_all_to_one_expert(self):
        """k = 1 with one dominant expert."""
        decision = route_topk(Tensor(np.tile([5.0, 0.0, 0.0, 0.0], (4, 1))), 1)
        stats = dispatch_stats(decision)

        assert_array_equal(stats.F, [1.0, 0.0, 0.0, 0.0])
        assert stats.n_tokens == 4

    def test_uniform_rotation(self):
        """k = 2 rotating over four experts gives 0.5 each and sums to k."""
        logits = np.array(
            [[2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 1.0], [2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 1.0]]
        )
        stats = dispatch_stats(route_topk(Tensor(logits), 2))

        assert_allclose(stats.F, [0.5, 0.5, 0.5, 0.5])
        assert stats.F.sum() == pytest.approx(2.0)

    def test_uniform_logits_give_uniform_g(self):
        """Symmetric logits give G = 1 / E."""
        stats = dispatch_stats(route_topk(Tensor(np.zeros((3, 4))), 2))
        assert_allclose(stats.G_values, [0.25] * 4)

    def test_modality_split(self):
        """Image and text tokens are counted separately."""
        logits = np.array(
            [[5.0, 0.0, 0.0, 0.0], [5.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 5.0], [0.0, 0.0, 0.0, 5.0]]
        )
        stats = dispatch_stats(route_topk(Tensor(logits), 1), np.array([1, 1, 0, 0], dtype=bool))

        assert_array_equal(stats.F_image, [1.0, 0.0, 0.0, 0.0])
        assert_array_equal(stats.F_text, [0.0, 0.0, 0.0, 1.0])
        assert (stats.n_image, stats.n_text) == (2, 2)

    def test_no_image_tokens(self):
        """A text-only batch reports zero image ratios."""
        stats = dispatch_stats(route_topk(Tensor(np.zeros((2, 3))), 1))
        assert_array_equal(stats.F_image, np.zeros(3))

    def test_empty_batch(self):
        """An empty batch violates the contract."""
        empty = RoutingDecision(
            experts=np.zeros((0, 2), dtype=np.int64),
            gates=Tensor(np.zeros((0, 2))),
            probs=Tensor(np.zeros((0, 4))),
        )
        with pytest.raises(ContractError):
            dispatch_stats(empty)

    def test_modality_length_mismatch(self):
        """One modality tag per token."""
        with pytest.raises(DimensionError):
            dispatch_stats(route_topk(Tensor(np.zeros((3, 4))), 1), np.zeros(2, dtype=bool))

    def test_concat_decisions(self):
        """Decisions of several sequences stack into one batch."""
        a = route_topk(Tensor(np.tile([1.0, 0.0], (2, 1))), 1)
        b = route_topk(Tensor(np.tile([0.0, 1.0], (3, 1))), 1)
        merged = RoutingDecision.concat([a, b])

        assert merged.num_tokens == 5
        assert_allclose(dispatch_stats(merged).F, [0.4, 0.6])


class TestBalanceLoss:
    """Test the auxiliary balancing loss."""

    def test_uniform_fixture(self):
        """E = 4, k = 2 with uniform F and G gives 0.5."""
        stats = DispatchStats(
            F=np.full(4, 0.5),
            G=Tensor(np.full(4, 0.25)),
            F_image=np.zeros(4),
            F_text=np.full(4, 0.5),
            k=2,
            n_tokens=8,
            n_image=0,
            n_text=8,
        )
        assert balance_loss(stats).item() == pytest.approx(0.5)

    def test_concentrated_routing(self):
        """Saturated routing to expert 0 approaches 1."""
        stats = dispatch_stats(route_topk(Tensor(np.tile([60.0, 0.0, 0.0, 0.0], (4, 1))), 1))
        assert balance_loss(stats).item() == pytest.approx(1.0, abs=1e-12)

    def test_single_expert(self):
        """E = 1 forces F = G = [1]."""
        stats = dispatch_stats(route_topk(Tensor(np.array([[0.3], [-2.0]])), 1))

        assert_array_equal(stats.F, [1.0])
        assert balance_loss(stats).item() == 1.0

    def test_gradient_flows_through_g_only(self, rng):
        """d bal / d logits equals the softmax Jacobian applied to F / n."""
        logits = Parameter("logits", rng.normal((3, 4)))
        with GradTape() as tape:
            stats = dispatch_stats(route_topk(logits, 2))
            loss = balance_loss(stats)
        grad = backward(tape, loss)["logits"]

        p = F.softmax(Tensor(logits.data), axis=1).data
        upstream = np.tile(stats.F / 3.0, (3, 1))
        expected = p * (upstream - (upstream * p).sum(axis=1, keepdims=True))
        assert_allclose(grad, expected, atol=1e-12)
