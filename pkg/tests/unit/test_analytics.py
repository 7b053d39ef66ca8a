"""
Tests for routing analytics.
"""

import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from echo_moe.exceptions import InvariantError
from echo_moe.model.moe import DispatchStats
from echo_moe.model.transformer import MultimodalTransformer, SequenceInput
from echo_moe.numerics.tensor import Tensor
from echo_moe.utils.analytics import (
    ROUTING_COLUMNS,
    check_dispatch,
    coefficient_of_variation,
    modality_summary,
    routing_frame,
    write_routing_csv,
)


def make_stats(F, G, F_image=None, F_text=None, k=2) -> DispatchStats:
    """Hand-built dispatch statistics."""
    F = np.asarray(F, dtype=np.float64)
    return DispatchStats(
        F=F,
        G=Tensor(np.asarray(G, dtype=np.float64)),
        F_image=np.asarray(F if F_image is None else F_image, dtype=np.float64),
        F_text=np.asarray(F if F_text is None else F_text, dtype=np.float64),
        k=k,
        n_tokens=4,
        n_image=2,
        n_text=2,
    )


@pytest.fixture
def uniform():
    """Four experts, top-2, perfectly balanced."""
    return make_stats([0.5] * 4, [0.25] * 4)


class TestRoutingFrame:
    """Test the per-expert routing table."""

    def test_rows_per_layer_and_expert(self, uniform):
        frame = routing_frame([uniform, uniform])

        assert list(frame.columns) == ROUTING_COLUMNS
        assert len(frame) == 8
        assert frame["layer"].tolist() == [0] * 4 + [1] * 4
        assert frame["expert"].tolist() == [0, 1, 2, 3] * 2

    def test_from_model(self, tiny_config, random_image):
        """Statistics gathered from a forward pass satisfy the invariants."""
        model = MultimodalTransformer(tiny_config, seed=1)
        seq = SequenceInput(image=random_image, prompt_ids=np.array([256, 65, 66, 257]))
        stats = model.layer_stats([model.forward(seq)])

        check_dispatch(stats)
        frame = routing_frame(stats)
        assert len(frame) == tiny_config.n_layers * tiny_config.num_experts
        assert_allclose(frame.groupby("layer")["F"].sum(), tiny_config.top_k)


class TestCheckDispatch:
    """Test the dispatch invariants."""

    def test_valid(self, uniform):
        check_dispatch([uniform])

    def test_ratio_sum(self):
        """Ratios must sum to k."""
        with pytest.raises(InvariantError) as exc_info:
            check_dispatch([make_stats([0.5, 0.5, 0.5, 0.4], [0.25] * 4)])
        assert "layer 0" in str(exc_info.value)

    def test_ratio_range(self):
        with pytest.raises(InvariantError):
            check_dispatch([make_stats([1.5, 0.5, 0.0, 0.0], [0.25] * 4)])

    def test_probability_sum(self):
        with pytest.raises(InvariantError):
            check_dispatch([make_stats([0.5] * 4, [0.3] * 4)])


class TestCoefficientOfVariation:
    """Test routing concentration."""

    def test_constant(self):
        assert coefficient_of_variation(np.full(4, 0.5)) == 0.0

    def test_all_zero(self):
        assert coefficient_of_variation(np.zeros(3)) == 0.0

    def test_known_value(self):
        """Population standard deviation over the mean."""
        assert coefficient_of_variation(np.array([1.0, 0.0, 1.0, 0.0])) == pytest.approx(1.0)


class TestRoutingCsv:
    """Test the routing statistics file."""

    def test_comment_header_and_table(self, uniform, temp_dir):
        """The first line carries the configuration echo; the rest is the table."""
        path = temp_dir / "out" / "routing.csv"
        write_routing_csv(path, [uniform], config_echo={"seed": 3})

        first = path.read_text().splitlines()[0]
        assert first.startswith("# config=")
        assert json.loads(first[len("# config=") :]) == {"seed": 3}
        frame = pd.read_csv(path, comment="#")
        assert list(frame.columns) == ROUTING_COLUMNS
        assert_allclose(frame["F"], 0.5)

    def test_invalid_stats_not_written(self, temp_dir):
        """Nothing is written when an invariant fails."""
        path = temp_dir / "routing.csv"
        with pytest.raises(InvariantError):
            write_routing_csv(path, [make_stats([0.1] * 4, [0.25] * 4)])
        assert not path.exists()


class TestModalitySummary:
    """Test the per-layer modality summary."""

    def test_gap(self):
        """Image and text ratios that disagree show a positive gap."""
        stats = make_stats(
            [0.5] * 4, [0.25] * 4, F_image=[1.0, 1.0, 0.0, 0.0], F_text=[0.0, 0.0, 1.0, 1.0]
        )
        summary = modality_summary(routing_frame([stats]))

        assert summary.loc[0, "image_text_gap"] == pytest.approx(4.0)
        assert summary.loc[0, "max_F_image"] == 1.0
        assert summary.loc[0, "cv_F"] == 0.0
