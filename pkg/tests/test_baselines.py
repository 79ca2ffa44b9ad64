from collections import Counter

import pytest
import torch

from recongen.baselines import HumanGenerator, build_human_generator, random_baseline
from recongen.errors import ConfigError
from recongen.search_space import build_macro, count_parameters
from recongen.search_space.derived import _live_nodes


def test_human_generator_shape_and_range():
    gen = build_human_generator((1, 16, 16), 16, 32, 10)
    z, y = torch.randn(5, 32), torch.arange(5)
    out = gen(z, y)
    assert out.shape == (5, 1, 16, 16)
    assert out.abs().max() <= 1


def test_human_generator_layout():
    gen = HumanGenerator((3, 32, 32), 8, 16, 10)
    kinds = [type(m).__name__ for m in gen.blocks]
    assert kinds == ["Upsample", "Conv2d", "BatchNorm2d", "LeakyReLU"] * 2
    assert gen.init_size == (8, 8)
    assert gen.fc.out_features == 8 * 64


def test_human_generator_deterministic_under_seed():
    outs = []
    for _ in range(2):
        torch.manual_seed(3)
        gen = HumanGenerator((1, 8, 8), 8, 4, 3)
        outs.append(gen(torch.ones(2, 4), torch.tensor([0, 2])))
    assert torch.equal(*outs)


def test_human_generator_scaling():
    small = HumanGenerator((1, 16, 16), 16, 8, 10)
    big = HumanGenerator((1, 16, 16), 16, 8, 10, channel_scale=2.0)
    assert big.channels == 32
    ratio = count_parameters(big, conv_only=True) / count_parameters(small, conv_only=True)
    assert 3.0 < ratio < 4.5


def test_human_generator_rejects_odd_size():
    with pytest.raises(ConfigError):
        HumanGenerator((1, 18, 18), 8, 4, 3)


def test_random_baseline_deterministic_and_valid():
    macro = build_macro((1, 16, 16), 8, 8, 10)
    a, b = random_baseline(macro, 5), random_baseline(macro, 5)
    assert a.choices == b.choices
    a.validate(macro)
    assert random_baseline(macro, 6).choices != a.choices


def test_random_baseline_frequencies_uniform():
    macro = build_macro((1, 16, 16), 8, 8, 10)
    edge = macro.edges[1]  # first normal edge, never touched by repair
    assert edge.kind == "normal" and edge.dst.endswith("N3")
    counts = Counter(random_baseline(macro, s).choices[edge.id] for s in range(1000))
    for j in range(edge.num_candidates):
        assert abs(counts[j] / 1000 - 1 / 7) < 0.05


def test_random_baseline_always_connected():
    macro = build_macro((1, 16, 16), 8, 8, 10)
    for s in range(300):
        live = _live_nodes(macro, random_baseline(macro, s).choices)
        assert set(macro.block_outputs()) <= live
