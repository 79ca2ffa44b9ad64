import os

import pytest
import torch
import torch.nn as nn

from recongen.zoo.models import ConvBN, LinearBN

torch.set_num_threads(1)


class ToyNet(nn.Module):
    """Tiny classifier with two BN layers for exact/gradient checks."""

    def __init__(self, channels=1, size=2, num_classes=3, hidden=4):
        super().__init__()
        self.body = nn.Sequential(ConvBN(channels, hidden, 1), nn.ReLU())
        self.head = nn.Sequential(nn.Flatten(), LinearBN(hidden * size * size, 6), nn.Tanh(), nn.Linear(6, num_classes))

    def forward(self, x):
        return self.head(self.body(x))


def make_toy(seed=0, dtype=torch.float64, **kw):
    torch.manual_seed(seed)
    net = ToyNet(**kw).to(dtype)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.running_mean.uniform_(-0.5, 0.5)
                m.running_var.uniform_(0.5, 1.5)
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


@pytest.fixture
def toy_model():
    return make_toy()


@pytest.fixture(scope="session")
def lenet(tmp_path_factory):
    """Pretrained lenet_bn on the bundled MNIST subset, trained once per session."""
    from recongen.zoo import freeze, load_checkpoint, pretrain, save_checkpoint

    path = tmp_path_factory.mktemp("zoo") / "lenet_bn.pt"
    model, meta = pretrain("lenet_bn", seed=0)
    save_checkpoint(model, meta, path)
    model, meta = load_checkpoint(path)
    return freeze(model), meta, path


@pytest.fixture(scope="session")
def mnist_test():
    from recongen.zoo import load_dataset

    return load_dataset("mnist_like")[1]


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RECONGEN_SKIP_SLOW"):
        skip = pytest.mark.skip(reason="RECONGEN_SKIP_SLOW set")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
