import numpy as np
import pytest

from dimpleseg.autodiff import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def make_oracle_unet(base_width=4):
    """A U-Net whose eval-mode output is sigmoid(k * (0.5 - x)) at every pixel.

    Channel 0 is carried unchanged through every encoder unit and through the
    skip path of every decoder unit (BN in eval mode with unit running var is
    the identity up to eps, PReLU slope 1 is the identity), and the head turns
    the pass-through intensity into a dark-pixel probability. On synthetic
    fractographs (dark dimples at 60/255, background at 190/255) the
    thresholded output reproduces the mask exactly.
    """
    from dimpleseg.models import ModelSpec, build_unet

    model = build_unet(ModelSpec(arch="unet", base_width=base_width))
    store = model.params
    for name in store:
        t = store[name]
        if name.endswith("conv/weight"):
            w = np.zeros(t.shape)
            cin = t.shape[1]
            src = 0
            if name.startswith("dec") and name.endswith("conv0/conv/weight"):
                src = cin - t.shape[0]  # first skip channel
            w[0, src, 1, 1] = 1.0
            store.set_data(name, w)
        elif name.endswith("running_var"):
            store.set_data(name, np.full(t.shape, 1.0 - 1e-5))
        elif name.endswith("running_mean") or name.endswith("beta"):
            store.set_data(name, np.zeros(t.shape))
        elif name.endswith("gamma") or name.endswith("slope"):
            store.set_data(name, np.ones(t.shape))
    head = np.zeros(store["head/weight"].shape)
    head[0, 0, 0, 0] = -40.0
    store.set_data("head/weight", head)
    store.set_data("head/bias", np.array([20.0]))
    return model.eval()


@pytest.fixture
def oracle_unet():
    return make_oracle_unet()


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
