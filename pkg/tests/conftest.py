import time

import numpy as np
import pytest

_ACCEPTANCE = []
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _ACCEPTANCE.append((mark.args[0], status, mark.args[1]))


@pytest.fixture
def measured(request):
    """``measured("loss 1e-4")`` appends a measurement to the criterion's summary line."""
    mark = request.node.get_closest_marker("acceptance")

    def note(text):
        _DETAILS[mark.args[0]] = text
    return note


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, title in sorted(_ACCEPTANCE, key=lambda r: int(r[0].lstrip("AC"))):
        detail = f"  [{_DETAILS[cid]}]" if cid in _DETAILS else ""
        terminalreporter.write_line(f"{status} {cid}: {title}{detail}")


TOY_DIM = 675
TOY_SIGMA = 0.1


def toy_clusters(rng, n):
    labels = rng.integers(0, 2, n)
    centers = np.where(labels[:, None] == 0, 1.0, -1.0)
    return centers + TOY_SIGMA * rng.standard_normal((n, TOY_DIM)), labels


@pytest.fixture(scope="session")
def toy_diffusion():
    """Denoiser trained on two Gaussian clusters at +1 and -1 in 675-D, plus 200 samples."""
    from brdfdiff.diffusion import DenoiserConfig, TrainConfig, sample_uncond, train

    rng = np.random.default_rng(0)
    train_x, _ = toy_clusters(rng, 500)
    held_out, _ = toy_clusters(rng, 200)
    t0 = time.perf_counter()
    params = train(train_x, TrainConfig(epochs=2000, cond_epochs=0, batch_size=100, lr_start=1e-3, lr_end=1e-5),
                   DenoiserConfig(width=64, depth=2, heads=4, ff_width=128))
    samples = sample_uncond(params, seed=1, n=200)
    return {"params": params, "held_out": held_out, "samples": samples, "seconds": time.perf_counter() - t0}
