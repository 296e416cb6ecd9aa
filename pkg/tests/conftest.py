import numpy as np
import pytest

from blowup_lab.grid import Params, make_grid
from blowup_lab.profile import build_profile


@pytest.fixture(scope="session")
def P3():
    return Params(3.0, 2.0)


@pytest.fixture(scope="session")
def grid64(P3):
    return make_grid(64, P3)


@pytest.fixture(scope="session")
def built(P3):
    """(trajectory, profile) for p=3, a=2 with f on."""
    return build_profile(P3, True)


@pytest.fixture(scope="session")
def profile3(built):
    return built[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _cli_run(out, kind, extra=(), config=None):
    import json
    import time

    from blowup_lab.cli import main
    args = [kind, "--out", str(out)]
    if config is not None:
        path = out.parent / f"{out.name}.json"
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    t0 = time.perf_counter()
    code = main(args + list(extra))
    elapsed = time.perf_counter() - t0
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return {"out": out, "code": code, "report": report, "elapsed": elapsed}


@pytest.fixture(scope="session")
def cli_run():
    return _cli_run


@pytest.fixture(scope="session")
def trap_runs(tmp_path_factory):
    """Trap runs through the CLI: seed 0 twice at eps 1e-2, once at eps 1e-3."""
    root = tmp_path_factory.mktemp("trap")
    return {
        "a": _cli_run(root / "a", "trap", ["--seed", "0"]),
        "b": _cli_run(root / "b", "trap", ["--seed", "0"]),
        "small": _cli_run(root / "small", "trap", ["--seed", "0"], config={"epsilon_star": 1e-3}),
    }
