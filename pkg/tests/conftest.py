import numpy as np
import pytest

from smartmrt.design import DesignSpec, Trajectory, TrialData
from smartmrt.model import example1_spec
from smartmrt.rows import replicate
from smartmrt.sim import SimConfig, rep_rng, simulate_one


def make_trial(n=40, T=8, t_star=4, variant="II", p=0.5, seed=0, eligible_rate=1.0,
               x0=False):
    """Small random trial consistent with a restricted design."""
    rng = np.random.default_rng(seed)
    trajs = []
    for k in range(n):
        z1 = int(rng.choice([-1, 1]))
        r = int(rng.random() < 0.4)
        if variant == "I":
            z2 = int(rng.choice([-1, 1]))
        elif variant == "III" and r == 0 and z1 == -1:
            z2 = 1
        else:
            z2 = 0 if r == 1 else int(rng.choice([-1, 1]))
        i = (rng.random(T) < eligible_rate).astype(float)
        i[0] = 1.0
        a = np.where(i == 1, (rng.random(T) < p).astype(float), np.nan)
        pp = np.where(i == 1, p, np.nan)
        y = rng.normal(size=T) + 0.3 * z1 + np.nan_to_num(a) * 0.5
        x = rng.normal(size=(T, 1))
        trajs.append(Trajectory(id=f"p{k:03d}", z1=z1, r=r, z2=z2, t=np.arange(1, T + 1),
                                i=i, a=a, p=pp, y=y, x=x, x_names=("state",),
                                x0={"age": float(rng.normal())} if x0 else {}))
    design = DesignSpec(smart_variant=variant, t_star=t_star, t_max=T, mrt_prob=p)
    return TrialData.from_trajectories(trajs), design


@pytest.fixture(scope="session")
def small_trial():
    return make_trial()


@pytest.fixture(scope="session")
def sim_scenario1():
    cfg = SimConfig(scenario="I", n=60, seed=11)
    data = simulate_one(cfg, rep_rng(cfg.seed, 0, "test"))
    return cfg, data


@pytest.fixture(scope="session")
def sim_rows(sim_scenario1):
    cfg, data = sim_scenario1
    return replicate(data, cfg.design(), example1_spec())


def brute_force_wls(X, y, w):
    """Weighted normal equations solved with plain numpy (independent oracle)."""
    XtW = X.T * w
    return np.linalg.solve(XtW @ X, XtW @ y)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
