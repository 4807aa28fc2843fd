import numpy as np
import pytest

from sched_mdp import ProcessModel, SystemConfig, build_mdp, solve


def example_models():
    m1 = ProcessModel(A=[[1.4]], C=[[1.0]], Q=[[1.0]], R=[[1.0]], d=3, name="process1")
    m2 = ProcessModel(A=[[1.2, 1.0], [0.0, 1.0]], C=[[1.0, 0.0]], Q=np.eye(2), R=[[1.0]], d=4,
                      name="process2")
    return m1, m2


def twin_models(d=1):
    return tuple(ProcessModel(A=[[1.4]], C=[[1.0]], Q=[[1.0]], R=[[1.0]], d=d, name=f"twin{i + 1}")
                 for i in range(2))


def random_model(rng, d):
    if rng.random() < 0.5:
        return ProcessModel(A=[[rng.uniform(1.05, 1.5)]], C=[[1.0]], Q=[[rng.uniform(0.2, 2)]],
                            R=[[rng.uniform(0.2, 2)]], d=d)
    while True:
        A = rng.normal(size=(2, 2))
        A *= rng.uniform(1.05, 1.4) / np.abs(np.linalg.eigvals(A)).max()
        if np.abs(np.linalg.eigvals(A)).min() >= 1:
            break
    L = rng.normal(size=(2, 2))
    return ProcessModel(A=A, C=rng.normal(size=(1, 2)), Q=L @ L.T + 0.1 * np.eye(2),
                        R=[[rng.uniform(0.2, 2)]], d=d)


def random_instances(count, seed=7, tau_max=40):
    """Two-sensor instances with unstable scalar or 2-D processes and d in 1..4."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        models = tuple(random_model(rng, int(rng.integers(1, 5))) for _ in range(2))
        out.append(SystemConfig(models, 1, tau_max))
    return out


@pytest.fixture(scope="session")
def example_cfg():
    return SystemConfig(example_models(), m=1, tau_max=30)


@pytest.fixture(scope="session")
def example_mdp(example_cfg):
    return build_mdp(example_cfg)


@pytest.fixture(scope="session")
def example_sol(example_mdp):
    return solve(example_mdp)


@pytest.fixture(scope="session")
def twin_mdp():
    return build_mdp(SystemConfig(twin_models(), m=1, tau_max=10))


@pytest.fixture(scope="session")
def twin_sol(twin_mdp):
    return solve(twin_mdp)
