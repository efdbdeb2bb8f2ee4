import pytest

from pidectrl.grid import DomainSpec
from pidectrl.network import GeneParams, GrnParams
from pidectrl.solver import StepConfig


@pytest.fixture(scope="session")
def step_cfg():
    return StepConfig(dt=0.005)


@pytest.fixture(scope="session")
def constitutive_params():
    """Single unregulated gene: burst rate 10, decay 1, mean burst size 10."""
    return GrnParams((GeneParams(k_m=10.0, k_x=100.0, gamma_m=10.0, gamma_x=1.0),))


@pytest.fixture(scope="session")
def domain_1d():
    return DomainSpec((400.0,), (600,))


def toggle_params(k_m=10.0, k_x=100.0, gamma_m=10.0, hill_k=40.0, epsilon=0.1):
    """Symmetric two-gene toggle switch with inducers on both edges."""
    mk = lambda reg: GeneParams(k_m=k_m, k_x=k_x, gamma_m=gamma_m, gamma_x=1.0,
                                epsilon=epsilon, regulator=reg, hill_k=hill_k,
                                hill_h=4.0, theta=0.1, mu=2.0)
    return GrnParams((mk(1), mk(0)))


@pytest.fixture(scope="session")
def toggle2():
    return toggle_params()


@pytest.fixture(scope="session")
def small_domain_2d():
    return DomainSpec((300.0, 300.0), (64, 64))
