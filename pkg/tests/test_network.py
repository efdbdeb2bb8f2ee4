import numpy as np
import pytest

from pidectrl.grid import DomainSpec
from pidectrl.network import (GeneParams, GrnParams, activation_field, burst_density,
                              inducer_scaling, modulated_repression,
                              regulatory_probability)

from conftest import toggle_params


def test_inducer_scaling_identities():
    assert inducer_scaling(0.0, 0.1, 2.0) == 1.0
    for mu in (0.5, 1.0, 2.0, 7.0):
        assert abs(inducer_scaling(0.1, 0.1, mu) - 0.5) < 1e-12
    with pytest.raises(ValueError):
        inducer_scaling(-1.0, 0.1, 2.0)


def test_inducer_scaling_case1_value():
    # theta=0.1, mu=2 at the case-1 saturation level 99.5
    f = inducer_scaling(99.5, 0.1, 2.0)
    assert abs(f - 1.0101e-6) / 1.0101e-6 < 1e-3


def test_inducer_scaling_monotone():
    grid = np.linspace(0.0, 200.0, 400)
    vals = [inducer_scaling(i, 0.1, 2.0) for i in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_modulated_repression_identities():
    assert modulated_repression(0.0, 30.0, 4.0, 1.0) == 1.0
    assert abs(modulated_repression(30.0, 30.0, 4.0, 1.0) - 0.5) < 1e-12


def test_modulated_repression_case1_saturation():
    f = inducer_scaling(99.5, 0.1, 2.0)
    rho = modulated_repression(300.0, 30.0, 4.0, f)
    assert abs(rho - 0.99) < 1e-3  # suppression target 1 - alpha at the boundary
    # composing with leakage 0.1 gives the activation probability
    eps = 0.1
    c = rho + eps * (1.0 - rho)
    assert abs(c - 0.991) < 1e-3


def test_modulated_repression_large_exponent_stability():
    # case-3 scale: H = 9, x up to 1000; ratio form keeps this finite
    val = modulated_repression(1000.0, 200.0, 9.0, 1.0)
    assert 0.0 < val < 1e-6
    assert np.isfinite(val)


def test_regulatory_probability_bounds_and_extremes():
    params = toggle_params()
    dom = DomainSpec((300.0, 300.0), (60, 60))
    for u in ([0.0, 0.0], [56.0, 0.0], [56.0, 56.0]):
        for gene in (0, 1):
            field = activation_field(dom, np.array(u), gene, params)
            eps = params.genes[gene].epsilon
            assert field.min() >= eps - 1e-12
            assert field.max() <= 1.0 + 1e-12
    # rho extremes map to c extremes
    g = params.genes[0]
    assert regulatory_probability((0.0, 0.0), (0.0, 0.0), 0, params) == 1.0
    c_floor = g.epsilon if g.epsilon else 0.0
    rho_zero_c = c_floor + 0.0
    huge = regulatory_probability((0.0, 1e12), (0.0, 0.0), 0, params)
    assert abs(huge - rho_zero_c) < 1e-6


def test_activation_monotone_in_inducer():
    params = toggle_params()
    dom = DomainSpec((300.0, 300.0), (40, 40))
    prev = None
    for level in (0.0, 1.0, 10.0, 56.0):
        field = activation_field(dom, np.array([level, 0.0]), 0, params)
        if prev is not None:
            assert (field >= prev - 1e-12).all()
        prev = field


def test_activation_field_matches_pointwise():
    params = toggle_params()
    dom = DomainSpec((300.0, 300.0), (15, 17))
    u = np.array([10.0, 0.0])
    field = activation_field(dom, u, 0, params)
    for i in (0, 7, 14):
        for j in (0, 8, 16):
            x = dom.cell_center((i, j))
            assert abs(field[i, j] - regulatory_probability(x, u, 0, params)) < 1e-14


def test_constitutive_gene_activation_is_one():
    params = GrnParams((GeneParams(k_m=5.0, k_x=50.0, gamma_m=10.0, gamma_x=1.0),))
    dom = DomainSpec((100.0,), (30,))
    assert np.all(activation_field(dom, np.array([0.0]), 0, params) == 1.0)


def test_burst_density():
    b = 100.0 / 8.4  # case-1 gene 1 mean burst size
    assert abs(b - 11.904761904761905) < 1e-12
    assert abs(burst_density(0.0, b) - 1.0 / b) < 1e-15
    s = (np.arange(40000) + 0.5) * (40.0 * b / 40000.0)
    mass = burst_density(s, b).sum() * (40.0 * b / 40000.0)
    assert abs(mass - 1.0) < 1e-6
    with pytest.raises(ValueError):
        burst_density(1.0, 0.0)


def test_params_validation():
    good = dict(k_m=1.0, k_x=1.0, gamma_m=1.0, gamma_x=1.0)
    with pytest.raises(ValueError):
        GrnParams((GeneParams(**{**good, "gamma_x": 0.0}),))
    with pytest.raises(ValueError):
        GrnParams((GeneParams(**{**good, "epsilon": 1.5}),))
    with pytest.raises(ValueError):
        GrnParams((GeneParams(**good, regulator=3, hill_k=1.0, hill_h=1.0),))
    with pytest.raises(ValueError):
        GrnParams((GeneParams(**good, regulator=0, hill_k=-2.0, hill_h=1.0),))
    assert toggle_params().strict_leakage()
    loose = toggle_params(epsilon=0.0)
    assert not loose.strict_leakage()
