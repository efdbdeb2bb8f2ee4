"""Kinetic and regulatory model of an n-gene bursty network.

Each gene i carries burst production at rate k_m^i, gated by an activation
probability c_i(x, u) built from Hill repression by a single regulator
protein, an inducer that weakens that repression, and a basal leakage
floor. Protein bursts are exponentially distributed with mean
b_i = k_x^i / gamma_m^i; proteins decay at rate gamma_x^i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DomainSpec


@dataclass(frozen=True)
class GeneParams:
    """Kinetics and (optional) regulation of a single gene.

    regulator is the index of the repressing protein, or None for a
    constitutive gene (activation identically 1). theta/mu describe the
    inducer that relieves this gene's repression; genes without an inducer
    leave them None and their scaling factor is fixed at 1.
    """

    k_m: float
    k_x: float
    gamma_m: float
    gamma_x: float
    epsilon: float = 0.0
    regulator: int | None = None
    hill_k: float | None = None
    hill_h: float | None = None
    theta: float | None = None
    mu: float | None = None

    @property
    def burst_size(self) -> float:
        return self.k_x / self.gamma_m


@dataclass(frozen=True)
class GrnParams:
    """Validated parameter set for the whole network."""

    genes: tuple[GeneParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))
        n = len(self.genes)
        for i, g in enumerate(self.genes):
            if g.gamma_x <= 0.0:
                raise ValueError(f"genes[{i}].gamma_x must be positive")
            if g.gamma_m <= 0.0:
                raise ValueError(f"genes[{i}].gamma_m must be positive")
            if g.k_m < 0.0 or g.k_x <= 0.0:
                raise ValueError(f"genes[{i}] rates must be non-negative (k_x positive)")
            if not np.isfinite(g.burst_size) or g.burst_size <= 0.0:
                raise ValueError(f"genes[{i}] mean burst size must be positive and finite")
            if not 0.0 <= g.epsilon <= 1.0:
                raise ValueError(f"genes[{i}].epsilon must lie in [0, 1]")
            if g.regulator is not None:
                if not 0 <= g.regulator < n:
                    raise ValueError(f"genes[{i}].regulator out of range")
                if g.hill_k is None or g.hill_k <= 0.0:
                    raise ValueError(f"genes[{i}].hill_k must be positive")
                if g.hill_h is None or g.hill_h <= 0.0:
                    raise ValueError(f"genes[{i}].hill_h must be positive")
            if g.theta is not None and g.theta <= 0.0:
                raise ValueError(f"genes[{i}].theta must be positive")
            if g.mu is not None and g.mu <= 0.0:
                raise ValueError(f"genes[{i}].mu must be positive")

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    @property
    def gamma_x(self) -> np.ndarray:
        return np.array([g.gamma_x for g in self.genes])

    @property
    def k_m(self) -> np.ndarray:
        return np.array([g.k_m for g in self.genes])

    @property
    def burst_sizes(self) -> np.ndarray:
        return np.array([g.burst_size for g in self.genes])

    def strict_leakage(self) -> bool:
        """True when every regulated gene has epsilon > 0 (needed for the
        geometric-contraction experiments)."""
        return all(g.epsilon > 0.0 for g in self.genes if g.regulator is not None)


def inducer_scaling(inducer: float, theta: float, mu: float) -> float:
    """Repression-weakening factor F(I) = 1 / (1 + (I/theta)^mu) in (0, 1]."""
    if inducer < 0.0:
        raise ValueError("inducer concentration must be non-negative")
    if theta <= 0.0 or mu <= 0.0:
        raise ValueError("theta and mu must be positive")
    return 1.0 / (1.0 + (inducer / theta) ** mu)


def modulated_repression(x_reg, hill_k: float, hill_h: float, scaling: float):
    """Repression factor K^H / (K^H + x^H * F), evaluated in ratio form.

    The (x/K)^H form keeps intermediates small even for H up to 9 and
    x up to 1e3, where x^H alone would sit near the float64 ceiling.
    """
    ratio = np.asarray(x_reg, dtype=np.float64) / hill_k
    out = 1.0 / (1.0 + ratio ** hill_h * scaling)
    if np.ndim(x_reg) == 0:
        return float(out)
    return out


def gene_scaling(params: GrnParams, gene: int, u) -> float:
    """Inducer scaling for one gene under input vector u (1 when uninducible)."""
    g = params.genes[gene]
    if g.theta is None or g.mu is None:
        return 1.0
    return inducer_scaling(float(u[gene]), g.theta, g.mu)


def regulatory_probability(x, u, gene: int, params: GrnParams) -> float:
    """Activation probability c_i(x, u) = rho + eps*(1 - rho) at one state point."""
    g = params.genes[gene]
    if g.regulator is None:
        return 1.0
    rho = modulated_repression(float(x[g.regulator]), g.hill_k, g.hill_h,
                               gene_scaling(params, gene, u))
    return rho + g.epsilon * (1.0 - rho)


def activation_field(domain: DomainSpec, u, gene: int, params: GrnParams) -> np.ndarray:
    """c_i(x, u) evaluated on the full grid (broadcast along the regulator axis)."""
    g = params.genes[gene]
    if g.regulator is None:
        return np.ones(domain.shape)
    x_reg = domain.centers(g.regulator)
    rho = modulated_repression(x_reg, g.hill_k, g.hill_h, gene_scaling(params, gene, u))
    c_line = rho + g.epsilon * (1.0 - rho)
    shape = [1] * domain.ndim
    shape[g.regulator] = domain.cells[g.regulator]
    return np.broadcast_to(c_line.reshape(shape), domain.shape).copy()


def burst_density(s, burst_size: float):
    """Exponential jump-size density with mean `burst_size`."""
    if burst_size <= 0.0:
        raise ValueError("burst size must be positive")
    return np.exp(-np.asarray(s, dtype=np.float64) / burst_size) / burst_size
