"""Neural proposal network for the switching controller.

A compact feature vector (previous action bits, modal location, density at
the target, distance to the target, KL divergence from a target reference)
feeds a small tanh MLP whose saturating-linear output is projected onto
[0, 1] and rounded half-up into a binary configuration. The hybrid loop
integrates the proposal once per window and falls back to the exhaustive
search only when the proposal fails to keep the realized cost from
decreasing, so the exhaustive controller's guarantees are preserved.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import ControlTrace, PscSession, WindowRecord, _trace_meta
from .grid import KL_FLOOR, DensityGrid, DomainSpec, gaussian_density

_MODEL_MAGIC = b"PMLP"
_MODEL_VERSION = 1


class FeatureExtractor:
    """Builds the controller state features for one target configuration.

    The KL reference is a narrow grid-supported Gaussian at the (snapped)
    target; its width is metadata, not physics, and is recorded so runs are
    reproducible.
    """

    def __init__(self, domain: DomainSpec, target, n_inputs: int,
                 ref_sigma=None):
        self.domain = domain
        self.n_inputs = int(n_inputs)
        self.target_index = domain.nearest_cell(target)
        self.target = np.asarray(domain.cell_center(self.target_index))
        self.snap_distance = float(np.linalg.norm(self.target - np.asarray(target, dtype=float)))
        if ref_sigma is None:
            ref_sigma = tuple(0.05 * u for u in domain.upper)
        self.ref_sigma = tuple(float(s) for s in np.atleast_1d(ref_sigma)) \
            if np.ndim(ref_sigma) else (float(ref_sigma),) * domain.ndim
        self.reference = gaussian_density(domain, self.target, self.ref_sigma)
        self._ref_floored = np.maximum(self.reference.values, KL_FLOOR)

    @property
    def n_features(self) -> int:
        return self.n_inputs + self.domain.ndim + 3

    def extract(self, values: np.ndarray, prev_bits) -> np.ndarray:
        """Feature vector at one switching instant; deterministic in its inputs."""
        if float(values.max()) <= 0.0:
            raise ValueError("cannot extract features from an all-zero density")
        prev = np.asarray(prev_bits, dtype=np.float64).reshape(-1)
        if prev.size != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} previous-action bits, got {prev.size}")
        # argmax in storage order, matching DensityGrid.argmax_index
        mode_idx = np.unravel_index(int(np.argmax(values)), values.shape)
        x_mode = np.asarray(self.domain.cell_center(mode_idx))
        p_at_target = float(values[self.target_index])
        dist = float(np.linalg.norm(x_mode - self.target))
        mask = values > 0.0
        kl = float(np.sum(values[mask] * np.log(values[mask] / self._ref_floored[mask])))
        kl = max(kl * self.domain.cell_volume, 0.0)
        return np.concatenate([prev, x_mode, [p_at_target, dist, kl]])

    def metadata(self) -> dict:
        return {
            "target": [float(t) for t in self.target],
            "target_index": list(self.target_index),
            "snap_distance": self.snap_distance,
            "ref_sigma": list(self.ref_sigma),
        }


def _satlins(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


@dataclass
class MlpAccelerator:
    """Two-hidden-layer tanh network with saturating-linear output.

    Inputs are standardized with the stored per-feature statistics before
    the first layer; constant training features are neutralized (their
    stored deviation is 1 and mean equals the constant, so they contribute
    a fixed zero) rather than re-shaping the input layer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, n_in: int, n_out: int, hidden=(20, 10), seed: int = 0) -> "MlpAccelerator":
        rng = np.random.default_rng(seed)
        sizes = [n_in, *hidden, n_out]
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(a)
            ws.append(rng.uniform(-bound, bound, size=(a, b)))
            bs.append(np.zeros(b))
        return cls(ws, bs, np.zeros(n_in), np.ones(n_in),
                   meta={"hidden": list(hidden), "seed": seed})

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_parameters(self) -> int:
        return int(sum(w.size for w in self.weights) + sum(b.size for b in self.biases))

    def raw_outputs(self, z: np.ndarray) -> np.ndarray:
        """Batch forward pass up to the saturating-linear output in [-1, 1]."""
        a = (np.atleast_2d(z) - self.mean) / self.std
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w + b)
        return _satlins(a @ self.weights[-1] + self.biases[-1])

    def forward(self, z: np.ndarray) -> np.ndarray:
        """Single-sample proposal in [0, 1]^n (min-max projection of the output)."""
        return np.clip(self.raw_outputs(z)[0], 0.0, 1.0)

    def save(self, path) -> None:
        header = {
            "layer_sizes": self.layer_sizes,
            "activations": ["tanh"] * (len(self.weights) - 1) + ["satlins"],
            "projection": "minmax01_round_half_up",
            "meta": self.meta,
        }
        blob = json.dumps(header).encode()
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(struct.pack("<II", _MODEL_VERSION, len(blob)))
            fh.write(blob)
            for arr in [self.mean, self.std, *self.weights, *self.biases]:
                np.ascontiguousarray(arr, dtype="<f8").tofile(fh)

    @classmethod
    def load(cls, path) -> "MlpAccelerator":
        with open(path, "rb") as fh:
            if fh.read(4) != _MODEL_MAGIC:
                raise ValueError("not a model file")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != _MODEL_VERSION:
                raise ValueError(f"unsupported model version {version}")
            header = json.loads(fh.read(hlen).decode())
            sizes = header["layer_sizes"]
            mean = np.fromfile(fh, dtype="<f8", count=sizes[0])
            std = np.fromfile(fh, dtype="<f8", count=sizes[0])
            ws, bs = [], []
            for a, b in zip(sizes[:-1], sizes[1:]):
                ws.append(np.fromfile(fh, dtype="<f8", count=a * b).reshape(a, b))
            for b in sizes[1:]:
                bs.append(np.fromfile(fh, dtype="<f8", count=b))
        return cls(ws, bs, mean, std, meta=header.get("meta", {}))


def extract_features(p: DensityGrid, prev_bits, extractor: FeatureExtractor) -> np.ndarray:
    return extractor.extract(p.values, prev_bits)


def round_half_up(s_hat: np.ndarray) -> np.ndarray:
    """0.5 rounds to 1, unlike banker's rounding."""
    return np.floor(np.asarray(s_hat) + 0.5).astype(np.int64)


def propose(s_hat: np.ndarray, plan) -> tuple[int, tuple[int, ...]]:
    """Map a [0,1]^n proposal to the nearest configuration row.

    Rounding half-up lands exactly on a binary pattern, so the nearest-row
    search degenerates to reading the pattern's counting index.
    """
    bits = round_half_up(s_hat)
    row = plan.bits_to_row(bits)
    return row, tuple(int(b) for b in bits)


def accelerated_window(session: PscSession, values: np.ndarray, net: MlpAccelerator,
                       extractor: FeatureExtractor, j_prev: float, prev_bits):
    """One hybrid window: integrate the proposal, accept or fall back.

    The proposal is accepted when its predicted cost does not fall below the
    cost realized at the previous switching instant; otherwise the remaining
    configurations are evaluated (the proposal's integration is reused, never
    repeated) and the argmax over all stored costs is taken. Returns
    (chosen row, stored next density, its cost, all candidate costs with NaN
    for unevaluated ones, accepted flag, evaluations spent).
    """
    plan = session.plan
    z = extractor.extract(values, prev_bits)
    r_star, _ = propose(net.forward(z), plan)
    predicted = {r_star: session.propagate_window(values, r_star)}
    costs = np.full(plan.n_configs, np.nan)
    costs[r_star] = session.bound_cost.evaluate(predicted[r_star])
    accepted = bool(costs[r_star] >= j_prev)
    if accepted:
        chosen = r_star
        evals = 1
    else:
        rest = [r for r in range(plan.n_configs) if r != r_star]
        predicted.update(session.evaluate_rows(values, rest))
        for r in rest:
            costs[r] = session.bound_cost.evaluate(predicted[r])
        chosen = 0
        for r in range(1, plan.n_configs):
            if costs[r] > costs[chosen]:
                chosen = r
        evals = plan.n_configs
    return chosen, predicted[chosen], float(costs[chosen]), costs, accepted, evals


def run_accelerated_psc(p0: DensityGrid, session: PscSession, net: MlpAccelerator,
                        extractor: FeatureExtractor,
                        snapshot_every: int = 10,
                        stop_cost: float | None = None,
                        shadow_hook=None) -> tuple[DensityGrid, ControlTrace]:
    """Hybrid proposal/fallback control loop over the planned windows.

    The first window's acceptance baseline is the initial density's own
    cost. `shadow_hook(m, values_before)` supports side-by-side validation
    against the exhaustive controller.
    """
    plan = session.plan
    trace = ControlTrace(plan.n_inputs, plan.window_steps, session.cfg.dt,
                         meta=_trace_meta(session) | {"accelerated": True,
                                                      "features": extractor.metadata()})
    trace.snapshots.append((-1, p0))
    values = p0.values
    t = p0.time
    j_prev = session.bound_cost.evaluate(values)
    prev_bits = (0,) * plan.n_inputs
    run_start = time.perf_counter()
    for m in range(plan.n_windows):
        w_start = time.perf_counter()
        if shadow_hook is not None:
            shadow_hook(m, values)
        chosen, values, j_prev, costs, accepted, _ = accelerated_window(
            session, values, net, extractor, j_prev, prev_bits)
        t += plan.window_steps * session.cfg.dt
        prev_bits = plan.row_bits(chosen)
        trace.windows.append(WindowRecord(
            index=m, t_end=t, chosen_row=chosen, chosen_bits=prev_bits,
            cost=j_prev, candidate_costs=tuple(float(c) for c in costs),
            pide_evals_total=session.pide_evals, accepted=accepted,
            wall_time=time.perf_counter() - w_start,
        ))
        if m % max(snapshot_every, 1) == 0 or m == plan.n_windows - 1:
            trace.snapshots.append((m, DensityGrid(session.domain, values, t)))
        if stop_cost is not None and j_prev >= stop_cost:
            break
    trace.elapsed_s = time.perf_counter() - run_start
    return DensityGrid(session.domain, values, t), trace
