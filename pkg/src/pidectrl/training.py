"""Offline dataset generation and Levenberg-Marquardt training of the
proposal network, with hold-out evaluation and k-fold cross-validation.

Labels come from the exhaustive controller: each switching instant pairs
the pre-decision feature vector with the binary action the exhaustive
search selected. Training minimizes the MSE of the saturating-linear
outputs against the 0/1 action bits with a damped Gauss-Newton update on
the full Jacobian (feasible at the few-hundred-parameter scale used here);
singular normal equations raise the damping, and hitting the iteration cap
returns the best parameters seen with a flag.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .accelerator import FeatureExtractor, MlpAccelerator, round_half_up
from .controller import ControlTrace, PscSession, run_psc
from .grid import DensityGrid

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Feature/label pairs with run provenance."""

    features: np.ndarray  # (B, F)
    labels: np.ndarray    # (B, n_bits) in {0, 1}
    run_ids: np.ndarray   # (B,)
    windows: np.ndarray   # (B,)
    feature_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_bits(self) -> int:
        return self.labels.shape[1]

    def label_histogram(self) -> dict[tuple[int, ...], int]:
        """Sample count per binary action, over the full {0,1}^n alphabet."""
        n = self.n_bits
        hist = {}
        for r in range(1 << n):
            bits = tuple((r >> (n - 1 - j)) & 1 for j in range(n))
            hist[bits] = 0
        for row in self.labels:
            hist[tuple(int(b) for b in row)] += 1
        return hist

    def save_csv(self, path) -> None:
        names = self.feature_names or default_feature_names(
            self.n_bits, self.features.shape[1] - self.n_bits - 3)
        cols = names + [f"bit_{j}" for j in range(self.n_bits)] + ["run_id", "window"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(len(self)):
                row = [f"{v:.17g}" for v in self.features[k]]
                row += [str(int(b)) for b in self.labels[k]]
                row += [str(int(self.run_ids[k])), str(int(self.windows[k]))]
                fh.write(",".join(row) + "\n")

    @classmethod
    def load_csv(cls, path, n_bits: int) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        data = np.array(rows, dtype=np.float64)
        n_feat = len(header) - n_bits - 2
        return cls(
            features=data[:, :n_feat],
            labels=data[:, n_feat:n_feat + n_bits].astype(np.int64),
            run_ids=data[:, -2].astype(np.int64),
            windows=data[:, -1].astype(np.int64),
            feature_names=header[:n_feat],
        )


def default_feature_names(n_bits: int, ndim: int) -> list[str]:
    names = [f"s_prev_{j}" for j in range(n_bits)]
    names += [f"mode_x{k + 1}" for k in range(ndim)]
    names += ["p_at_target", "dist_to_target", "kl_to_reference"]
    return names


def collect_samples(p0: DensityGrid, session: PscSession, extractor: FeatureExtractor,
                    run_id: int, stop_cost: float | None = None
                    ) -> tuple[Dataset, ControlTrace, DensityGrid]:
    """One exhaustive run, paired with per-window features and chosen bits."""
    plan = session.plan
    feats, labels, windows = [], [], []
    prev_bits = [(0,) * plan.n_inputs]

    def hook(m, values_before, row):
        feats.append(extractor.extract(values_before, prev_bits[0]))
        labels.append(plan.row_bits(row))
        windows.append(m)
        prev_bits[0] = plan.row_bits(row)

    final, trace = run_psc(p0, session, snapshot_every=0, stop_cost=stop_cost,
                           window_hook=hook)
    ds = Dataset(
        features=np.asarray(feats),
        labels=np.asarray(labels, dtype=np.int64),
        run_ids=np.full(len(feats), run_id, dtype=np.int64),
        windows=np.asarray(windows, dtype=np.int64),
        feature_names=default_feature_names(plan.n_inputs, session.domain.ndim),
    )
    return ds, trace, final


def merge_datasets(parts: list[Dataset]) -> Dataset:
    return Dataset(
        features=np.concatenate([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        run_ids=np.concatenate([p.run_ids for p in parts]),
        windows=np.concatenate([p.windows for p in parts]),
        feature_names=parts[0].feature_names,
    )


def generate_dataset(runs, out_csv=None) -> Dataset:
    """Collect samples from several exhaustive runs.

    `runs` holds (initial density, session, extractor) triples; run ids are
    their positions. When `out_csv` is given the dataset is written next to
    a `.labels.json` stratification report (sample count per binary action).
    """
    parts = []
    for run_id, (p0, session, extractor) in enumerate(runs):
        ds, _trace, _final = collect_samples(p0, session, extractor, run_id)
        parts.append(ds)
    dataset = merge_datasets(parts)
    if out_csv is not None:
        dataset.save_csv(out_csv)
        import json
        from pathlib import Path
        hist = {"".join(map(str, k)): v for k, v in dataset.label_histogram().items()}
        Path(str(out_csv) + ".labels.json").write_text(json.dumps(hist, indent=2))
    return dataset


# ---------------------------------------------------------------------------
# metrics

def exact_match(pred_bits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples with every output bit correct."""
    return float(np.all(pred_bits == labels, axis=1).mean())


def bit_accuracy(pred_bits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of individually correct bits (complement of the mean
    normalized Hamming distance)."""
    return float((pred_bits == labels).mean())


def predict_bits(net: MlpAccelerator, X: np.ndarray) -> np.ndarray:
    return round_half_up(np.clip(net.raw_outputs(X), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Levenberg-Marquardt

def zscore_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and population deviation; constant features are
    neutralized (deviation 1) with a warning so they standardize to zero."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = std <= 0.0
    if flat.any():
        warnings.warn(f"dropping {int(flat.sum())} constant feature(s) "
                      f"at indices {np.flatnonzero(flat).tolist()}", stacklevel=2)
        std = np.where(flat, 1.0, std)
    return mean, std


def _forward_caches(net: MlpAccelerator, X: np.ndarray):
    zn = (X - net.mean) / net.std
    h1 = np.tanh(zn @ net.weights[0] + net.biases[0])
    h2 = np.tanh(h1 @ net.weights[1] + net.biases[1])
    pre3 = h2 @ net.weights[2] + net.biases[2]
    y = np.clip(pre3, -1.0, 1.0)
    return zn, h1, h2, pre3, y


def _pack(net: MlpAccelerator) -> np.ndarray:
    return np.concatenate([a.ravel() for a in (*net.weights, *net.biases)])


def _unpack(net: MlpAccelerator, theta: np.ndarray) -> None:
    off = 0
    arrays = [*net.weights, *net.biases]
    for a in arrays:
        a[...] = theta[off:off + a.size].reshape(a.shape)
        off += a.size


def _jacobian(net: MlpAccelerator, X: np.ndarray):
    """Residual Jacobian d y_bk / d theta, rows ordered sample-major."""
    zn, h1, h2, pre3, y = _forward_caches(net, X)
    B = X.shape[0]
    n_out = y.shape[1]
    P = net.n_parameters
    J = np.zeros((B, n_out, P), dtype=np.float64)
    w1, w2, w3 = net.weights
    sizes = [w1.size, net.biases[0].size, w2.size, net.biases[1].size,
             w3.size, net.biases[2].size]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    d3 = (np.abs(pre3) < 1.0).astype(np.float64)  # satlins gate
    one_m_h2 = 1.0 - h2 ** 2
    one_m_h1 = 1.0 - h1 ** 2
    for k in range(n_out):
        g3 = d3[:, k]                                  # (B,)
        delta2 = (g3[:, None] * w3[None, :, k]) * one_m_h2   # (B, H2)
        delta1 = (delta2 @ w2.T) * one_m_h1                  # (B, H1)
        J[:, k, offs[0]:offs[1]] = np.einsum("bi,bj->bij", zn, delta1).reshape(B, -1)
        J[:, k, offs[1]:offs[2]] = delta1
        J[:, k, offs[2]:offs[3]] = np.einsum("bi,bj->bij", h1, delta2).reshape(B, -1)
        J[:, k, offs[3]:offs[4]] = delta2
        w3_block = np.zeros((B, *w3.shape))
        w3_block[:, :, k] = h2 * g3[:, None]
        J[:, k, offs[4]:offs[5]] = w3_block.reshape(B, -1)
        b3_block = np.zeros((B, n_out))
        b3_block[:, k] = g3
        J[:, k, offs[5]:offs[6]] = b3_block
    return J.reshape(B * n_out, P)


@dataclass
class FitResult:
    loss: float
    iterations: int
    converged: bool


def fit_lm(net: MlpAccelerator, X: np.ndarray, Y: np.ndarray,
           max_iter: int = 120, lam0: float = 1e-2, tol: float = 1e-9) -> FitResult:
    """Damped Gauss-Newton on the full Jacobian, adapting the damping factor.

    Accepts a step only if the MSE drops; otherwise the damping grows by 10x
    until either the step shrinks enough to help or the damping cap flags
    non-convergence and the best parameters seen are kept.
    """
    theta = _pack(net)
    best_theta = theta.copy()

    def loss_at() -> float:
        _, _, _, _, y = _forward_caches(net, X)
        return float(np.mean((y - Y) ** 2))

    lam = lam0
    loss = loss_at()
    best = loss
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(net, X)
        _, _, _, _, y = _forward_caches(net, X)
        r = (y - Y).reshape(-1)
        jtj = J.T @ J
        jtr = J.T @ r
        improved = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            _unpack(net, theta + delta)
            new_loss = loss_at()
            if new_loss < loss:
                theta = theta + delta
                lam = max(lam * 0.3, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved:
            _unpack(net, theta)
            break
        if loss - new_loss < tol * max(loss, 1e-30):
            loss = new_loss
            converged = True
            break
        loss = new_loss
        if loss < best:
            best = loss
            best_theta = theta.copy()
    if not converged and best < loss:
        _unpack(net, best_theta)
        loss = best
    if not converged:
        log.info("lm: stopped after %d iterations without meeting tol (loss %.3e)", it, loss)
    return FitResult(loss=loss, iterations=it, converged=converged)


# ---------------------------------------------------------------------------
# cross-validated training

@dataclass
class TrainingReport:
    n_samples: int
    n_parameters: int
    holdout_fraction: float
    fold_exact_match: list[float]
    fold_bit_accuracy: list[float]
    holdout_exact_match: float
    holdout_bit_accuracy: float
    final_loss: float
    converged: bool
    label_histogram: dict
    seed: int

    @property
    def cv_exact_match(self) -> tuple[float, float]:
        return float(np.mean(self.fold_exact_match)), float(np.std(self.fold_exact_match))

    @property
    def cv_bit_accuracy(self) -> tuple[float, float]:
        return float(np.mean(self.fold_bit_accuracy)), float(np.std(self.fold_bit_accuracy))

    def to_text(self) -> str:
        em, em_sd = self.cv_exact_match
        ba, ba_sd = self.cv_bit_accuracy
        lines = [
            "proposal network training report",
            f"samples: {self.n_samples}  parameters: {self.n_parameters} "
            f"(ratio {self.n_samples / self.n_parameters:.1f}:1)",
            f"hold-out fraction: {self.holdout_fraction}",
            f"seed: {self.seed}",
            "",
            "cross-validation (training partition):",
        ]
        for i, (e, b) in enumerate(zip(self.fold_exact_match, self.fold_bit_accuracy)):
            lines.append(f"  fold {i + 1}: exact match {e:.3f}  bit accuracy {b:.3f}")
        lines += [
            f"  mean exact match {em:.3f} +/- {em_sd:.3f}",
            f"  mean bit accuracy {ba:.3f} +/- {ba_sd:.3f}",
            "",
            f"hold-out: exact match {self.holdout_exact_match:.3f}  "
            f"bit accuracy {self.holdout_bit_accuracy:.3f}",
            f"final training MSE: {self.final_loss:.5e}  converged: {self.converged}",
            "",
            "label distribution: " + ", ".join(
                f"{''.join(map(str, k))}:{v}" for k, v in sorted(self.label_histogram.items())),
        ]
        return "\n".join(lines)


def train(dataset: Dataset, folds: int = 5, seed: int = 0, hidden=(20, 10),
          holdout_fraction: float = 0.15, max_iter: int = 120
          ) -> tuple[MlpAccelerator, TrainingReport]:
    """Hold-out split, k-fold cross-validation, then a final fit on the full
    training partition with Z-score statistics from that partition only."""
    n = len(dataset)
    n_par_est = MlpAccelerator.initialize(dataset.features.shape[1], dataset.n_bits,
                                          hidden, seed).n_parameters
    if n < 10 * n_par_est:
        warnings.warn(f"dataset of {n} samples is below 10x the {n_par_est} parameters",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n)))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    Xh, Yh = dataset.features[hold_idx], dataset.labels[hold_idx]
    Xt, Yt = dataset.features[train_idx], dataset.labels[train_idx]

    fold_em, fold_ba = [], []
    fold_sets = np.array_split(np.arange(len(train_idx)), folds)
    for f in range(folds):
        val = fold_sets[f]
        fit = np.concatenate([fold_sets[g] for g in range(folds) if g != f])
        net = _fit_fresh(Xt[fit], Yt[fit], hidden, seed + 100 + f, max_iter)
        pred = predict_bits(net, Xt[val])
        fold_em.append(exact_match(pred, Yt[val]))
        fold_ba.append(bit_accuracy(pred, Yt[val]))

    final = _fit_fresh(Xt, Yt, hidden, seed, max_iter)
    result = final.meta["fit"]
    pred_h = predict_bits(final, Xh)
    report = TrainingReport(
        n_samples=n,
        n_parameters=final.n_parameters,
        holdout_fraction=holdout_fraction,
        fold_exact_match=fold_em,
        fold_bit_accuracy=fold_ba,
        holdout_exact_match=exact_match(pred_h, Yh),
        holdout_bit_accuracy=bit_accuracy(pred_h, Yh),
        final_loss=result["loss"],
        converged=result["converged"],
        label_histogram=dataset.label_histogram(),
        seed=seed,
    )
    return final, report


def _fit_fresh(X, Y, hidden, seed, max_iter) -> MlpAccelerator:
    net = MlpAccelerator.initialize(X.shape[1], Y.shape[1], hidden, seed)
    net.mean, net.std = zscore_stats(X)
    res = fit_lm(net, X, Y.astype(np.float64), max_iter=max_iter)
    net.meta["fit"] = {"loss": res.loss, "iterations": res.iterations,
                       "converged": res.converged}
    net.meta["n_parameters"] = net.n_parameters
    return net
