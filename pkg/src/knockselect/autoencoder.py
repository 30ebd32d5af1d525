"""Fixed-length subset descriptors and the autoencoders that embed them.

A feature subset is summarised per column slot by six statistics
(mean, std, min, max, skewness, mean |rho| to the other selected
columns). Deselected slots are zero, so every subset maps to a vector of
length ``d * 6`` regardless of how many columns it keeps or how many rows
the data has.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .data import Dataset
from .knockoff import abs_corr_cross
from .nn import Adam, DenseNet, Layer, NumericalError, TrainConfig, flat_grads
from .seeding import stream

N_STATS = 6
N_BOOTSTRAP = 64


@dataclass(frozen=True)
class SubsetDescriptor:
    vector: np.ndarray
    mask: np.ndarray


def column_stats(x: np.ndarray) -> np.ndarray:
    """Per-column (mean, std, min, max, skewness); skewness is 0 for constant columns."""
    mean = x.mean(axis=0)
    xc = x - mean
    std = np.sqrt((xc ** 2).mean(axis=0))
    safe = np.where(std > 0, std, 1.0)
    skew = np.where(std > 0, ((xc / safe) ** 3).mean(axis=0), 0.0)
    return np.column_stack([mean, std, x.min(axis=0), x.max(axis=0), skew])


def _peer_corr(abs_corr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean |rho| of each selected column to the other selected columns (0 with no peers)."""
    m = mask.astype(float)
    n_sel = m.sum()
    if n_sel < 2:
        return np.zeros(mask.shape[-1])
    # diagonal of abs_corr is 1 for live columns and 0 for constant ones
    sums = abs_corr @ m - np.diagonal(abs_corr) * m
    return np.where(mask, sums / (n_sel - 1), 0.0)


def _assemble(stats: np.ndarray, peer: np.ndarray, mask: np.ndarray) -> np.ndarray:
    full = np.concatenate([stats, peer[:, None]], axis=1)
    full[~mask] = 0.0
    return full.ravel()


def descriptor_from_matrix(x: np.ndarray, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[1],):
        raise ValueError(f"mask length {mask.shape} does not match {x.shape[1]} columns")
    if not mask.any():
        return np.zeros(x.shape[1] * N_STATS)
    return _assemble(column_stats(x), _peer_corr(abs_corr_cross(x, x), mask), mask)


def build_descriptor(ds: Dataset, mask) -> SubsetDescriptor:
    mask = np.asarray(mask, dtype=bool)
    return SubsetDescriptor(vector=descriptor_from_matrix(ds.features, mask), mask=mask.copy())


class DescriptorBank:
    """Precomputed statistics for the data and a fixed set of row bootstraps.

    Column statistics do not depend on the mask, so each call only masks
    and recombines cached arrays. Results equal ``descriptor_from_matrix``
    on the corresponding (resampled) matrix.
    """

    def __init__(self, x: np.ndarray, n_bootstrap: int = N_BOOTSTRAP, seed: int = 0):
        self.d = x.shape[1]
        n = x.shape[0]
        rng = stream(seed, "bootstrap")
        self.stats = column_stats(x)
        self.abs_corr = abs_corr_cross(x, x)
        self.boot_stats = np.empty((n_bootstrap, self.d, N_STATS - 1))
        self.boot_corr = np.empty((n_bootstrap, self.d, self.d))
        for b in range(n_bootstrap):
            xb = x[rng.integers(0, n, size=n)]
            self.boot_stats[b] = column_stats(xb)
            self.boot_corr[b] = abs_corr_cross(xb, xb)

    @property
    def dim(self) -> int:
        return self.d * N_STATS

    def descriptor(self, mask) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return np.zeros(self.dim)
        return _assemble(self.stats, _peer_corr(self.abs_corr, mask), mask)

    def bootstrap_descriptors(self, mask) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        out = np.zeros((len(self.boot_stats), self.dim))
        if not mask.any():
            return out
        m = mask.astype(float)
        n_sel = m.sum()
        for b in range(len(out)):
            if n_sel < 2:
                peer = np.zeros(self.d)
            else:
                c = self.boot_corr[b]
                peer = np.where(mask, (c @ m - np.diagonal(c) * m) / (n_sel - 1), 0.0)
            out[b] = _assemble(self.boot_stats[b], peer, mask)
        return out


@dataclass
class SubsetAutoencoder:
    encoder: DenseNet
    decoder: DenseNet
    trained_on: str = "untrained"
    trace: List[float] = field(default_factory=list)

    @classmethod
    def build(cls, dim: int, code: int = 32, hidden: Optional[int] = 64, seed: int = 0,
              linear: bool = False) -> "SubsetAutoencoder":
        """Default shape dim -> hidden (ReLU) -> code (tanh), mirrored back to dim.

        ``linear=True`` drops the hidden layers and activations entirely.
        """
        if linear:
            enc = DenseNet.build([dim, code], ["identity"], seed=seed)
            dec = DenseNet.build([code, dim], ["identity"], seed=seed + 1)
        else:
            enc = DenseNet.build([dim, hidden, code], ["relu", "tanh"], seed=seed)
            dec = DenseNet.build([code, hidden, dim], ["relu", "identity"], seed=seed + 1)
        return cls(enc, dec)

    @property
    def dim(self) -> int:
        return self.encoder.n_in

    @property
    def code_size(self) -> int:
        return self.encoder.n_out

    def copy(self) -> "SubsetAutoencoder":
        return SubsetAutoencoder(self.encoder.copy(), self.decoder.copy(), self.trained_on, list(self.trace))

    def params(self):
        return self.encoder.params() + self.decoder.params()


def _vector(desc) -> np.ndarray:
    return desc.vector if isinstance(desc, SubsetDescriptor) else np.asarray(desc, dtype=float)


def encode(ae: SubsetAutoencoder, desc) -> np.ndarray:
    v = _vector(desc)
    if v.shape[-1] != ae.dim:
        raise ValueError(f"descriptor length {v.shape[-1]} does not match autoencoder input {ae.dim}")
    return ae.encoder.predict(v)


def reconstruct(ae: SubsetAutoencoder, desc) -> np.ndarray:
    return ae.decoder.predict(encode(ae, desc))


def reconstruction_loss(ae: SubsetAutoencoder, desc) -> float:
    """Squared L2 error of decoding the encoding back to the descriptor."""
    v = _vector(desc)
    diff = reconstruct(ae, v) - v
    return float(np.sum(diff * diff))


def _ae_step(ae: SubsetAutoencoder, opt, xb: np.ndarray, yb: np.ndarray) -> float:
    code = ae.encoder.forward(xb)
    rec = ae.decoder.forward(code)
    diff = rec - yb
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    dec_grads, dcode = ae.decoder.backward(2.0 * diff / diff.shape[0], return_input_grad=True)
    enc_grads = ae.encoder.backward(dcode)
    opt.step(ae.params(), flat_grads(enc_grads) + flat_grads(dec_grads))
    return loss


def _train(ae, inputs, targets, epochs, batch_size, opt, seed) -> List[float]:
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    if x.shape[0] < 1:
        raise ValueError("need at least one training descriptor")
    n = x.shape[0]
    bs = min(batch_size, n)
    rng = stream(seed, "ae-batches")
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        losses = []
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                losses.append(_ae_step(ae, opt, x[idx], y[idx]))
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise NumericalError(f"autoencoder training diverged at epoch {epoch}; trace tail {trace[-5:]}")
        trace.append(loss)
    return trace


def train_autoencoder(samples, cfg: TrainConfig, code: int = 32, hidden: Optional[int] = 64,
                      linear: bool = False, ae: Optional[SubsetAutoencoder] = None,
                      trained_on: str = "full-set") -> SubsetAutoencoder:
    """Train (a copy of ``ae`` or a fresh net) to reconstruct ``samples``.

    The loss is the per-sample squared L2 reconstruction error averaged
    over the batch; ``ae.trace`` holds the per-epoch means.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if ae is None:
        ae = SubsetAutoencoder.build(x.shape[1], code, hidden, seed=cfg.seed, linear=linear)
    else:
        ae = ae.copy()
    opt = cfg.make_optimizer()
    ae.trace = _train(ae, x, x, cfg.epochs, cfg.batch_size, opt, cfg.seed)
    ae.trained_on = trained_on
    return ae


def fine_tune(ae: SubsetAutoencoder, samples, steps: int = 20, learning_rate: float = 1e-3,
              tag: str = "subset") -> SubsetAutoencoder:
    """Copy ``ae`` and take ``steps`` full-batch Adam steps on ``samples``.

    Full-batch steps make the result a pure function of the inputs.
    """
    out = ae.copy()
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    opt = Adam(learning_rate)
    out.trace = _train(out, x, x, steps, x.shape[0], opt, 0)
    out.trained_on = tag
    return out


def train_reconstructor(bank: DescriptorBank, cfg: TrainConfig, code: int = 32, hidden: int = 64,
                        n_masks: int = 32) -> SubsetAutoencoder:
    """Autoencoder-shaped net mapping subset descriptors to the full-set descriptor.

    Trained on (bootstrap subset descriptor, same bootstrap full descriptor)
    pairs over random masks of uniform random density.
    """
    rng = stream(cfg.seed, "reconstructor-masks")
    full = np.ones(bank.d, dtype=bool)
    targets = bank.bootstrap_descriptors(full)
    xs, ys = [targets], [targets]
    for _ in range(n_masks):
        mask = rng.random(bank.d) < rng.random()
        xs.append(bank.bootstrap_descriptors(mask))
        ys.append(targets)
    x = np.vstack(xs)
    y = np.vstack(ys)
    ae = SubsetAutoencoder.build(bank.dim, code, hidden, seed=cfg.seed)
    ae.trace = _train(ae, x, y, cfg.epochs, cfg.batch_size, cfg.make_optimizer(), cfg.seed)
    ae.trained_on = "subset-to-full"
    return ae
