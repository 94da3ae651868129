"""Generalized regression neural network (Gaussian kernel regression) policy.

Inputs are normalized per dimension to zero mean and unit spread before
kernel distances are taken.  Predictions are the kernel-weighted mean of the
stored targets; the largest log-weight is subtracted before exponentiating
so that far-away queries do not underflow to ``0 / 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

BANDWIDTH_FACTOR = 0.5


class EmptyDataset(ValueError):
    """No usable samples to fit on."""


@dataclass
class PolicyModel:
    centers: np.ndarray  # normalized inputs, (n, n_p)
    targets: np.ndarray  # (n, n_u)
    bandwidth: float
    shift: np.ndarray
    scale: np.ndarray

    @property
    def n_p(self) -> int:
        return self.centers.shape[1]

    @property
    def n_u(self) -> int:
        return self.targets.shape[1]

    def normalize(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.shift) / self.scale

    def predict(self, p) -> np.ndarray:
        """Action(s) at ``p``; a single point gives shape ``(n_u,)``, a batch ``(k, n_u)``."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        q = np.atleast_2d(p)
        if q.shape[1] != self.n_p:
            raise ValueError(f"expected {self.n_p} inputs, got {q.shape[1]}")
        q = self.normalize(q)
        d2 = ((q[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        logw = -d2 / (2.0 * self.bandwidth ** 2)
        logw -= logw.max(axis=1, keepdims=True)
        wts = np.exp(logw)
        out = wts @ self.targets / wts.sum(axis=1, keepdims=True)
        return out[0] if single else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {"bandwidth": self.bandwidth,
                "normalization": {"shift": self.shift.tolist(), "scale": self.scale.tolist()},
                "centers": self.centers.tolist(), "targets": self.targets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyModel":
        return cls(np.array(d["centers"], dtype=float), np.array(d["targets"], dtype=float),
                   float(d["bandwidth"]), np.array(d["normalization"]["shift"], dtype=float),
                   np.array(d["normalization"]["scale"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_bandwidth(centers: np.ndarray) -> float:
    """Half the median nearest-neighbour distance between distinct centers."""
    uniq = np.unique(centers, axis=0)
    if len(uniq) < 2:
        return 1.0
    dist, _ = cKDTree(uniq).query(uniq, k=2)
    bw = BANDWIDTH_FACTOR * float(np.median(dist[:, 1]))
    return bw if bw > 1e-12 else 1.0  # numerically coincident centers


def fit(P, U=None, bandwidth: float | None = None) -> PolicyModel:
    """Fit a GRNN on inputs ``P`` and targets ``U``.

    ``P`` may also be a :class:`~mpcaug.augment.Dataset`, in which case its
    non-discarded samples are used.

    Raises
    ------
    EmptyDataset
        No samples are available.
    """
    if U is None:
        P, U = P.arrays()
    P = np.asarray(P, dtype=float)
    U = np.asarray(U, dtype=float)
    if P.size == 0 or len(P) == 0:
        raise EmptyDataset("cannot fit a policy on zero samples")
    P = P.reshape(len(P), -1)
    U = U.reshape(len(U), -1)
    if len(P) != len(U):
        raise ValueError("inputs and targets differ in length")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(U))):
        raise ValueError("non-finite samples")
    shift = P.mean(axis=0)
    scale = P.std(axis=0)
    scale[scale < 1e-12] = 1.0
    centers = (P - shift) / scale
    if bandwidth is None:
        bandwidth = default_bandwidth(centers)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    return PolicyModel(centers, U, float(bandwidth), shift, scale)
