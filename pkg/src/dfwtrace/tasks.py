"""Multi-task least squares and multinomial logistic regression.

Each worker keeps *sufficient information*: a handful of cached quantities
that let the local gradient follow a rank-one Frank-Wolfe step without a
fresh pass over the raw data (dense representation only).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp, softmax

from .linalg import Rank1Atom, as_matrix


class DegenerateDirectionError(ArithmeticError):
    """The line-search quadratic has (numerically) zero curvature."""


@dataclass(frozen=True)
class LocalDataset:
    """Rows held by one worker: features plus regression or class targets."""

    X: np.ndarray
    Y: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    n_classes: Optional[int] = None

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        object.__setattr__(self, "X", X)
        if X.shape[0] < 1:
            raise ValueError("a local dataset needs at least one row")
        if (self.Y is None) == (self.labels is None):
            raise ValueError("exactly one of Y (regression) or labels (classification) is required")
        if self.Y is not None:
            Y = as_matrix(self.Y, "Y")
            if Y.shape[0] != X.shape[0]:
                raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
            object.__setattr__(self, "Y", Y)
        else:
            labels = np.asarray(self.labels)
            if labels.ndim != 1 or labels.shape[0] != X.shape[0]:
                raise ValueError("labels must be a vector with one entry per row of X")
            if self.n_classes is None or self.n_classes < 1:
                raise ValueError("n_classes is required with labels")
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(f"label values must lie in [0, {self.n_classes})")
            object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Y.shape[1] if self.Y is not None else self.n_classes

    def rows(self, index):
        if self.Y is not None:
            return LocalDataset(self.X[index], Y=self.Y[index])
        return LocalDataset(self.X[index], labels=self.labels[index], n_classes=self.n_classes)


# -- multi-task least squares -------------------------------------------------


@dataclass(frozen=True)
class SuffInfoMTLS:
    XtY: np.ndarray
    XtX: np.ndarray
    XtXW: np.ndarray
    W: np.ndarray
    grad: np.ndarray
    n: int


def mtls_init(ds: LocalDataset) -> SuffInfoMTLS:
    if ds.Y is None:
        raise ValueError("multi-task least squares needs regression targets Y")
    XtY = ds.X.T @ ds.Y
    XtX = ds.X.T @ ds.X
    zeros = np.zeros_like(XtY)
    return SuffInfoMTLS(XtY=XtY, XtX=XtX, XtXW=zeros, W=zeros.copy(), grad=-XtY, n=ds.n)


def mtls_apply_atom(info: SuffInfoMTLS, gamma: float, atom: Rank1Atom) -> SuffInfoMTLS:
    """Move to ``(1-gamma) W + gamma S`` with ``S = scale u v^T`` in O(d^2 + dm)."""
    if atom.shape != info.W.shape:
        raise ValueError(f"atom shape {atom.shape} does not match W {info.W.shape}")
    if gamma == 0.0:
        return info
    XtXu = info.XtX @ atom.u
    XtXS = atom.scale * np.outer(XtXu, atom.v)
    keep = 1.0 - gamma
    return replace(
        info,
        W=keep * info.W + (gamma * atom.scale) * np.outer(atom.u, atom.v),
        XtXW=keep * info.XtXW + gamma * XtXS,
        grad=keep * info.grad + gamma * (XtXS - info.XtY),
    )


def least_squares_loss(W, X, Y) -> float:
    R = X @ W - Y
    return 0.5 * float(np.sum(R * R))


def least_squares_gradient(W, X, Y) -> np.ndarray:
    return X.T @ (X @ W - Y)


def mtls_objective(infos, datasets) -> float:
    return float(sum(least_squares_loss(info.W, ds.X, ds.Y) for info, ds in zip(infos, datasets)))


def mtls_linesearch_terms(info: SuffInfoMTLS, atom: Rank1Atom):
    """Local ``(<-grad, S - W>, <X^T X (S - W), S - W>)`` without forming ``S - W``."""
    u, v, c = atom.u, atom.v, atom.scale
    num = -c * float(u @ info.grad @ v) + float(np.sum(info.grad * info.W))
    den = (
        c * c * float(u @ info.XtX @ u)
        - 2.0 * c * float(u @ info.XtXW @ v)
        + float(np.sum(info.XtXW * info.W))
    )
    return num, den


def clamp_step(num: float, den: float, direction_sq: float) -> float:
    """Minimizer over [0, 1] of the quadratic with slope ``-num`` and curvature ``den``."""
    if den <= 1e-14 * direction_sq:
        raise DegenerateDirectionError(f"curvature {den!r} along a direction of squared norm {direction_sq!r}")
    return min(max(num / den, 0.0), 1.0)


def direction_sq_norm(W, atom: Rank1Atom) -> float:
    D = atom.to_dense() - W
    return float(np.sum(D * D))


def mtls_linesearch(infos, atom: Rank1Atom) -> float:
    num = den = 0.0
    for info in infos:
        a, b = mtls_linesearch_terms(info, atom)
        num += a
        den += b
    return clamp_step(num, den, direction_sq_norm(infos[0].W, atom))


# -- multinomial logistic regression -----------------------------------------


@dataclass(frozen=True)
class SuffInfoMLR:
    X: np.ndarray
    labels: np.ndarray
    XtH: np.ndarray
    XW: np.ndarray
    grad: np.ndarray
    n: int


def one_hot(labels, n_classes):
    H = np.zeros((labels.shape[0], n_classes))
    H[np.arange(labels.shape[0]), labels] = 1.0
    return H


def _mlr_grad(X, XW, XtH):
    return X.T @ softmax(XW, axis=1) - XtH


def mlr_init(ds: LocalDataset) -> SuffInfoMLR:
    if ds.labels is None:
        raise ValueError("multinomial logistic regression needs class labels")
    XtH = ds.X.T @ one_hot(ds.labels, ds.n_classes)
    XW = np.zeros((ds.n, ds.n_classes))
    return SuffInfoMLR(X=ds.X, labels=ds.labels, XtH=XtH, XW=XW, grad=_mlr_grad(ds.X, XW, XtH), n=ds.n)


def mlr_apply_atom(info: SuffInfoMLR, gamma: float, atom: Rank1Atom) -> SuffInfoMLR:
    if atom.shape != info.grad.shape:
        raise ValueError(f"atom shape {atom.shape} does not match W {info.grad.shape}")
    if gamma == 0.0:
        return info
    XW = (1.0 - gamma) * info.XW + (gamma * atom.scale) * np.outer(info.X @ atom.u, atom.v)
    return replace(info, XW=XW, grad=_mlr_grad(info.X, XW, info.XtH))


def softmax_loss(XW, labels) -> float:
    picked = XW[np.arange(labels.shape[0]), labels]
    return float(np.sum(logsumexp(XW, axis=1) - picked))


def softmax_gradient(W, X, labels) -> np.ndarray:
    XW = X @ W
    return X.T @ (softmax(XW, axis=1) - one_hot(labels, W.shape[1]))


def mlr_objective(infos) -> float:
    return float(sum(softmax_loss(info.XW, info.labels) for info in infos))


def mlr_top5_error(W, X_test, labels_test) -> float:
    """Fraction of points whose true class is not among the five highest scores."""
    scores = np.asarray(X_test) @ W
    labels_test = np.asarray(labels_test)
    true = scores[np.arange(labels_test.shape[0]), labels_test]
    beaten = np.sum(scores > true[:, None], axis=1)
    return float(np.mean(beaten >= 5))


class Task(NamedTuple):
    """Per-task hooks used by the solvers: init, update and optional line search."""

    name: str
    init: Callable
    apply_atom: Callable
    linesearch_terms: Optional[Callable]


TASKS = {
    "mtls": Task("mtls", mtls_init, mtls_apply_atom, mtls_linesearch_terms),
    "mlr": Task("mlr", mlr_init, mlr_apply_atom, None),
}


def get_task(name) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None


@dataclass(frozen=True)
class Problem:
    """A full training set for one task, with optional ground truth and test split.

    The master uses it to evaluate iterates; the solvers never read it
    directly except through per-worker :class:`LocalDataset` slices.
    """

    task: str
    data: LocalDataset
    W_true: Optional[np.ndarray] = None
    test: Optional[LocalDataset] = None

    def __post_init__(self):
        get_task(self.task)
        if self.task == "mtls" and self.data.Y is None:
            raise ValueError("mtls problems need regression targets")
        if self.task == "mlr" and self.data.labels is None:
            raise ValueError("mlr problems need class labels")

    @property
    def shape(self):
        return (self.data.d, self.data.m)

    def objective(self, W) -> float:
        if self.task == "mtls":
            return least_squares_loss(W, self.data.X, self.data.Y)
        return softmax_loss(self.data.X @ W, self.data.labels)

    def gradient(self, W) -> np.ndarray:
        if self.task == "mtls":
            return least_squares_gradient(W, self.data.X, self.data.Y)
        return softmax_gradient(W, self.data.X, self.data.labels)

    def estimation_error(self, W) -> Optional[float]:
        if self.W_true is None:
            return None
        return float(np.linalg.norm(W - self.W_true) / np.linalg.norm(self.W_true))

    def top5_error(self, W) -> Optional[float]:
        if self.task != "mlr" or self.test is None:
            return None
        return mlr_top5_error(W, self.test.X, self.test.labels)
