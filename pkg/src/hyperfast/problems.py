"""Benchmark objectives and dataset handling.

Three analytic families cover the verification needs:

* :class:`QuarticObjective` -- 0.5*x'Qx + c'x + (a4/4)*||x||^4 with every
  derivative in closed form. The fourth derivative is constant, so these are
  the primary exact-verification instances.
* :class:`LogisticLoss` -- regularized logistic regression on a dataset with
  labels in {-1, +1}.
* :class:`QuarticChain` -- sum of fourth powers of consecutive differences,
  the classic hard instance for first-order methods.

All oracles expose analytic third-derivative actions, which keeps the
finite-difference route honest (dual-route checks live in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .oracles import Matrix, ProblemOracle, Vector


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the 1-based line number."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (m, n) with labels in {-1.0, +1.0}."""

    features: Matrix
    labels: Vector

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-d array, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise ValueError(f"labels shape {labs.shape} does not match {feats.shape[0]} rows")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if not np.all(np.isin(labs, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


def load_libsvm(path: str) -> Dataset:
    """Read a sparse ``<label> <index>:<value> ...`` file.

    Indices are 1-based and must be strictly increasing within a line; the
    dimension is the largest index seen anywhere in the file. Labels 0 and -1
    map to -1; labels 1 and +1 map to +1.
    """
    rows: list[dict[int, float]] = []
    labels: list[float] = []
    max_index = 0
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label_value = float(tokens[0])
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: unreadable label {tokens[0]!r}") from None
            if label_value in (0.0, -1.0):
                labels.append(-1.0)
            elif label_value == 1.0:
                labels.append(1.0)
            else:
                raise DatasetFormatError(f"line {lineno}: label must be one of 0, -1, +1")
            entries: dict[int, float] = {}
            previous = 0
            for token in tokens[1:]:
                part = token.split(":")
                if len(part) != 2:
                    raise DatasetFormatError(f"line {lineno}: expected index:value, got {token!r}")
                try:
                    idx = int(part[0])
                    val = float(part[1])
                except ValueError:
                    raise DatasetFormatError(f"line {lineno}: unreadable pair {token!r}") from None
                if idx < 1:
                    raise DatasetFormatError(f"line {lineno}: index {idx} must be >= 1")
                if idx <= previous:
                    raise DatasetFormatError(f"line {lineno}: indices must be strictly increasing")
                if not np.isfinite(val):
                    raise DatasetFormatError(f"line {lineno}: non-finite value")
                entries[idx] = val
                previous = idx
            rows.append(entries)
            max_index = max(max_index, previous)
    if not rows:
        raise DatasetFormatError("file contains no samples")
    if max_index == 0:
        raise DatasetFormatError("file contains no feature entries")
    feats = np.zeros((len(rows), max_index))
    for i, entries in enumerate(rows):
        for idx, val in entries.items():
            feats[i, idx - 1] = val
    return Dataset(feats, np.asarray(labels))


def synth_logreg(seed: int, m: int, n: int) -> Dataset:
    """Synthetic classification data with a planted separator.

    Deterministic given the seed (numpy PCG64 via default_rng). Draw order:
    feature matrix, then the separator, then the 10 percent label-flip mask.
    Rows are normalized to unit Euclidean length.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((m, n))
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("degenerate zero feature row")
    feats /= norms[:, None]
    separator = rng.standard_normal(n)
    labels = np.where(feats @ separator >= 0.0, 1.0, -1.0)
    flips = rng.random(m) < 0.1
    labels[flips] *= -1.0
    return Dataset(feats, labels)


# Largest |psi''''| for psi(t) = log(1 + exp(t)). With u = sigma*(1 - sigma)
# in (0, 1/4], psi'''' = u*(1 - 6u); |u*(1 - 6u)| peaks at u = 1/4 (t = 0)
# with value 1/8. The test suite re-derives this by numeric maximization.
_LOGISTIC_C3 = 0.125


class LogisticLoss(ProblemOracle):
    """Mean logistic loss plus an L2 ridge term.

    f(x) = (1/m) sum_k log(1 + exp(-y_k <a_k, x>)) + (ridge/2)*||x||^2.
    """

    has_third = True

    def __init__(self, data: Dataset, ridge: float = 0.0):
        ridge = float(ridge)
        if ridge < 0.0:
            raise ValueError("ridge must be non-negative")
        row_fourth = float(np.mean(np.sum(data.features**2, axis=1) ** 2))
        # The ridge is quadratic so it adds nothing to the third derivative.
        super().__init__(data.n, _LOGISTIC_C3 * row_fourth)
        self.data = data
        self.ridge = ridge

    def _margins(self, x: Vector) -> Vector:
        return -self.data.labels * (self.data.features @ x)

    def value(self, x: Vector) -> float:
        x = self._check_point(x)
        t = self._margins(x)
        return float(np.mean(np.logaddexp(0.0, t)) + 0.5 * self.ridge * (x @ x))

    def grad(self, x: Vector) -> Vector:
        x = self._check_point(x)
        t = self._margins(x)
        coeff = -expit(t) * self.data.labels / self.data.m
        return self.data.features.T @ coeff + self.ridge * x

    def hess(self, x: Vector) -> Matrix:
        x = self._check_point(x)
        s = expit(self._margins(x))
        w = s * (1.0 - s) / self.data.m
        A = self.data.features
        return A.T @ (w[:, None] * A) + self.ridge * np.eye(self.dim)

    def _psi3(self, x: Vector) -> Vector:
        s = expit(self._margins(x))
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def third_action(self, x: Vector, s: Vector) -> Vector:
        x = self._check_point(x)
        u = self.data.features @ np.asarray(s, dtype=np.float64)
        coeff = -self._psi3(x) * self.data.labels * u**2 / self.data.m
        return self.data.features.T @ coeff

    def third_dir(self, x: Vector, s: Vector) -> Matrix:
        x = self._check_point(x)
        u = self.data.features @ np.asarray(s, dtype=np.float64)
        coeff = -self._psi3(x) * self.data.labels * u / self.data.m
        A = self.data.features
        return A.T @ (coeff[:, None] * A)


class QuarticObjective(ProblemOracle):
    """0.5*x'Qx + c'x + (a4/4)*||x||^4 with closed-form derivatives.

    The quartic part has constant fourth derivative
    D4[w][u, v] = 2*a4*(<w,u>v + <w,v>u + <u,v>w), whose symmetric operator
    norm is 6*a4 (maximize 6*a4*<d,u>*||u||^2 over unit d, u), so
    lipschitz_L3 = 6*a4 exactly. a4 = 0 instances are quadratic; any positive
    constant bounds their vanishing third derivative, and 1.0 is reported so
    the step-size window stays well defined.
    """

    has_third = True

    def __init__(self, Q: Matrix, c: Vector, a4: float):
        Q = np.asarray(Q, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        a4 = float(a4)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if c.shape != (Q.shape[0],):
            raise ValueError("c shape does not match Q")
        if np.linalg.norm(Q - Q.T) > 1e-10 * (1.0 + np.linalg.norm(Q)):
            raise ValueError("Q must be symmetric")
        if a4 < 0.0:
            raise ValueError("a4 must be non-negative")
        if float(np.min(np.linalg.eigvalsh(Q))) < -1e-10 * (1.0 + np.linalg.norm(Q)):
            raise ValueError("Q must be positive semidefinite")
        super().__init__(Q.shape[0], 6.0 * a4 if a4 > 0.0 else 1.0)
        self.Q = Q
        self.c = c
        self.a4 = a4

    def value(self, x: Vector) -> float:
        x = self._check_point(x)
        return float(0.5 * x @ (self.Q @ x) + self.c @ x + 0.25 * self.a4 * (x @ x) ** 2)

    def grad(self, x: Vector) -> Vector:
        x = self._check_point(x)
        return self.Q @ x + self.c + self.a4 * (x @ x) * x

    def hess(self, x: Vector) -> Matrix:
        x = self._check_point(x)
        return self.Q + self.a4 * ((x @ x) * np.eye(self.dim) + 2.0 * np.outer(x, x))

    def third_action(self, x: Vector, s: Vector) -> Vector:
        x = self._check_point(x)
        s = np.asarray(s, dtype=np.float64)
        return self.a4 * (4.0 * (x @ s) * s + 2.0 * (s @ s) * x)

    def third_dir(self, x: Vector, s: Vector) -> Matrix:
        x = self._check_point(x)
        s = np.asarray(s, dtype=np.float64)
        cross = np.outer(s, x)
        return self.a4 * (2.0 * (x @ s) * np.eye(self.dim) + 2.0 * (cross + cross.T))


class QuarticChain(ProblemOracle):
    """f(x) = x_1^4 + sum_{i>1} (x_i - x_{i-1})^4, minimized at the origin.

    With D the lower-bidiagonal difference matrix (u = Dx), the chain is
    f(x) = sum_i u_i^4, so every derivative is a D-conjugated diagonal. For
    the third derivative, |D3f(x)[s]^3 - D3f(y)[s]^3|
    = 24*|sum_i (u_i - v_i)*(Ds)_i^3| <= 24*||D(x-y)||*||Ds||^3
    <= 24*||D||^4*||x-y||*||s||^3 by Cauchy-Schwarz and sum w^6 <= (sum w^2)^3,
    so lipschitz_L3 = 24*sigma_max(D)^4 (exact at n = 1, where it is 24).
    """

    has_third = True

    def __init__(self, n: int):
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        D = np.eye(n) - np.diag(np.ones(n - 1), -1)
        sigma_max = float(np.linalg.svd(D, compute_uv=False)[0])
        super().__init__(n, 24.0 * sigma_max**4)
        self.D = D

    def _diffs(self, x: Vector) -> Vector:
        u = np.empty_like(x)
        u[0] = x[0]
        u[1:] = x[1:] - x[:-1]
        return u

    def _adjoint(self, v: Vector) -> Vector:
        out = v.copy()
        out[:-1] -= v[1:]
        return out

    def value(self, x: Vector) -> float:
        x = self._check_point(x)
        return float(np.sum(self._diffs(x) ** 4))

    def grad(self, x: Vector) -> Vector:
        x = self._check_point(x)
        return self._adjoint(4.0 * self._diffs(x) ** 3)

    def hess(self, x: Vector) -> Matrix:
        x = self._check_point(x)
        u = self._diffs(x)
        return self.D.T @ np.diag(12.0 * u**2) @ self.D

    def third_action(self, x: Vector, s: Vector) -> Vector:
        x = self._check_point(x)
        u = self._diffs(x)
        w = self._diffs(np.asarray(s, dtype=np.float64))
        return self._adjoint(24.0 * u * w**2)

    def third_dir(self, x: Vector, s: Vector) -> Matrix:
        x = self._check_point(x)
        u = self._diffs(x)
        w = self._diffs(np.asarray(s, dtype=np.float64))
        return self.D.T @ np.diag(24.0 * u * w) @ self.D


def make_logreg(data: Dataset, ridge: float = 0.0) -> LogisticLoss:
    return LogisticLoss(data, ridge)


def make_quartic(Q: Matrix, c: Vector, a4: float) -> QuarticObjective:
    return QuarticObjective(Q, c, a4)


def make_worst_case(p: int, n: int) -> QuarticChain:
    """Chained-difference hard instance; only the cubic-model order p = 3."""
    if p != 3:
        raise ValueError(f"only p = 3 is supported, got p = {p}")
    return QuarticChain(n)


@dataclass(frozen=True)
class L3Estimate:
    value: float
    method: str  # "analytic" or "sampled"


def sampled_l3(oracle: ProblemOracle, n_samples: int = 64, seed: int = 0,
               radius: float = 1.0, tau: float = 1e-3) -> L3Estimate:
    """Empirical lower estimate of the third-derivative Lipschitz constant.

    Maximizes ||(D3f(x) - D3f(y))[s, s]|| / (||x - y||*||s||^2) over random
    pairs in a ball, with third actions taken by gradient differences so the
    estimate does not lean on the oracle's own analytic route. A valid
    reported lipschitz_L3 must not be exceeded (up to difference error).
    """
    from .bdgm import fd_third_action

    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        x = radius * rng.standard_normal(oracle.dim) / np.sqrt(oracle.dim)
        y = radius * rng.standard_normal(oracle.dim) / np.sqrt(oracle.dim)
        s = rng.standard_normal(oracle.dim)
        s_norm = float(np.linalg.norm(s))
        gap = float(np.linalg.norm(x - y))
        if s_norm == 0.0 or gap == 0.0:
            continue
        s /= s_norm
        diff = fd_third_action(oracle, x, s, tau) - fd_third_action(oracle, y, s, tau)
        best = max(best, float(np.linalg.norm(diff)) / gap)
    return L3Estimate(best, "sampled")
