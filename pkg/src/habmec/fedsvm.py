"""SVM-style federated multi-task learning with a learned task-structure matrix.

One model is trained per user. Its N tasks are the HABs: column ``w_n`` of
``W`` scores "this user will be served by HAB n". HAB n only ever touches
its own samples; the tasks are coupled through the trace-one PSD matrix
``Omega`` in the regulariser ``lam1 |W|_F^2 + lam2 tr(W Omega^-1 W^T)``.

Training is distributed dual ascent on the squared loss. With rows of
``X_n`` as samples and ``M = lam1 I + lam2 Omega^-1``::

    l*(-alpha; a) = -a alpha + alpha^2 / 4
    Z[:, n]       = X_n^T alpha_n
    R*(Z)         = tr(Z M^-1 Z^T) / 4,     W(alpha) = Z M^-1 / 2
    D(alpha)      = sum l*(-alpha) + R*(Z)  (minimised; gap = P(W) + D >= 0)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg.blas import dtrsv

FORMAT_VERSION = "habmec-fedsvm/1"
FEATURE_SCALE = 1.0 / math.sqrt(3.0)


class SingularMatrixError(np.linalg.LinAlgError):
    """Omega is singular and no eigenvalue floor was allowed."""


class DivergenceError(RuntimeError):
    """Training blew up; the partial trace is attached."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Hyper:
    lam1: float = 0.1
    lam2: float = 0.1
    eta: float = 1.0
    theta: float = 0.1
    sigma: float = 1.0
    # smoothing added to W^T W before the square root in the Omega update
    eps_omega: float = 1e-3
    # eigenvalue floor used when inverting Omega
    eig_floor: float = 1e-8
    max_passes: int = 50

    def __post_init__(self):
        if not self.lam1 > 0:
            raise ValueError("lam1 must be > 0")
        if self.lam2 < 0:
            raise ValueError("lam2 must be >= 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must lie in (0, 1]")
        if self.eps_omega < 0 or self.eig_floor < 0:
            raise ValueError("eps_omega and eig_floor must be >= 0")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


@dataclass
class LocalDataset:
    """Samples of one user held by one HAB. ``X`` is (K, d), ``y`` in {0, 1}."""

    X: np.ndarray
    y: np.ndarray
    t: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        self.X = X.reshape(0, 3) if X.size == 0 and X.ndim < 2 else np.atleast_2d(X)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.t is None:
            self.t = np.arange(self.y.size)
        self.t = np.asarray(self.t, dtype=int).reshape(-1)
        if not (self.X.shape[0] == self.y.size == self.t.size):
            raise ValueError("X, y and t must have the same number of samples")

    @property
    def size(self) -> int:
        return self.y.size

    def lower_gram(self) -> np.ndarray:
        """tril(X X^T), cached since training reuses it every iteration."""
        cached = self.__dict__.get("_lower_gram")
        if cached is None or cached.shape[0] != self.size:
            cached = np.tril(self.X @ self.X.T)
            self.__dict__["_lower_gram"] = cached
        return cached

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, d: int = 3):
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=int))


@dataclass
class Normalizer:
    """Min-max map of raw (x, y, z) features onto [0, 1/sqrt(3)] per axis."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)

    @classmethod
    def fit(cls, raw, radius: float):
        """x and y span the service disk; z spans the observed task sizes."""
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        low = np.array([-radius, -radius, raw[:, 2].min()])
        high = np.array([radius, radius, raw[:, 2].max()])
        return cls(low, high)

    def __call__(self, raw):
        raw = np.asarray(raw, dtype=float)
        span = self.high - self.low
        scaled = np.where(span > 0, (raw - self.low) / np.where(span > 0, span, 1.0), 0.0)
        return np.clip(scaled, 0.0, 1.0) * FEATURE_SCALE


def _as_datasets(datasets):
    if isinstance(datasets, LocalDataset):
        return [datasets]
    return list(datasets)


def _split_alpha(alpha, datasets):
    if isinstance(alpha, (list, tuple)):
        return [np.asarray(a, dtype=float) for a in alpha]
    alpha = np.asarray(alpha, dtype=float)
    cuts = np.cumsum([ds.size for ds in datasets])[:-1]
    return np.split(alpha, cuts)


def omega_inverse(omega, eps: float = 1e-8):
    """Inverse of a symmetric PSD matrix with eigenvalues floored at ``eps``."""
    vals, vecs = np.linalg.eigh(np.asarray(omega, dtype=float))
    if eps == 0:
        if vals.min() <= 1e-14 * max(vals.max(), 1e-300):
            raise SingularMatrixError("Omega is singular and eig_floor = 0")
    else:
        vals = np.maximum(vals, eps)
    return (vecs / vals) @ vecs.T


def _spectrum(omega, hyper: Hyper):
    """Eigenvectors of Omega and the matching eigenvalues of M."""
    vals, vecs = np.linalg.eigh(np.asarray(omega, dtype=float))
    if hyper.eig_floor == 0:
        if vals.min() <= 1e-14 * max(vals.max(), 1e-300):
            raise SingularMatrixError("Omega is singular and eig_floor = 0")
    else:
        vals = np.maximum(vals, hyper.eig_floor)
    return vecs, hyper.lam1 + hyper.lam2 / vals


def _structure(omega, hyper: Hyper):
    """(M, M^-1, mu1) from a single eigendecomposition of Omega."""
    vecs, spectrum = _spectrum(omega, hyper)
    m = (vecs * spectrum) @ vecs.T
    minv = (vecs / spectrum) @ vecs.T
    return 0.5 * (m + m.T), 0.5 * (minv + minv.T), 2.0 * float(spectrum.min())


def structure_operator(omega, hyper: Hyper):
    """M = lam1 I + lam2 Omega^-1 and mu1 = 2 lambda_min(M)."""
    m, _, mu1 = _structure(omega, hyper)
    return m, mu1


def z_matrix(alpha, datasets):
    datasets = _as_datasets(datasets)
    blocks = _split_alpha(alpha, datasets)
    d = datasets[0].dim
    return np.column_stack([ds.X.T @ a if ds.size else np.zeros(d) for ds, a in zip(datasets, blocks)])


# Both regularisers are summed in the eigenbasis of Omega: once Omega is
# near singular M has condition ~1e8 and forming W M W^T directly loses
# about eps * |M| absolute accuracy.
def regularizer(W, omega, hyper: Hyper) -> float:
    vecs, spectrum = _spectrum(omega, hyper)
    return float(np.sum(spectrum * np.sum((np.asarray(W) @ vecs) ** 2, axis=0)))


def conjugate_regularizer(Z, omega, hyper: Hyper) -> float:
    """R*(Z) = tr(Z M^-1 Z^T) / 4."""
    vecs, spectrum = _spectrum(omega, hyper)
    return 0.25 * float(np.sum(np.sum((np.asarray(Z) @ vecs) ** 2, axis=0) / spectrum))


def conjugate_regularizer_grad(Z, omega, hyper: Hyper):
    _, minv, _ = _structure(omega, hyper)
    return 0.5 * np.asarray(Z) @ minv


def primal_from_dual(alpha, omega, datasets, hyper: Hyper = Hyper()):
    """W(alpha) = Z(alpha) M^-1 / 2, the gradient of R* at Z(alpha)."""
    return conjugate_regularizer_grad(z_matrix(alpha, datasets), omega, hyper)


def squared_loss(u, a):
    return (np.asarray(a) - u) ** 2


def loss_conjugate(v, a):
    """Fenchel conjugate of u -> (a - u)^2, evaluated at v."""
    v = np.asarray(v, dtype=float)
    return np.asarray(a) * v + 0.25 * v ** 2


def primal_objective(W, omega, datasets, hyper: Hyper = Hyper()) -> float:
    datasets = _as_datasets(datasets)
    W = np.asarray(W, dtype=float)
    loss = sum(float(np.sum(squared_loss(ds.X @ W[:, n], ds.y))) for n, ds in enumerate(datasets))
    return loss + regularizer(W, omega, hyper)


def dual_objective(alpha, omega, datasets, hyper: Hyper = Hyper()) -> float:
    datasets = _as_datasets(datasets)
    blocks = _split_alpha(alpha, datasets)
    total = sum(float(np.sum(loss_conjugate(-a, ds.y))) for ds, a in zip(datasets, blocks))
    return total + conjugate_regularizer(z_matrix(blocks, datasets), omega, hyper)


def duality_gap(alpha, omega, datasets, hyper: Hyper = Hyper()) -> float:
    W = primal_from_dual(alpha, omega, datasets, hyper)
    return primal_objective(W, omega, datasets, hyper) + dual_objective(alpha, omega, datasets, hyper)


def local_subproblem(delta, w_n, alpha_n, dataset: LocalDataset, sigma: float, mu1: float,
                     shared: float = 0.0) -> float:
    """Quadratic upper model of HAB n's share of the dual after a step ``delta``.

    ``shared`` is this HAB's share of R*(Z(alpha)); summing the models over
    all HABs with shares adding to R*(Z(alpha)) bounds D(alpha + delta).
    """
    delta = np.asarray(delta, dtype=float)
    alpha_n = np.asarray(alpha_n, dtype=float)
    v = dataset.X.T @ delta
    return (float(np.sum(loss_conjugate(-(alpha_n + delta), dataset.y)))
            + float(np.dot(w_n, v)) + sigma / (2.0 * mu1) * float(v @ v) + shared)


@dataclass
class LocalSolve:
    delta: np.ndarray
    theta: float
    passes: int


def solve_local(dataset: LocalDataset, w_n, alpha_n, mu1: float, hyper: Hyper = Hyper(),
                sweep: str = "auto") -> LocalSolve:
    """Cyclic exact coordinate descent on HAB n's quadratic subproblem.

    Stops once the normalised suboptimality (q(delta) - q*) / (q(0) - q*)
    reaches ``hyper.theta`` or after ``hyper.max_passes`` sweeps.

    ``sweep="auto"`` runs the coordinate loop compiled, keeping X^T delta
    up to date so a pass costs O(K d). A full cyclic sweep on a quadratic
    is also one Gauss-Seidel step, ``(D + L) delta' = -g - U delta``;
    ``"dense"`` does it that way with a triangular solve and ``"loop"``
    is the plain Python loop. All three give the same iterates.
    """
    K = dataset.size
    if K == 0:
        return LocalSolve(np.zeros(0), 0.0, 0)
    if sweep not in ("auto", "loop", "dense"):
        raise ValueError(f"unknown sweep mode {sweep!r}")
    X = dataset.X
    c = hyper.sigma / mu1
    g0 = -dataset.y + 0.5 * np.asarray(alpha_n, dtype=float) + X @ np.asarray(w_n, dtype=float)
    # exact minimiser via Woodbury: (I/2 + c X X^T)^-1 = 2I - 4X(I/c + 2X^T X)^-1 X^T
    inner = np.eye(X.shape[1]) / c + 2.0 * X.T @ X
    star = -(2.0 * g0 - 4.0 * X @ np.linalg.solve(inner, X.T @ g0))
    q_star = 0.5 * float(g0 @ star)
    if q_star >= 0:
        return LocalSolve(np.zeros(K), 0.0, 0)
    if sweep == "dense":
        return _dense_sweeps(X, dataset.lower_gram(), c, g0, q_star, hyper)
    if sweep == "loop":
        return _loop_sweeps(X, c, g0, q_star, hyper)
    delta, theta, passes = _compiled_sweeps()(np.ascontiguousarray(X), g0, c, q_star,
                                              hyper.theta, hyper.max_passes)
    return LocalSolve(delta, theta, passes)


def _dense_sweeps(X, gram, c, g0, q_star, hyper):
    K = X.shape[0]
    lower = c * gram
    lower[np.diag_indices(K)] += 0.5
    lower = np.asfortranarray(lower)
    delta = np.zeros(K)
    v = np.zeros(X.shape[1])
    theta, passes = 1.0, 0
    while passes < hyper.max_passes:
        passes += 1
        # U delta for the strictly upper part of c X X^T: x_k . (v - sum_{j<=k} x_j delta_j)
        prefix = np.cumsum(X * delta[:, None], axis=0)
        rhs = c * ((prefix - v) * X).sum(axis=1) - g0
        delta = dtrsv(lower, rhs, lower=1)
        v = X.T @ delta
        q = float(g0 @ delta) + 0.25 * float(delta @ delta) + 0.5 * c * float(v @ v)
        theta = max((q - q_star) / -q_star, 0.0)
        if theta <= hyper.theta:
            break
    return LocalSolve(delta, theta, passes)


def _loop_sweeps(X, c, g0, q_star, hyper):
    K = X.shape[0]
    rows = X.tolist()
    g = g0.tolist()
    diag = (0.5 + c * np.einsum("ij,ij->i", X, X)).tolist()
    delta = [0.0] * K
    v = [0.0] * X.shape[1]
    theta = 1.0
    passes = 0
    while passes < hyper.max_passes:
        passes += 1
        for k in range(K):
            xk = rows[k]
            grad = g[k] + 0.5 * delta[k] + c * sum(a * b for a, b in zip(xk, v))
            step = -grad / diag[k]
            delta[k] += step
            v = [vi + step * xi for vi, xi in zip(v, xk)]
        arr = np.asarray(delta)
        vv = np.asarray(v)
        q = float(g0 @ arr) + 0.25 * float(arr @ arr) + 0.5 * c * float(vv @ vv)
        theta = max((q - q_star) / -q_star, 0.0)
        if theta <= hyper.theta:
            break
    return LocalSolve(np.asarray(delta), theta, passes)


_SWEEPS = None


def _compiled_sweeps():
    global _SWEEPS
    if _SWEEPS is None:
        import numba

        @numba.njit(cache=True)
        def sweeps(X, g0, c, q_star, target, max_passes):
            K, d = X.shape
            diag = np.empty(K)
            for k in range(K):
                diag[k] = 0.5 + c * np.dot(X[k], X[k])
            delta = np.zeros(K)
            v = np.zeros(d)
            theta = 1.0
            passes = 0
            while passes < max_passes:
                passes += 1
                for k in range(K):
                    grad = g0[k] + 0.5 * delta[k] + c * np.dot(X[k], v)
                    step = -grad / diag[k]
                    delta[k] += step
                    for i in range(d):
                        v[i] += step * X[k, i]
                q = np.dot(g0, delta) + 0.25 * np.dot(delta, delta) + 0.5 * c * np.dot(v, v)
                theta = max((q - q_star) / -q_star, 0.0)
                if theta <= target:
                    break
            return delta, theta, passes

        _SWEEPS = sweeps
    return _SWEEPS


def update_structure_matrix(W, eps: float = 1e-8):
    """Omega = S / tr(S) with S = (W^T W + eps I)^(1/2)."""
    W = np.asarray(W, dtype=float)
    n = W.shape[1]
    gram = W.T @ W + eps * np.eye(n)
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    root = np.sqrt(np.clip(vals, 0.0, None))
    if root.sum() <= 0:
        return np.eye(n) / n
    omega = (vecs * root) @ vecs.T
    omega = 0.5 * (omega + omega.T)
    return omega / np.trace(omega)


def random_structure_matrix(n: int, rng) -> np.ndarray:
    """Uniform random draw projected onto {PSD, trace one}."""
    A = rng.uniform(0.0, 1.0, size=(n, n))
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    omega = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    omega = 0.5 * (omega + omega.T)
    tr = np.trace(omega)
    return omega / tr if tr > 0 else np.eye(n) / n


@dataclass
class ConvergenceTrace:
    dual: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    descent_residual: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    mu1: list = field(default_factory=list)
    omega_change: list = field(default_factory=list)

    def __len__(self):
        return len(self.gap)

    def rows(self):
        keys = ("dual", "primal", "gap", "descent_residual", "theta", "mu1", "omega_change")
        for h in range(len(self)):
            yield {"iteration": h, **{k: getattr(self, k)[h] for k in keys}}


@dataclass
class FedSvmState:
    W: np.ndarray
    omega: np.ndarray
    alpha: list
    hyper: Hyper
    normalizer: Normalizer | None = None
    converged: bool = False

    @property
    def num_tasks(self) -> int:
        return self.W.shape[1]

    def predict(self, raw_features) -> np.ndarray:
        x = raw_features if self.normalizer is None else self.normalizer(raw_features)
        return predict_association(self.W, x)

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_VERSION,
            "d": int(self.W.shape[0]),
            "N": int(self.W.shape[1]),
            "W": self.W.tolist(),
            "omega": self.omega.tolist(),
            "hyper": asdict(self.hyper),
            "normalizer": None if self.normalizer is None else
            {"low": self.normalizer.low.tolist(), "high": self.normalizer.high.tolist()},
            "converged": self.converged,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str):
        doc = json.loads(text)
        if doc.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        W = np.array(doc["W"], dtype=float).reshape(doc["d"], doc["N"])
        norm = doc["normalizer"]
        return cls(W=W, omega=np.array(doc["omega"], dtype=float), alpha=[],
                   hyper=Hyper(**doc["hyper"]), converged=doc["converged"],
                   normalizer=None if norm is None else Normalizer(norm["low"], norm["high"]))


def train(datasets, hyper: Hyper = Hyper(), iterations: int = 500, seed: int = 0,
          tol: float | None = None, omega0=None, normalizer: Normalizer | None = None,
          divergence_factor: float = 10.0):
    """Federated dual ascent for one user's multi-task model.

    Each iteration every HAB solves its local subproblem to accuracy theta,
    the dual blocks move by eta * delta, the columns of W are shared and
    Omega is refreshed in closed form. When ``tol`` is given, training stops
    once the duality gap and the Omega change both fall below it.
    """
    datasets = _as_datasets(datasets)
    N = len(datasets)
    d = next((ds.dim for ds in datasets if ds.size), 3)
    datasets = [ds if ds.size else LocalDataset.empty(d) for ds in datasets]
    rng = np.random.default_rng(seed)
    omega = random_structure_matrix(N, rng) if omega0 is None else np.asarray(omega0, dtype=float)
    alpha = [np.zeros(ds.size) for ds in datasets]
    trace = ConvergenceTrace()
    converged = False
    best_gap = math.inf
    labels = [ds.y for ds in datasets]
    floor = 1e-2 * max(sum(float(y @ y) for y in labels), 1e-12)

    def structure(omega):
        vecs, spectrum = _spectrum(omega, hyper)
        minv = (vecs / spectrum) @ vecs.T
        return vecs, spectrum, 0.5 * (minv + minv.T), 2.0 * float(spectrum.min())

    def dual_and_w(alpha, minv):
        """(conjugate-loss part, R*(Z), W) at the given alpha."""
        Z = np.column_stack([ds.X.T @ a if ds.size else np.zeros(d) for ds, a in zip(datasets, alpha)])
        W = 0.5 * Z @ minv
        conj = sum(float(np.sum(loss_conjugate(-a, y))) for a, y in zip(alpha, labels) if y.size)
        return conj, 0.5 * float(np.sum(Z * W)), W

    # the dual before a step equals the dual after the previous Omega update,
    # so each iteration needs one eigendecomposition of Omega, not three
    vecs, spectrum, minv, mu1 = structure(omega)
    conj, r_star, W = dual_and_w(alpha, minv)
    for _ in range(iterations):
        d_before = conj + r_star
        share = r_star / N
        model_sum = 0.0
        thetas = []
        steps = []
        for n, ds in enumerate(datasets):
            sol = solve_local(ds, W[:, n], alpha[n], mu1, hyper)
            steps.append(sol.delta)
            thetas.append(sol.theta)
            model_sum += local_subproblem(sol.delta, W[:, n], alpha[n], ds, hyper.sigma, mu1, share)
        alpha = [a + hyper.eta * s for a, s in zip(alpha, steps)]
        conj, r_star, W = dual_and_w(alpha, minv)
        residual = conj + r_star - ((1.0 - hyper.eta) * d_before + hyper.eta * model_sum)

        new_omega = update_structure_matrix(W, hyper.eps_omega)
        change = float(np.abs(new_omega - omega).max())
        omega = new_omega
        trace.mu1.append(mu1)
        vecs, spectrum, minv, mu1 = structure(omega)
        conj, r_star, W = dual_and_w(alpha, minv)
        dual = conj + r_star
        loss = sum(float(np.sum(squared_loss(ds.X @ W[:, n], ds.y))) for n, ds in enumerate(datasets) if ds.size)
        primal = loss + float(np.sum(spectrum * np.sum((W @ vecs) ** 2, axis=0)))
        gap = primal + dual

        trace.dual.append(dual)
        trace.primal.append(primal)
        trace.gap.append(gap)
        trace.descent_residual.append(residual)
        trace.theta.append(max(thetas) if thetas else 0.0)
        trace.omega_change.append(change)

        # the gap is measured at the current Omega, so it may rise for a while
        # after Omega moves; only a rise far above 1% of G(0) counts as divergence
        best_gap = min(best_gap, gap)
        if not math.isfinite(gap) or gap > divergence_factor * max(best_gap, floor):
            raise DivergenceError(f"duality gap rose to {gap:.3e} from a minimum of {best_gap:.3e}", trace)
        if tol is not None and gap <= tol and change <= tol:
            converged = True
            break
    state = FedSvmState(W=W, omega=omega, alpha=alpha, hyper=hyper, normalizer=normalizer,
                        converged=converged)
    return state, trace


def predict_association(W, x) -> np.ndarray:
    """One-hot HAB choice argmax_n w_n^T x (ties to the lowest index).

    ``x`` may be a single feature vector or a (K, d) batch; returns HAB
    indices.
    """
    scores = np.asarray(x, dtype=float) @ np.asarray(W, dtype=float)
    return np.argmax(scores, axis=-1)


def one_hot(index: int, n: int) -> np.ndarray:
    row = np.zeros(n, dtype=int)
    row[index] = 1
    return row


def proposition_factor(s: float, eta: float, theta: float) -> float:
    """Per-iteration contraction 1 - s eta (1 - theta)."""
    return 1.0 - s * eta * (1.0 - theta)


def rate_constant(mu1: float, sigma: float, mu2: float = 0.5) -> float:
    return mu1 * mu2 / (mu1 * mu2 + sigma)


@dataclass
class BoundReport:
    ok: bool
    s: float
    factor: float
    theta: float
    d_star: float
    descent_worst: float
    envelope_violation: int | None
    descent_violation: int | None
    message: str = ""


def convergence_bound_check(trace: ConvergenceTrace, d_star: float, hyper: Hyper,
                            d0: float = 0.0, s: float | None = None, theta: float | None = None,
                            tol: float = 1e-9) -> BoundReport:
    """Check the per-iteration descent residuals and the geometric envelope on D(alpha_h) - D*.

    ``s`` defaults to the most conservative value over the trace (smallest
    mu1); ``theta`` defaults to the largest measured local accuracy.
    """
    if s is None:
        s = rate_constant(min(trace.mu1), hyper.sigma) if len(trace) else 1.0
    if theta is None:
        theta = max(trace.theta) if len(trace) else hyper.theta
    factor = proposition_factor(s, hyper.eta, theta)
    residuals = np.asarray(trace.descent_residual, dtype=float)
    descent_bad = np.flatnonzero(residuals > tol)
    start = d0 - d_star
    excess = np.asarray(trace.dual, dtype=float) - d_star
    h = np.arange(1, excess.size + 1)
    envelope = factor ** h * start
    env_bad = np.flatnonzero(excess > envelope + tol * max(1.0, abs(start)))
    descent_idx = int(descent_bad[0]) if descent_bad.size else None
    env_idx = int(env_bad[0] + 1) if env_bad.size else None
    parts = []
    if descent_idx is not None:
        parts.append(f"descent inequality fails at iteration {descent_idx} (residual {residuals[descent_idx]:.3e})")
    if env_idx is not None:
        parts.append(f"envelope exceeded at iteration {env_idx}")
    return BoundReport(ok=not parts, s=s, factor=factor, theta=theta, d_star=d_star,
                       descent_worst=float(residuals.max()) if residuals.size else 0.0,
                       envelope_violation=env_idx, descent_violation=descent_idx,
                       message="; ".join(parts) or "all bounds hold")


def centralized_solve(datasets, hyper: Hyper = Hyper(), omega0=None, max_iter: int = 5000,
                      tol: float = 1e-12, fixed_omega: bool = False):
    """Reference solver holding every sample: exact W for a given Omega, then
    closed-form Omega, alternated until neither moves.

    Returns ``(W, omega, primal objective)``.
    """
    datasets = _as_datasets(datasets)
    N = len(datasets)
    d = next((ds.dim for ds in datasets if ds.size), 3)
    datasets = [ds if ds.size else LocalDataset.empty(d) for ds in datasets]
    omega = np.eye(N) / N if omega0 is None else np.asarray(omega0, dtype=float)
    gram = np.zeros((d * N, d * N))
    rhs = np.zeros(d * N)
    for n, ds in enumerate(datasets):
        gram[n * d:(n + 1) * d, n * d:(n + 1) * d] = ds.X.T @ ds.X
        rhs[n * d:(n + 1) * d] = ds.X.T @ ds.y
    W = np.zeros((d, N))
    prev = math.inf
    for _ in range(max_iter):
        m_op, _ = structure_operator(omega, hyper)
        # column-major vec(W): the regulariser couples column n with n' through M[n, n']
        system = gram + np.kron(m_op, np.eye(d))
        W = np.linalg.solve(system, rhs).reshape(N, d).T
        value = primal_objective(W, omega, datasets, hyper)
        if fixed_omega:
            break
        new_omega = update_structure_matrix(W, hyper.eps_omega)
        moved = float(np.abs(new_omega - omega).max())
        omega = new_omega
        if moved <= tol and abs(prev - value) <= tol * max(1.0, abs(value)):
            break
        prev = value
    value = primal_objective(W, omega, datasets, hyper)
    return W, omega, value
