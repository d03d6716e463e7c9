"""Signal recovery by moment matching.

Two objectives over theta = (x, gamma) share one residual
g(theta) = m(theta) - a_hat, the gap between the model moments and the
measurement's empirical moments:

* plain least squares: g1^2 + w2 * sum g2^2 + w3 * sum g3^2 with the
  third-order sum taken over the full L x L grid (realized on the
  deduplicated vector through the layout multiplicities). The default
  weights w2 = 1/L, w3 = 1/L^2 divide each block by its term count so the
  blocks contribute on comparable scales.

* weighted least squares: g^T W g for a positive-definite W, with the
  data-driven W = S^-1 as the statistically optimal choice. The plain
  objective is the special case where W is the diagonal matrix encoding
  (1, w2, w3 * multiplicity).

Minimization is quasi-Newton (BFGS with Wolfe line search, scipy backend)
with analytic gradients 2 J^T W g, run from several random starts; the
weighted method additionally warm-starts from the plain least-squares
solution, since a near-singular weighting makes its basin hard to reach from
random points. The returned estimate is the start with the smallest final
objective. The noise variance is treated as known and enters only through
the model bias terms.

``asymptotic_covariance`` evaluates the sandwich M S M^T,
M = (G^T W G)^-1 G^T W, whose trace is minimized (over W) at W = S^-1 where
it collapses to (G^T S^-1 G)^-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .model import (
    MomentLayout,
    MomentVector,
    NoiseModel,
    Params,
    model_jacobian,
    model_moments,
)
from .moments import (
    CovarianceEstimate,
    EmpiricalMoments,
    WeightMatrix,
    empirical_moments,
    estimate_covariance,
    weight_matrix,
)
from .simulate import Measurement

__all__ = [
    "ObjectiveSpec",
    "OptimizerOptions",
    "StartDiagnostic",
    "Estimate",
    "RecoveryError",
    "default_ls_weights",
    "ls_weight_matrix",
    "residual",
    "objective_and_gradient",
    "minimize",
    "minimize_function",
    "recover",
    "recover_from_moments",
    "relative_error",
    "aligned_relative_error",
    "asymptotic_covariance",
    "estimate_to_dict",
    "write_estimate_json",
]


class RecoveryError(RuntimeError):
    """Raised when every optimization start fails to produce a finite result."""

    def __init__(self, message: str, starts: list["StartDiagnostic"]):
        super().__init__(message)
        self.starts = starts


def default_ls_weights(empirical: EmpiricalMoments) -> tuple[float, float]:
    """Equal-per-term block weights: w2 = 1/L, w3 = 1/L^2.

    The second-order block has L terms and the full third-order grid L^2, so
    these make each block an average rather than a sum.
    """
    L = empirical.vector.layout.L
    return 1.0 / L, 1.0 / L**2


@dataclass(frozen=True)
class ObjectiveSpec:
    """Everything needed to evaluate one recovery objective.

    kind "ls" consults weights_ls; kind "gmm" consults W. The empirical
    moments fix the data term and the noise model fixes the bias terms.
    """

    kind: str
    empirical: EmpiricalMoments
    noise: NoiseModel
    weights_ls: tuple[float, float] | None = None
    W: WeightMatrix | None = None

    def __post_init__(self):
        if self.kind not in ("ls", "gmm"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "ls":
            w2, w3 = self.weights_ls if self.weights_ls is not None else default_ls_weights(self.empirical)
            if not (w2 > 0 and w3 > 0):
                raise ValueError("ls weights must be positive")
            object.__setattr__(self, "weights_ls", (float(w2), float(w3)))
        else:
            if self.W is None:
                raise ValueError("gmm objective requires a weight matrix")
            d = self.empirical.vector.layout.dim
            if self.W.W.shape != (d, d):
                raise ValueError("weight matrix dimension does not match layout")

    @property
    def layout(self) -> MomentLayout:
        return self.empirical.vector.layout

    def ls_weight_vector(self) -> np.ndarray:
        """Diagonal encoding (1, w2 * ones, w3 * multiplicity) of the ls objective."""
        return _ls_weight_vector(self.layout, *self.weights_ls)


def _ls_weight_vector(layout: MomentLayout, w2: float, w3: float) -> np.ndarray:
    w = layout.multiplicity.copy()
    w[0] = 1.0
    w[1 : 1 + layout.L] = w2
    w[1 + layout.L :] *= w3
    return w


def ls_weight_matrix(empirical: EmpiricalMoments, w2: float | None = None, w3: float | None = None) -> WeightMatrix:
    """The plain least-squares objective expressed as a diagonal WeightMatrix."""
    dw2, dw3 = default_ls_weights(empirical)
    w2 = dw2 if w2 is None else w2
    w3 = dw3 if w3 is None else w3
    diag = _ls_weight_vector(empirical.vector.layout, w2, w3)
    return WeightMatrix(W=np.diag(diag), source="ls-weights")


def residual(theta: Params, spec: ObjectiveSpec) -> MomentVector:
    """g(theta) = model moments minus empirical moments, in canonical layout."""
    if theta.L != spec.layout.L:
        raise ValueError(
            f"layout mismatch: parameters have L={theta.L}, moments L={spec.layout.L}"
        )
    m = model_moments(theta, spec.noise)
    return MomentVector(spec.layout, m.values - spec.empirical.vector.values)


def objective_and_gradient(theta: Params, spec: ObjectiveSpec) -> tuple[float, np.ndarray]:
    """Objective value and its analytic gradient with respect to (x, gamma)."""
    g = residual(theta, spec).values
    J = model_jacobian(theta, spec.noise)
    if spec.kind == "ls":
        Wg = spec.ls_weight_vector() * g
    else:
        Wg = spec.W.W @ g
    return float(g @ Wg), 2.0 * (J.T @ Wg)


@dataclass(frozen=True)
class OptimizerOptions:
    """Multi-start quasi-Newton settings.

    Starts draw each signal entry from the uniform init_distribution bounds
    (matching the signal ensemble of the experiments) and use gamma_init for
    the density; gamma stays unconstrained during the descent.
    """

    max_iterations: int = 10_000
    gradient_tolerance: float = 1e-8
    n_starts: int = 5
    gamma_init: float = 0.18
    init_distribution: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass(frozen=True)
class StartDiagnostic:
    """Outcome of one optimization start."""

    index: int
    seed: int | None
    theta0: Params
    objective: float
    iterations: int
    converged: bool
    message: str = ""


@dataclass(frozen=True)
class Estimate:
    """Best-of-starts recovery result."""

    theta_hat: Params
    objective_value: float
    method: str
    relative_error: float | None
    starts: list[StartDiagnostic]


# restart control for the descent: give up when a segment improves the
# objective by less than this relative amount, or after this many segments
_RESTART_IMPROVEMENT = 1e-9
_MAX_RESTARTS = 50


def minimize_function(
    fun,
    x0: np.ndarray,
    opts: OptimizerOptions,
    trace: list | None = None,
    precondition=None,
):
    """BFGS descent of a callable returning (value, gradient).

    Stops when the gradient infinity-norm drops to gradient_tolerance or
    after max_iterations; accepted iterates never increase the objective
    (Wolfe line search). Line-search stalls (precision loss on badly scaled
    objectives) restart the descent from the stall point as long as the value
    keeps improving; ``precondition``, when given, maps the restart point to
    an initial inverse-Hessian for the fresh segment. Non-finite objectives
    abort the run with a flagged result instead of raising. When a list is
    passed as ``trace`` the objective value of every accepted iterate is
    appended to it.
    """
    x = np.asarray(x0, dtype=float)
    f0, _ = fun(x)
    if not np.isfinite(f0):
        return x, float(f0), {"iterations": 0, "converged": False, "message": "non-finite objective at start"}
    callback = None
    if trace is not None:
        trace.append(float(f0))
        callback = lambda xk: trace.append(float(fun(xk)[0]))
    total_iterations = 0
    previous_value = np.inf
    res = None
    for segment in range(_MAX_RESTARTS):
        options = {
            "gtol": opts.gradient_tolerance,
            "maxiter": opts.max_iterations - total_iterations,
            "norm": np.inf,
        }
        if segment > 0 and precondition is not None:
            H0 = precondition(x)
            if H0 is not None:
                options["hess_inv0"] = H0
        try:
            res = scipy.optimize.minimize(
                fun, x, jac=True, method="BFGS", callback=callback, options=options
            )
        except ValueError:
            if "hess_inv0" not in options:
                return x, float("inf"), {
                    "iterations": total_iterations,
                    "converged": False,
                    "message": "optimizer failure",
                }
            del options["hess_inv0"]  # preconditioner rejected; retry plain
            res = scipy.optimize.minimize(
                fun, x, jac=True, method="BFGS", callback=callback, options=options
            )
        total_iterations += int(res.nit)
        x = np.asarray(res.x, dtype=float)
        # the improvement check below makes zero-progress segments terminal
        if (
            res.success
            or total_iterations >= opts.max_iterations
            or not np.isfinite(res.fun)
            or res.fun >= previous_value * (1 - _RESTART_IMPROVEMENT)
        ):
            break
        previous_value = res.fun
    info = {
        "iterations": total_iterations,
        "converged": bool(res.success) or bool(np.max(np.abs(res.jac)) <= opts.gradient_tolerance),
        "message": str(res.message),
    }
    return x, float(res.fun), info


def _gauss_newton_inverse(spec: ObjectiveSpec):
    """Initial inverse-Hessian builder: regularized (2 J^T W J)^-1 at a point.

    Used to rescale restarted descent segments; essential when W is a
    near-singular inverse covariance whose spectrum spans many decades.
    """

    def build(vec: np.ndarray):
        theta = Params.unpack(vec)
        J = model_jacobian(theta, spec.noise)
        if spec.kind == "ls":
            H = 2.0 * (J.T * spec.ls_weight_vector()) @ J
        else:
            H = 2.0 * J.T @ spec.W.W @ J
        H = (H + H.T) / 2
        lam, V = np.linalg.eigh(H)
        if not np.all(np.isfinite(lam)) or lam[-1] <= 0:
            return None
        lam = np.maximum(lam, lam[-1] * 1e-8)
        inv = (V / lam) @ V.T
        return (inv + inv.T) / 2

    return build


def minimize(theta0: Params, spec: ObjectiveSpec, opts: OptimizerOptions = OptimizerOptions(), trace: list | None = None):
    """Minimize one objective from one starting point.

    Returns (theta, objective value, diagnostics dict).
    """
    fun = lambda vec: objective_and_gradient(Params.unpack(vec), spec)
    x, fval, info = minimize_function(
        fun, theta0.pack(), opts, trace=trace, precondition=_gauss_newton_inverse(spec)
    )
    return Params.unpack(x), fval, info


def _run_starts(
    spec: ObjectiveSpec,
    opts: OptimizerOptions,
    inits: list[Params],
    seed: int | None,
    labels: dict[int, str] | None = None,
):
    starts: list[StartDiagnostic] = []
    best = None
    for k, theta0 in enumerate(inits):
        theta, fval, info = minimize(theta0, spec, opts)
        note = (labels or {}).get(k)
        starts.append(
            StartDiagnostic(
                index=k,
                seed=seed,
                theta0=theta0,
                objective=fval,
                iterations=info["iterations"],
                converged=info["converged"],
                message=f"{note}: {info['message']}" if note else info["message"],
            )
        )
        # strict < keeps the lowest start index on ties
        if np.isfinite(fval) and (best is None or fval < best[1]):
            best = (theta, fval)
    if best is None:
        raise RecoveryError("all optimization starts diverged", starts)
    return best, starts


def recover_from_moments(
    empirical: EmpiricalMoments,
    noise: NoiseModel,
    method: str = "ls",
    opts: OptimizerOptions = OptimizerOptions(),
    *,
    weight: WeightMatrix | None = None,
    rng: np.random.Generator | int | None = None,
    truth: np.ndarray | None = None,
) -> Estimate:
    """Run the multi-start recovery on precomputed empirical moments.

    method "gmm" requires a weight matrix (typically weight_matrix of an
    estimate_covariance result). Besides the random starts, the weighted
    method gets one extra start at the plain least-squares solution computed
    from the same random starts: the inverse-covariance weighting can be
    nearly singular (exactly so on noiseless data), which riddles its
    landscape with shallow basins that plain descent from random points
    rarely escapes, while the cheap first stage lands inside the right one.
    The weighting itself is never recomputed. When the true signal is
    supplied the relative error of the best start is recorded.
    """
    if method == "ls":
        spec = ObjectiveSpec(kind="ls", empirical=empirical, noise=noise)
    elif method == "gmm":
        if weight is None:
            raise ValueError("gmm recovery requires a weight matrix")
        spec = ObjectiveSpec(kind="gmm", empirical=empirical, noise=noise, W=weight)
    else:
        raise ValueError(f"unknown method {method!r}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lo, hi = opts.init_distribution
    inits = [
        Params(x=rng.uniform(lo, hi, size=spec.layout.L), gamma=opts.gamma_init)
        for _ in range(opts.n_starts)
    ]
    labels = None
    if method == "gmm":
        first_stage = ObjectiveSpec(kind="ls", empirical=empirical, noise=noise)
        try:
            (warm, _), _ = _run_starts(first_stage, opts, inits, seed)
            inits = inits + [warm]
            labels = {len(inits) - 1: "warm start from the least-squares stage"}
        except RecoveryError:
            pass  # fall back to the random starts alone
    (theta, fval), starts = _run_starts(spec, opts, inits, seed, labels)
    err = relative_error(theta.x, truth) if truth is not None else None
    return Estimate(
        theta_hat=theta,
        objective_value=fval,
        method=method,
        relative_error=err,
        starts=starts,
    )


def recover(
    measurement: Measurement,
    method: str = "ls",
    opts: OptimizerOptions = OptimizerOptions(),
    *,
    stride: int = 1,
    weight: WeightMatrix | None = None,
    rng: np.random.Generator | int | None = None,
    truth: np.ndarray | None = None,
) -> Estimate:
    """End-to-end recovery from a measurement.

    Computes the empirical moments, and for "gmm" also the window covariance
    at the given stride (unless a precomputed weight matrix is passed), then
    delegates to recover_from_moments. The noise variance comes from the
    measurement spec.
    """
    L = measurement.spec.L
    emp = empirical_moments(measurement.y, L)
    if method == "gmm" and weight is None:
        weight = weight_matrix(estimate_covariance(measurement.y, L, stride))
    return recover_from_moments(
        emp,
        NoiseModel(measurement.spec.sigma2),
        method,
        opts,
        weight=weight,
        rng=rng,
        truth=truth,
    )


def relative_error(x: np.ndarray, x_star: np.ndarray) -> float:
    """||x - x*|| / ||x*||, with no shift or reflection alignment."""
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x.shape != x_star.shape:
        raise ValueError("signals must have equal length")
    denom = np.linalg.norm(x_star)
    if denom == 0:
        raise ValueError("ground truth must be nonzero")
    return float(np.linalg.norm(x - x_star) / denom)


def aligned_relative_error(x: np.ndarray, x_star: np.ndarray) -> float:
    """Diagnostic-only variant minimizing over reflections and support shifts.

    The reported experiment metric is the raw relative_error; this exists to
    tell near-misses (shifted or flipped recoveries) apart from failures.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    L = x.size
    best = np.inf
    for cand in (x, x[::-1]):
        for s in range(-(L - 1), L):
            shifted = np.zeros(L)
            if s >= 0:
                shifted[s:] = cand[: L - s]
            else:
                shifted[: L + s] = cand[-s:]
            best = min(best, relative_error(shifted, x_star))
    return best


def asymptotic_covariance(
    J0: np.ndarray,
    S: CovarianceEstimate | np.ndarray,
    W: WeightMatrix | np.ndarray,
) -> np.ndarray:
    """Sandwich covariance M S M^T with M = (J^T W J)^-1 J^T W.

    With W = S^-1 this equals (J^T S^-1 J)^-1, the smallest attainable
    (in trace order) over positive-definite weightings.
    """
    J0 = np.asarray(J0, dtype=float)
    Smat = np.asarray(S.S if isinstance(S, CovarianceEstimate) else S, dtype=float)
    Wmat = np.asarray(W.W if isinstance(W, WeightMatrix) else W, dtype=float)
    JtW = J0.T @ Wmat
    A = JtW @ J0
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(
            f"J^T W J is numerically singular (condition number {cond:.3e})"
        )
    M = np.linalg.solve(A, JtW)
    out = M @ Smat @ M.T
    return (out + out.T) / 2


def estimate_to_dict(est: Estimate) -> dict:
    """JSON-ready record of an estimate, including the per-start table."""
    return {
        "method": est.method,
        "x_hat": est.theta_hat.x.tolist(),
        "gamma_hat": est.theta_hat.gamma,
        "objective": est.objective_value,
        "relative_error": est.relative_error,
        "starts": [
            {
                "index": s.index,
                "seed": s.seed,
                "x0": s.theta0.x.tolist(),
                "gamma0": s.theta0.gamma,
                "objective": s.objective,
                "iterations": s.iterations,
                "converged": s.converged,
                "message": s.message,
            }
            for s in est.starts
        ],
    }


def write_estimate_json(path, est: Estimate) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimate_to_dict(est), fh, indent=2)
        fh.write("\n")
