"""
The three-player linear game as a dynamical system: vector field,
finite-difference Jacobian, closed-form eigenvalues, stability verdicts,
RK4 trajectories and streamline-grid export.

State w = (w1, w2, w3) holds the encoder, discriminator and predictor
weights. Each sample is x = 1 with (t, s) in {00, 01, 10, 11}; z = w1,
the predictor logit is v = w1 * w3 and the discriminator logit is
u = w1 * w2 (bilinear) or u = w1**2 + w2 (quadratic, w2 acting as bias).
"""

import cmath
import logging
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .arl import VARIANTS, cross_entropy, encoder_objective, kl_to_uniform

logger = logging.getLogger(__name__)

GAME_FORMS = ("bilinear", "quadratic")
COORDINATES = ("w1", "w2", "w3")
DEFAULT_START = (0.008, 0.006, 0.004)
TARGETS = np.array([0, 0, 1, 1])
SENSITIVE = np.array([0, 1, 0, 1])

ASYMPTOTICALLY_STABLE = "asymptotically_stable"
UNSTABLE = "unstable"
INCONCLUSIVE = "inconclusive"


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class LinearGame:
    variant: str = "ml"
    alpha: float = 1.0
    game_form: str = "bilinear"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.game_form not in GAME_FORMS:
            raise ValueError(f"game form must be one of {GAME_FORMS}, got '{self.game_form}'")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def discriminator_logit(self, w1, w2):
        """u and its partials (du/dw1, du/dw2)."""
        if self.game_form == "bilinear":
            return w1 * w2, w2, w1
        return w1 * w1 + w2, 2.0 * w1, 1.0

    def losses(self, w):
        """Closed-form v1, v2, v3 and encoder objective, averaged over the four samples."""
        w1, w2, w3 = (float(c) for c in w)
        u, _, _ = self.discriminator_logit(w1, w2)
        v = w1 * w3
        # half the samples have each label, so the mean CE is symmetric in the logit
        v1 = 0.5 * (np.logaddexp(0.0, -u) + np.logaddexp(0.0, u))
        v2 = 0.5 * (np.logaddexp(0.0, -v) + np.logaddexp(0.0, v))
        p = _sigmoid(u)
        entropy = -sum(q * math.log(q) for q in (p, 1.0 - p) if q > 0)
        v3 = math.log(2.0) - entropy
        total = v2 - self.alpha * v1 if self.variant == "ml" else v2 + self.alpha * v3
        return {"v1": float(v1), "v2": float(v2), "v3": v3, "encoder_total": float(total)}

    def __call__(self, w):
        return field(self, w)


def field(game, w):
    """(f_enc, f_disc, f_pred): each player's negative gradient of its own loss."""
    w1, w2, w3 = (float(c) for c in w)
    u, du_dw1, du_dw2 = game.discriminator_logit(w1, w2)
    v = w1 * w3
    p_s, p_t = _sigmoid(u), _sigmoid(v)

    f_disc = -(p_s - 0.5) * du_dw2
    f_pred = -(p_t - 0.5) * w1
    if game.variant == "ml":
        privacy = -game.alpha * (p_s - 0.5) * du_dw1
    else:
        # d/du KL(q || U) = u * sigma'(u), since ln(p / (1 - p)) = u
        privacy = game.alpha * u * p_s * (1.0 - p_s) * du_dw1
    f_enc = -((p_t - 0.5) * w3 + privacy)
    return np.array([f_enc, f_disc, f_pred])


def autodiff_field(game, w):
    """The same field, computed by backpropagating the ARL losses on a tape."""
    w1, w2, w3 = (float(c) for c in w)
    tape = ad.Tape()
    x = tape.constant(np.ones((4, 1)))
    z = ad.matmul(x, tape.leaf([[w1]], "encoder.w1"))
    target_logits = ad.matmul(z, tape.leaf([[0.0, w3]], "predictor.w3"))
    if game.game_form == "bilinear":
        disc_logits = ad.matmul(z, tape.leaf([[0.0, w2]], "discriminator.w2"))
    else:
        squared = ad.matmul(ad.multiply(z, z), tape.constant([[0.0, 1.0]]))
        disc_logits = ad.add(squared, tape.leaf([0.0, w2], "discriminator.w2"))

    v1 = cross_entropy(disc_logits, SENSITIVE)
    v2 = cross_entropy(target_logits, TARGETS)
    v3 = kl_to_uniform(disc_logits)
    total = encoder_objective(game.variant, game.alpha, v1, v2, v3)

    def gradient(loss, key):
        tape.zero_grad()
        return ad.backward(tape, loss)[key].reshape(-1)[-1]

    return -np.array([
        gradient(total, "encoder.w1"),
        gradient(v1, "discriminator.w2"),
        gradient(v2, "predictor.w3"),
    ])


# --- linearization ----------------------------------------------------------

def jacobian(vector_field, point, h=1e-6):
    """Central-difference Jacobian J[i, j] = d f_i / d w_j."""
    point = np.asarray(point, dtype=np.float64)
    dim = len(vector_field(point))
    return np.vstack([
        ad.finite_difference_grad(lambda w, i=i: vector_field(w)[i], point, h) for i in range(dim)
    ])


def _characteristic(J):
    """Coefficients (a, b, c) of det(lambda I - J) = lambda^3 + a lambda^2 + b lambda + c."""
    a = -np.trace(J)
    b = (J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
         + J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
         + J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
    c = -np.linalg.det(J)
    return float(a), float(b), float(c)


def _polish(root, a, b, c, iterations=3):
    for _ in range(iterations):
        value = ((root + a) * root + b) * root + c
        slope = (3.0 * root + 2.0 * a) * root + b
        if slope == 0:
            break
        candidate = root - value / slope
        if abs(((candidate + a) * candidate + b) * candidate + c) >= abs(value):
            break
        root = candidate
    return root


def eigenvalues(J):
    """Roots of the characteristic cubic by Cardano's formula, real part descending."""
    J = np.asarray(J, dtype=np.float64)
    if J.shape != (3, 3) or not np.all(np.isfinite(J)):
        raise ValueError(f"eigenvalues expects a finite 3x3 matrix, got shape {J.shape}")
    # solve for J / max|J_ij| so the cubic's coefficients stay near 1
    scale = float(np.abs(J).max())
    if scale == 0.0:
        return [0j, 0j, 0j]
    a, b, c = _characteristic(J / scale)
    delta0 = a * a - 3.0 * b
    delta1 = 2.0 * a ** 3 - 9.0 * a * b + 27.0 * c

    if abs(delta0) < 1e-300 and abs(delta1) < 1e-300:
        roots = [complex(-a / 3.0)] * 3
    else:
        root = cmath.sqrt(delta1 * delta1 - 4.0 * delta0 ** 3)
        # the sign choice keeps C away from zero
        big = delta1 + root if abs(delta1 + root) >= abs(delta1 - root) else delta1 - root
        C = (big / 2.0) ** (1.0 / 3.0)
        xi = complex(-0.5, math.sqrt(3.0) / 2.0)
        roots = []
        for k in range(3):
            ck = C * xi ** k
            roots.append(_polish(-(a + ck + delta0 / ck) / 3.0, a, b, c))

    cleaned = []
    for r in roots:
        real = 0.0 if abs(r.real) < 1e-14 else r.real
        imag = 0.0 if abs(r.imag) < 1e-12 else r.imag
        cleaned.append(complex(real * scale, imag * scale))
    return sorted(cleaned, key=lambda r: (-r.real, -r.imag))


def classify_stability(eigs, tol=1e-9):
    """Linearization verdict: stable if every Re < -tol, unstable if any Re > tol."""
    largest = max(complex(e).real for e in eigs)
    if largest > tol:
        return UNSTABLE
    if largest < -tol:
        return ASYMPTOTICALLY_STABLE
    return INCONCLUSIVE


# --- trajectories -----------------------------------------------------------

@dataclass
class Trajectory:
    start: tuple
    steps: list
    states: np.ndarray
    field_norms: np.ndarray
    diverged: bool = False

    @property
    def end(self):
        return self.states[-1]

    @property
    def terminal_field_norm(self):
        return float(self.field_norms[-1])


def frozen_mask(frozen):
    """Zero entries for frozen coordinates, given as names ('w3') or indices."""
    mask = np.ones(len(COORDINATES))
    for item in frozen:
        index = COORDINATES.index(item) if isinstance(item, str) else int(item)
        mask[index] = 0.0
    return mask


def integrate(vector_field, start, dt, steps, frozen=(), record_every=1, divergence=1e3, progress=False):
    """Classical RK4 along the field with frozen coordinates held fixed."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if steps < 0 or record_every < 1:
        raise ValueError("steps must be >= 0 and record_every >= 1")
    mask = frozen_mask(frozen)

    def f(w):
        return np.asarray(vector_field(w), dtype=np.float64) * mask

    w = np.asarray(start, dtype=np.float64).copy()
    recorded_steps, states, norms = [0], [w.copy()], [float(np.linalg.norm(f(w)))]
    diverged = False
    last = 0
    for n in tqdm(range(1, steps + 1), desc="integrate", unit="step", disable=not progress, mininterval=1.0):
        k1 = f(w)
        k2 = f(w + 0.5 * dt * k1)
        k3 = f(w + 0.5 * dt * k2)
        k4 = f(w + dt * k3)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        last = n
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > divergence:
            diverged = True
            logger.warning("Trajectory from %s diverged at step %d (|w| > %g)", tuple(start), n, divergence)
            break
        if n % record_every == 0:
            recorded_steps.append(n)
            states.append(w.copy())
            norms.append(float(np.linalg.norm(f(w))))

    if recorded_steps[-1] != last:
        recorded_steps.append(last)
        states.append(w.copy())
        norms.append(float(np.linalg.norm(f(w))) if not diverged else math.inf)
    return Trajectory(tuple(float(c) for c in start), recorded_steps, np.array(states), np.array(norms), diverged)


def write_trajectory(path, trajectory):
    frame = pd.DataFrame(trajectory.states, columns=list(COORDINATES))
    frame.insert(0, "step", trajectory.steps)
    frame["field_norm"] = trajectory.field_norms
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def grid_export(vector_field, path=None, n=30, extent=0.01):
    """Field sampled on an n^3 lattice over [-extent, extent]^3; written as CSV when `path` is given."""
    if n < 2:
        raise ValueError(f"grid size must be >= 2, got {n}")
    axis = np.linspace(-extent, extent, n)
    lattice = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.array([vector_field(w) for w in lattice])
    frame = pd.DataFrame(np.hstack([lattice, values]), columns=["w1", "w2", "w3", "f1", "f2", "f3"])
    if path is not None:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return frame


# --- reports ----------------------------------------------------------------

@dataclass
class DynamicsReport:
    game: LinearGame
    equilibrium: tuple
    jacobian: np.ndarray
    eigenvalues: list
    verdict: str
    trajectories: list = dataclass_field(default_factory=list)
    end_jacobian: np.ndarray = None
    end_eigenvalues: list = None
    end_verdict: str = None
    files: dict = dataclass_field(default_factory=dict)


def linearize(game, point):
    J = jacobian(game, point)
    eigs = eigenvalues(J)
    return J, eigs, classify_stability(eigs)


def analyze(game, start=DEFAULT_START, dt=0.1, steps=100_000, frozen=(), record_every=100, progress=False):
    """Linearize at the origin, integrate one trajectory and linearize at its end point."""
    origin = (0.0, 0.0, 0.0)
    J, eigs, verdict = linearize(game, origin)
    trajectory = integrate(game, start, dt, steps, frozen, record_every, progress=progress)
    report = DynamicsReport(game, origin, J, eigs, verdict, [trajectory])
    if not trajectory.diverged:
        report.end_jacobian, report.end_eigenvalues, report.end_verdict = linearize(game, trajectory.end)
    logger.info("origin verdict %s; trajectory end %s, |f| = %.3e",
                verdict, tuple(trajectory.end), trajectory.terminal_field_norm)
    return report


def _format_vector(values):
    return ",".join(format(float(v), ".10g") for v in values)


def _format_matrix(matrix):
    return "; ".join(_format_vector(row) for row in matrix)


def _format_complex(values):
    return ",".join(f"{complex(v).real:.10g}{complex(v).imag:+.10g}j" for v in values)


def write_report(path, report):
    """Key: value text report of the linearization and trajectory summaries."""
    game = report.game
    lines = [
        "# arl-lab dynamics report",
        f"variant: {game.variant}",
        f"alpha: {game.alpha:g}",
        f"gameForm: {game.game_form}",
        f"equilibrium: {_format_vector(report.equilibrium)}",
        f"jacobian: {_format_matrix(report.jacobian)}",
        f"eigenvalues: {_format_complex(report.eigenvalues)}",
        f"verdict: {report.verdict}",
    ]
    for i, trajectory in enumerate(report.trajectories):
        lines += [
            f"trajectory{i}.start: {_format_vector(trajectory.start)}",
            f"trajectory{i}.end: {_format_vector(trajectory.end)}",
            f"trajectory{i}.steps: {trajectory.steps[-1]}",
            f"trajectory{i}.diverged: {str(trajectory.diverged).lower()}",
            f"trajectory{i}.terminalFieldNorm: {trajectory.terminal_field_norm:.6e}",
        ]
    if report.end_jacobian is not None:
        lines += [
            f"endJacobian: {_format_matrix(report.end_jacobian)}",
            f"endEigenvalues: {_format_complex(report.end_eigenvalues)}",
            f"endVerdict: {report.end_verdict}",
        ]
    for name, file_path in report.files.items():
        lines.append(f"{name}File: {file_path}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
