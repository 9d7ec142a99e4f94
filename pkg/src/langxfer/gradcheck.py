"""Finite-difference verification of the hand-written gradients.

Runs entirely in float64: the analytic reverse-mode gradient is compared
against central differences on a random sample of parameter coordinates.

A central difference (L(t+e) - L(t-e)) / 2e carries irreducible float64
round-off of about |L| * machine_eps / e. Coordinates whose gradient
magnitude sits below that noise floor (scaled to the target tolerance)
cannot be certified by this probe at all -- comparing there measures the
probe's noise, not the gradient -- so the sampler redraws them and only
scores resolvable coordinates.
"""

from __future__ import annotations

import numpy as np

from .model import Parameters, TokenBatch, batch_loss, loss_and_grads

TARGET_TOLERANCE = 1e-4


def grad_check(params: Parameters, batch: TokenBatch, epsilon: float = 1e-5,
               n_coords: int = 200, seed: int = 0,
               activation: str = "gelu") -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples at least ``n_coords`` resolvable coordinates spread over every
    tensor (so each layer type is covered), perturbs each by +/- ``epsilon``
    and compares (L(t+e) - L(t-e)) / 2e with the analytic value, using
    max(|analytic|, |numeric|, 1e-8) as the denominator.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if n_coords < 1:
        raise ValueError("n_coords must be >= 1")
    work = params.astype(np.float64)
    base_loss, _, grads = loss_and_grads(work, batch, activation)

    # smallest gradient the probe can certify at the target tolerance,
    # with a 2x safety margin on the round-off bound
    noise_floor = abs(base_loss) * float(np.finfo(np.float64).eps) / epsilon
    min_grad = noise_floor / (0.5 * TARGET_TOLERANCE)

    rng = np.random.default_rng(seed)
    names = sorted(work.tensors)

    def draw(name: str) -> tuple[str, int] | None:
        flat = grads[name].reshape(-1)
        for _ in range(64):
            idx = int(rng.integers(flat.size))
            if abs(flat[idx]) >= min_grad:
                return name, idx
        return None

    coords: list[tuple[str, int]] = []
    for name in names:  # one coordinate per tensor keeps every layer covered
        picked = draw(name)
        if picked is not None:
            coords.append(picked)
    attempts = 0
    while len(coords) < n_coords and attempts < 50 * n_coords:
        attempts += 1
        picked = draw(names[int(rng.integers(len(names)))])
        if picked is not None:
            coords.append(picked)
    if len(coords) < min(n_coords, 8):
        raise RuntimeError(
            "gradient field is too small to sample resolvable coordinates; "
            "use a larger epsilon or a batch with a steeper loss")

    worst = 0.0
    for name, idx in coords:
        flat = work.tensors[name].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + epsilon
        up = batch_loss(work, batch, activation)
        flat[idx] = orig - epsilon
        down = batch_loss(work, batch, activation)
        flat[idx] = orig
        numeric = (up - down) / (2.0 * epsilon)
        analytic = float(grads[name].reshape(-1)[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
