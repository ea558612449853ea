"""Learned point-to-surface distance regressor.

A fully connected network maps the concatenation of a query point's three
coordinates and its flattened local Fisher patch to one scalar distance.
Hidden layers are affine + batch normalization + rectifier; the head is a
plain affine.  Forward, backward, the adaptive-moment optimizer and the
training loop are implemented directly in float64 numpy so every gradient
can be verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import generate_training_batch, load_mesh_dir, shape_pool
from .fisher import FISHER_CHANNELS, FisherGrid, GaussianGrid, compute_fisher_grid, extract_patch_batch
from .geometry import as_cloud, normalize_mesh

__all__ = [
    "TrainingDivergenceError",
    "MlpModel",
    "OptimizerState",
    "TrainConfig",
    "assemble_inputs",
    "train_step",
    "train",
    "spd_distance",
    "spd_distances",
    "gradient_check",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class TrainingDivergenceError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


def _f32_grid(arr: np.ndarray) -> np.ndarray:
    # Snap to values representable in 32-bit floats; archives store 32 bits,
    # so parameters on this grid round-trip through save/load bit for bit.
    return arr.astype("<f4").astype(np.float64)


class MlpModel:
    """Distance regressor over [point coordinates | flattened local patch].

    Layer widths run (3 + k^3 * fisher_channels) -> hidden ... -> 1.  The
    ``mode`` flag selects batch statistics ('training') or running statistics
    ('inference') in the normalization layers; inference is deterministic and
    batch-size independent.  ``grid_size`` and ``sigma`` record the Gaussian
    grid the model was trained against so evaluation can rebuild it.
    """

    def __init__(
        self,
        k: int = 5,
        fisher_channels: int = FISHER_CHANNELS,
        hidden=(1024, 1024, 1024),
        grid_size: int = 8,
        sigma: float = 0.125,
        seed=0,
        metadata: dict | None = None,
    ):
        if k < 1 or k % 2 == 0:
            raise ValueError(f"patch size k must be odd and >= 1, got {k}")
        if fisher_channels < 1:
            raise ValueError("fisher_channels must be >= 1")
        hidden = tuple(int(h) for h in hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError("hidden widths must be positive")
        if grid_size < 1 or not sigma > 0:
            raise ValueError("invalid grid configuration")
        self.k = int(k)
        self.fisher_channels = int(fisher_channels)
        self.hidden = hidden
        self.grid_size = int(grid_size)
        self.sigma = float(sigma)
        self.input_width = 3 + self.k**3 * self.fisher_channels
        self.mode = "training"
        self.metadata = dict(metadata or {})

        rng = np.random.default_rng(seed)
        widths = [self.input_width, *hidden, 1]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / fan_in)  # uniform with variance 2 / fan_in
            self.weights.append(_f32_grid(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
            self.biases.append(np.zeros(fan_out))
        self.bn_scale = [np.ones(h) for h in hidden]
        self.bn_shift = [np.zeros(h) for h in hidden]
        self.bn_mean = [np.zeros(h) for h in hidden]
        self.bn_var = [np.ones(h) for h in hidden]

    @property
    def n_hidden(self) -> int:
        return len(self.hidden)

    def named_tensors(self):
        """All tensors in serialization order (running statistics included)."""
        out = []
        for i in range(self.n_hidden):
            out.extend(
                [
                    (f"layer{i}.weight", self.weights[i]),
                    (f"layer{i}.bias", self.biases[i]),
                    (f"layer{i}.bn_scale", self.bn_scale[i]),
                    (f"layer{i}.bn_shift", self.bn_shift[i]),
                    (f"layer{i}.bn_mean", self.bn_mean[i]),
                    (f"layer{i}.bn_var", self.bn_var[i]),
                ]
            )
        i = self.n_hidden
        out.extend([(f"layer{i}.weight", self.weights[i]), (f"layer{i}.bias", self.biases[i])])
        return out

    def trainable_tensors(self):
        """Tensors the optimizer updates (running statistics excluded)."""
        return [(name, arr) for name, arr in self.named_tensors() if ".bn_mean" not in name and ".bn_var" not in name]

    @classmethod
    def from_tensors(cls, header: dict, tensors: dict) -> "MlpModel":
        model = cls(
            k=header["k"],
            fisher_channels=header["fisher_channels"],
            hidden=tuple(header["hidden"]),
            grid_size=header["grid_size"],
            sigma=header["sigma"],
            metadata=header.get("metadata", {}),
        )
        for name, arr in model.named_tensors():
            if name not in tensors:
                raise ValueError(f"archive is missing tensor {name!r}")
            if tensors[name].shape != arr.shape:
                raise ValueError(f"tensor {name!r} has shape {tensors[name].shape}, expected {arr.shape}")
            arr[...] = tensors[name]
        model.mode = "inference"
        return model

    def round_to_f32(self):
        """Snap every tensor to the 32-bit grid (call once after training)."""
        for _, arr in self.named_tensors():
            arr[...] = _f32_grid(arr)
        return self

    def _forward(self, x: np.ndarray, want_cache: bool):
        training = self.mode == "training"
        cache = [] if want_cache else None
        h = x
        for i in range(self.n_hidden):
            z = h @ self.weights[i] + self.biases[i]
            if training:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                self.bn_mean[i] *= BN_MOMENTUM
                self.bn_mean[i] += (1.0 - BN_MOMENTUM) * mean
                self.bn_var[i] *= BN_MOMENTUM
                self.bn_var[i] += (1.0 - BN_MOMENTUM) * var
            else:
                mean = self.bn_mean[i]
                var = self.bn_var[i]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mean) * inv_std
            a = self.bn_scale[i] * zhat + self.bn_shift[i]
            mask = a > 0
            h_next = np.where(mask, a, 0.0)
            if want_cache:
                cache.append((h, zhat, inv_std, mask))
            h = h_next
        out = h @ self.weights[-1] + self.biases[-1]
        if want_cache:
            cache.append(h)
        return out[:, 0], cache

    def forward(self, inputs) -> np.ndarray | float:
        """Network output for one input vector or a batch of them."""
        x = np.asarray(inputs, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValueError(f"input width {x.shape[-1]} does not match model width {self.input_width}")
        out, _ = self._forward(x, want_cache=False)
        return float(out[0]) if single else out

    def _backward(self, cache, dout: np.ndarray):
        """Gradients of sum(dout * output) from a cached forward pass.

        Returns (parameter-gradient dict, input gradients).  In training mode
        the normalization backward treats batch statistics as functions of
        the batch; in inference mode they are constants.
        """
        training = self.mode == "training"
        grads = {}
        h_last = cache[-1]
        d = dout.reshape(-1, 1)
        grads[f"layer{self.n_hidden}.weight"] = h_last.T @ d
        grads[f"layer{self.n_hidden}.bias"] = d.sum(axis=0)
        dh = d @ self.weights[-1].T
        for i in range(self.n_hidden - 1, -1, -1):
            h_prev, zhat, inv_std, mask = cache[i]
            da = np.where(mask, dh, 0.0)
            grads[f"layer{i}.bn_scale"] = (da * zhat).sum(axis=0)
            grads[f"layer{i}.bn_shift"] = da.sum(axis=0)
            dzhat = da * self.bn_scale[i]
            if training:
                b = len(h_prev)
                dz = (inv_std / b) * (
                    b * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0)
                )
            else:
                dz = dzhat * inv_std
            grads[f"layer{i}.weight"] = h_prev.T @ dz
            grads[f"layer{i}.bias"] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
        return grads, dh

    def forward_backward(self, x: np.ndarray, dout: np.ndarray):
        """Forward pass plus gradients of sum(dout * output); returns
        (outputs, parameter-gradient dict, input gradients)."""
        out, cache = self._forward(x, want_cache=True)
        grads, dx = self._backward(cache, dout)
        return out, grads, dx


@dataclass
class OptimizerState:
    """Adaptive-moment optimizer with a stepped exponential rate schedule.

    The effective rate at step ``t`` is ``learning_rate * decay**(t //
    decay_interval)``; first/second moment accumulators live per parameter
    tensor and updates apply bias correction.
    """

    learning_rate: float = 1e-3
    decay: float = 0.5
    decay_interval: int = 300_000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)

    def effective_rate(self) -> float:
        return self.learning_rate * self.decay ** (self.step // self.decay_interval)

    def apply(self, model: MlpModel, grads: dict):
        rate = self.effective_rate()
        t = self.step + 1
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, param in model.trainable_tensors():
            g = grads[name].reshape(param.shape)
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(param), np.zeros_like(param), np.empty_like(param))
            m, v, scratch = self.moments[name]
            # In-place update: param -= rate * (m/c1) / (sqrt(v/c2) + eps)
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=scratch)
            m += scratch
            v *= self.beta2
            np.multiply(g, g, out=scratch)
            scratch *= 1.0 - self.beta2
            v += scratch
            np.divide(v, c2, out=scratch)
            np.sqrt(scratch, out=scratch)
            scratch += self.epsilon
            np.divide(m, scratch, out=scratch)
            scratch *= rate / c1
            param -= scratch
        self.step = t


def assemble_inputs(fisher_grid: FisherGrid, points, k: int) -> np.ndarray:
    """Stack [coordinates | flattened local patch] rows for a batch of queries."""
    pts = as_cloud(points)
    patches = extract_patch_batch(fisher_grid, pts, k).reshape(len(pts), -1)
    return np.concatenate([pts, patches], axis=1)


def train_step(model: MlpModel, opt: OptimizerState, inputs: np.ndarray, targets: np.ndarray) -> float:
    """One mean-absolute-error descent step; returns the pre-update loss.

    The absolute-error subgradient at zero residual is taken as 0.
    """
    if model.mode != "training":
        raise ValueError("train_step requires the model in training mode")
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    out, cache = model._forward(x, want_cache=True)
    residual = out - y
    loss = float(np.mean(np.abs(residual)))
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite loss at optimizer step {opt.step}")
    dout = np.sign(residual) / len(y)
    grads, _ = model._backward(cache, dout)
    opt.apply(model, grads)
    return loss


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; identical configs with identical
    seeds produce bit-identical models."""

    seed: int
    steps: int = 6000
    n_points: int = 64
    scenes_per_step: int = 1
    k: int = 5
    grid_size: int = 8
    sigma: float = 0.125
    fisher_channels: int = FISHER_CHANNELS
    hidden: tuple = (1024, 1024, 1024)
    learning_rate: float = 1e-3
    decay: float = 0.5
    decay_interval: int = 300_000
    shape_kinds: tuple = ("plane", "sphere", "box")
    pool_size: int = 8
    resolution: int = 12
    mesh_dir: str | None = None

    def __post_init__(self):
        if self.k % 2 == 0 or self.k < 1:
            raise ValueError(f"patch size k must be odd, got {self.k}")
        for name in ("steps", "n_points", "scenes_per_step", "grid_size", "fisher_channels", "pool_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.sigma > 0 or not self.learning_rate > 0:
            raise ValueError("sigma and learning_rate must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "shape_kinds", tuple(self.shape_kinds))


def _training_pool(config: TrainConfig):
    if config.mesh_dir is not None:
        return [normalize_mesh(m) for m in load_mesh_dir(config.mesh_dir)]
    return shape_pool(
        config.shape_kinds,
        config.pool_size,
        np.random.SeedSequence((config.seed, 0)),
        resolution=config.resolution,
    )


def train(config: TrainConfig, progress=None):
    """Full training loop: returns (model in inference mode, loss history).

    Each step draws one mesh from the pool per scene, builds a fresh training
    batch and its Fisher grid, and performs one descent step on the stacked
    queries.  History rows are (step, loss, effective learning rate).  The
    returned model is snapped to the 32-bit grid so archives round-trip
    exactly.
    """
    pool = _training_pool(config)
    model = MlpModel(
        k=config.k,
        fisher_channels=config.fisher_channels,
        hidden=config.hidden,
        grid_size=config.grid_size,
        sigma=config.sigma,
        seed=np.random.SeedSequence((config.seed, 1)),
    )
    opt = OptimizerState(
        learning_rate=config.learning_rate,
        decay=config.decay,
        decay_interval=config.decay_interval,
    )
    grid = GaussianGrid(config.grid_size, config.sigma)
    history = []
    for step in range(config.steps):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2, step)))
        inputs = []
        targets = []
        for _ in range(config.scenes_per_step):
            mesh = pool[rng.integers(len(pool))]
            batch = generate_training_batch(mesh, config.n_points, rng)
            fg = compute_fisher_grid(batch.surface_cloud, grid)
            inputs.append(assemble_inputs(fg, batch.queries, config.k))
            targets.append(batch.gt_distances)
        rate = opt.effective_rate()
        loss = train_step(model, opt, np.concatenate(inputs), np.concatenate(targets))
        history.append((step, loss, rate))
        if progress is not None:
            progress(step, loss)
    model.round_to_f32()
    model.mode = "inference"
    model.metadata.update(
        {
            "steps": config.steps,
            "seed": config.seed,
            "n_points": config.n_points,
            "scenes_per_step": config.scenes_per_step,
            "shape_kinds": list(config.shape_kinds) if config.mesh_dir is None else [],
            "mesh_dir": config.mesh_dir or "",
        }
    )
    return model, history


def spd_distances(model: MlpModel, points, fisher_grid: FisherGrid) -> np.ndarray:
    """Predicted surface distance for each query point, clamped at zero."""
    if fisher_grid.grid.size != model.grid_size:
        raise ValueError(
            f"Fisher grid size {fisher_grid.grid.size} does not match model grid size {model.grid_size}"
        )
    raw = model.forward(assemble_inputs(fisher_grid, points, model.k))
    return np.maximum(np.atleast_1d(raw), 0.0)


def spd_distance(model: MlpModel, point, fisher_grid: FisherGrid) -> float:
    """Predicted surface distance of one query point against one cloud's grid."""
    return float(spd_distances(model, np.asarray(point, dtype=np.float64).reshape(1, 3), fisher_grid)[0])


def gradient_check(model: MlpModel, n_trials: int = 10, epsilon: float = 1e-3, seed=0, entries_per_tensor: int = 5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Uses a smooth squared-error surrogate loss with normalization frozen at
    the model's running statistics.  Analytic gradients cover every parameter
    tensor and the input vector; finite differences probe the three
    coordinate inputs and ``entries_per_tensor`` sampled entries of each
    trainable tensor (probing all of the millions of parameters would dwarf
    the runtime budget without changing the verdict).

    A central difference only estimates the derivative where the loss is
    smooth, so any probe whose perturbation flips a rectifier unit's
    activation state within the difference interval is redrawn; with the
    activation pattern fixed the loss is quadratic along each probe direction
    and the comparison is exact up to roundoff.
    """
    rng = np.random.default_rng(seed)
    saved_mode = model.mode
    model.mode = "inference"
    worst = 0.0

    def loss_and_masks(vec):
        out, cache = model._forward(vec.reshape(1, -1), want_cache=True)
        masks = [entry[3] for entry in cache[:-1]]
        return 0.5 * (out[0] - y) ** 2, masks

    def fd_if_smooth(perturb, restore, center_masks):
        """Two-sided difference, or None when the activation pattern moves."""
        perturb(epsilon)
        up, masks_up = loss_and_masks(x)
        restore()
        perturb(-epsilon)
        down, masks_dn = loss_and_masks(x)
        restore()
        for m_c, m_u, m_d in zip(center_masks, masks_up, masks_dn):
            if not (np.array_equal(m_c, m_u) and np.array_equal(m_c, m_d)):
                return None
        return (up - down) / (2 * epsilon)

    try:
        for _ in range(n_trials):
            x = rng.uniform(-1.0, 1.0, size=model.input_width)
            y = rng.uniform(0.0, 0.5)
            out, grads, dx = model.forward_backward(x.reshape(1, -1), np.array([1.0]))
            _, center_masks = loss_and_masks(x)
            scale = out[0] - y  # chain factor: dL/dout
            checks = []

            for j in range(3):

                def bump(eps, j=j):
                    x[j] += eps

                def restore(j=j, orig=x[j]):
                    x[j] = orig

                fd = fd_if_smooth(bump, restore, center_masks)
                if fd is not None:
                    checks.append((scale * dx[0, j], fd))

            for name, param in model.trainable_tensors():
                analytic = scale * grads[name].reshape(param.shape)
                accepted = 0
                for _ in range(20 * entries_per_tensor):
                    if accepted >= min(entries_per_tensor, param.size):
                        break
                    idx = np.unravel_index(rng.integers(param.size), param.shape)
                    orig = param[idx]

                    def bump(eps, param=param, idx=idx, orig=orig):
                        param[idx] = orig + eps

                    def restore(param=param, idx=idx, orig=orig):
                        param[idx] = orig

                    fd = fd_if_smooth(bump, restore, center_masks)
                    if fd is not None:
                        checks.append((analytic[idx], fd))
                        accepted += 1

            for a, f in checks:
                denom = max(abs(a), abs(f), 1e-6)
                worst = max(worst, abs(a - f) / denom)
    finally:
        model.mode = saved_mode
    return worst
