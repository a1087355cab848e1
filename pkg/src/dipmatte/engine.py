"""Alpha matting with three jointly optimized untrained U-nets.

The image network reconstructs the input and carries a second head for the
matte; two further networks extrapolate foreground and background colours
from their trimap regions.  Six unweighted loss terms tie them together
through the compositing equation ``I = a*F + (1 - a)*B``.
"""

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ops
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad, reset_tape
from .trimap import TrimapMasks
from .unet import OutputHead, UNetConfig, build_unet, load_network_state, network_state

log = logging.getLogger(__name__)

LOSS_TERMS = ("L_I", "L_alpha", "L_F", "L_B", "L_c", "L_e")
HISTORY_COLUMNS = ("iter",) + LOSS_TERMS + ("total",)
NETWORK_NAMES = ("image_net", "fg_net", "bg_net")


class DivergenceError(FloatingPointError):
    """A loss term became non-finite or exceeded the divergence limit."""

    def __init__(self, term, iteration, value):
        super().__init__(f"loss term {term} diverged at iteration {iteration} (value {value!r})")
        self.term = term
        self.iteration = iteration
        self.value = value


@dataclass
class EngineConfig:
    lr: float = 0.001
    max_iters: int = 4000
    loss_threshold: Optional[float] = None
    seed: int = 0
    snapshot_every: int = 0
    unet: UNetConfig = field(default_factory=UNetConfig)
    dtype: str = "float32"
    divergence_limit: float = 1e6

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.loss_threshold is not None and not self.loss_threshold > 0:
            raise ValueError(f"loss_threshold must be positive, got {self.loss_threshold}")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass
class MattingProblem:
    image: np.ndarray
    masks: TrimapMasks
    config: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        image = np.asarray(self.image)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {image.shape}")
        if image.shape[1:] != self.masks.shape:
            raise ValueError(f"image {image.shape[1:]} and trimap {self.masks.shape} resolutions differ")
        if not np.all(np.isfinite(image)) or image.min() < 0 or image.max() > 1:
            raise ValueError("image values must be finite and lie in [0, 1]")
        self.image = np.ascontiguousarray(image, dtype=np.dtype(self.config.dtype))

    @property
    def size(self):
        return self.masks.shape


@dataclass
class MatteResult:
    alpha: np.ndarray
    fg: np.ndarray
    bg: np.ndarray
    reconstruction: np.ndarray
    loss_history: np.ndarray
    iterations_run: int
    weights: dict = field(repr=False, default_factory=dict)

    @property
    def final_loss(self):
        return float(self.loss_history[-1, -1])

    def breakdown(self, index=-1):
        row = self.loss_history[index]
        return dict(zip(LOSS_TERMS + ("total",), (float(v) for v in row)))

    def loss_lines(self):
        lines = ["# " + ", ".join(HISTORY_COLUMNS)]
        for i, row in enumerate(self.loss_history, start=1):
            lines.append(", ".join([str(i)] + [f"{v:.9g}" for v in row]))
        return lines

    def write_loss_history(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.loss_lines()) + "\n")


# -- loss terms -------------------------------------------------------------

def _zero(like):
    return Tensor(np.zeros((), dtype=like.dtype))


def _full(shape):
    return np.ones(shape, dtype=bool)


def _rgb_sq_dist(a, b):
    """Per-pixel squared RGB distance as a (1, H, W) plane."""
    return ops.sum_channels(ops.square(ops.sub(a, b)))


def loss_reconstruction(image_hat, image):
    """Mean over all pixels of the squared RGB error."""
    return ops.masked_mean(_rgb_sq_dist(image_hat, image), _full(image.shape[1:]))


def loss_alpha(alpha_hat, masks):
    """Mean squared deviation from the trimap target on the constrained region."""
    constrained = masks.constrained
    if not constrained.any():
        raise ValueError("degenerate trimap: no foreground or background pixels")
    target = Tensor(masks.target_alpha[None], dtype=alpha_hat.dtype)
    return ops.masked_mean(ops.square(ops.sub(alpha_hat, target)), constrained)


def _region_fit(pred, image, region, name):
    if not region.any():
        warnings.warn(f"empty {name} region: term set to 0, extrapolation unconstrained",
                      RuntimeWarning, stacklevel=3)
        return _zero(pred)
    return ops.masked_mean(_rgb_sq_dist(pred, image), region)


def loss_fg(fg_hat, image, masks):
    return _region_fit(fg_hat, image, masks.fg, "foreground")


def loss_bg(bg_hat, image, masks):
    return _region_fit(bg_hat, image, masks.bg, "background")


def _alpha3(alpha_hat):
    return ops.repeat_channels(alpha_hat, 3)


def loss_composite(alpha_hat, fg_hat, bg_hat, image, masks):
    """Compositing residual ``|I - (a*F + (1-a)*B)|^2`` averaged over U."""
    if not masks.unknown.any():
        return _zero(alpha_hat)
    a3 = _alpha3(alpha_hat)
    blend = ops.add(ops.mul(a3, fg_hat), ops.mul(ops.scalar_add(ops.scalar_mul(a3, -1.0), 1.0), bg_hat))
    return ops.masked_mean(_rgb_sq_dist(image, blend), masks.unknown)


def loss_exclusion(alpha_hat, fg_hat, bg_hat, masks):
    """Gradient-product penalty ``|dF|_1 |dB|_1 + |da|_1 |dB|_1`` averaged over U."""
    if not masks.unknown.any():
        return _zero(alpha_hat)
    g_bg = ops.spatial_grad_l1(bg_hat)
    term = ops.add(ops.mul(ops.spatial_grad_l1(fg_hat), g_bg),
                   ops.mul(ops.spatial_grad_l1(alpha_hat), g_bg))
    return ops.masked_mean(term, masks.unknown)


def total_loss(image_hat, alpha_hat, fg_hat, bg_hat, image, masks):
    """Unweighted sum of the six terms; returns ``(total, {name: term tensor})``."""
    terms = {
        "L_I": loss_reconstruction(image_hat, image),
        "L_alpha": loss_alpha(alpha_hat, masks),
        "L_F": loss_fg(fg_hat, image, masks),
        "L_B": loss_bg(bg_hat, image, masks),
        "L_c": loss_composite(alpha_hat, fg_hat, bg_hat, image, masks),
        "L_e": loss_exclusion(alpha_hat, fg_hat, bg_hat, masks),
    }
    total = None
    for t in terms.values():
        total = t if total is None else ops.add(total, t)
    return total, terms


# -- networks ---------------------------------------------------------------

def network_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), 7919, index]).generate_state(1)[0])


def network_configs(unet):
    rgb = OutputHead("rgb", 3)
    return {
        "image_net": unet.with_heads(OutputHead("image", 3), OutputHead("alpha", 1)),
        "fg_net": unet.with_heads(rgb),
        "bg_net": unet.with_heads(rgb),
    }


def build_networks(config, image_size):
    dtype = np.dtype(config.dtype)
    return {name: build_unet(cfg, image_size, network_seed(config.seed, i), dtype=dtype)
            for i, (name, cfg) in enumerate(network_configs(config.unet).items())}


def run_networks(nets):
    """Forward all three networks: ``(image_hat, alpha_hat, fg_hat, bg_hat)``."""
    first = nets["image_net"].forward()
    return first["image"], first["alpha"], nets["fg_net"].forward()["rgb"], nets["bg_net"].forward()["rgb"]


def networks_state(nets):
    return {f"{name}/{key}": arr for name, net in nets.items() for key, arr in network_state(net).items()}


def load_networks_state(nets, state):
    for name, net in nets.items():
        prefix = name + "/"
        sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
        if not sub:
            raise ValueError(f"warm-start snapshot has no entries for {name}")
        load_network_state(net, sub)


# -- optimization driver ----------------------------------------------------

def extract_matte(problem, warm=None, on_snapshot: Optional[Callable] = None):
    """Optimize the three networks against ``problem`` and return the matte.

    Without ``warm`` the run always lasts ``max_iters`` iterations.  With a
    warm-start snapshot (as in ``MatteResult.weights``) the run also stops as
    soon as the total loss reaches ``config.loss_threshold``.

    Each iteration evaluates the loss once; the last evaluated outputs are
    returned and the returned weights are the ones that produced them.
    """
    cfg = problem.config
    nets = build_networks(cfg, problem.size)
    if warm is not None:
        load_networks_state(nets, warm)
    threshold = cfg.loss_threshold if warm is not None else None
    params = [p for net in nets.values() for p in net.parameters()]
    state = AdamState.zeros_like(params)
    image = Tensor(problem.image)
    masks = problem.masks
    history = []
    outputs = None
    for it in range(cfg.max_iters):
        reset_tape()
        for p in params:
            p.grad = None
        outputs = run_networks(nets)
        total, terms = total_loss(*outputs, image, masks)
        row = [t.item() for t in terms.values()] + [total.item()]
        for name, value in zip(LOSS_TERMS + ("total",), row):
            if not np.isfinite(value) or abs(value) > cfg.divergence_limit:
                raise DivergenceError(name, it + 1, value)
        history.append(row)
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0 and on_snapshot is not None:
            on_snapshot(it + 1, nets)
        if threshold is not None and row[-1] <= threshold:
            break
        if it == cfg.max_iters - 1:
            break
        total.backward()
        adam_step(params, [p.grad for p in params], state, lr=cfg.lr)
    reset_tape()
    image_hat, alpha_hat, fg_hat, bg_hat = (t.data.copy() for t in outputs)
    log.debug("extract_matte: %d iterations, final loss %.6g", len(history), history[-1][-1])
    return MatteResult(alpha=alpha_hat, fg=fg_hat, bg=bg_hat, reconstruction=image_hat,
                       loss_history=np.asarray(history, dtype=np.float64),
                       iterations_run=len(history), weights=networks_state(nets))


def extract_video(frames, threshold_factor=1.05, on_frame=None):
    """Sequential warm-started extraction over a list of problems.

    Frame 0 runs cold for ``max_iters``.  Later frames start from the previous
    frame's final weights and stop once the total loss reaches the threshold:
    ``config.loss_threshold`` if set, else ``threshold_factor`` times frame 0's
    final loss.
    """
    frames = list(frames)
    if not frames:
        return []
    size = frames[0].size
    results = []
    threshold = frames[0].config.loss_threshold
    for i, frame in enumerate(frames):
        if frame.size != size:
            raise ValueError(f"frame {i} has resolution {frame.size}, expected {size}")
        if i == 0:
            result = extract_matte(frame)
            if threshold is None:
                threshold = result.final_loss * threshold_factor
        else:
            cfg = dataclasses.replace(frame.config, loss_threshold=threshold)
            result = extract_matte(MattingProblem(frame.image, frame.masks, cfg), warm=results[-1].weights)
        results.append(result)
        if on_frame is not None:
            on_frame(i, result)
    return results


def composite(alpha, fg, new_bg):
    """Place ``fg`` over ``new_bg`` with matte ``alpha``: ``a*F + (1-a)*B``."""
    alpha = np.asarray(alpha)
    if alpha.ndim == 3:
        alpha = alpha[0]
    fg = np.asarray(fg)
    new_bg = np.asarray(new_bg)
    if fg.shape != new_bg.shape or fg.shape[1:] != alpha.shape:
        raise ValueError(f"composite: alpha {alpha.shape}, fg {fg.shape}, bg {new_bg.shape} do not match")
    a = alpha[None]
    return a * fg + (1 - a) * new_bg


def evaluate_losses(problem, image_hat, alpha_hat, fg_hat, bg_hat):
    """Loss breakdown for fixed output planes (no gradients recorded)."""
    dtype = np.dtype(problem.config.dtype)
    with no_grad():
        tensors = [Tensor(a, dtype=dtype) for a in (image_hat, alpha_hat, fg_hat, bg_hat)]
        total, terms = total_loss(*tensors, Tensor(problem.image), problem.masks)
    out = {k: v.item() for k, v in terms.items()}
    out["total"] = total.item()
    return out
