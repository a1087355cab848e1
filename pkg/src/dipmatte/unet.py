"""U-net builder shared by the image, foreground and background networks.

Each :class:`Network` maps its own fixed noise tensor through an
encoder/decoder with skip connections to one or more sigmoid output heads.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class OutputHead:
    name: str
    channels: int
    activation: str = "sigmoid"


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    channels: tuple = (16, 32, 64, 128)
    skip_channels: int = 4
    input_noise_channels: int = 32
    output_heads: tuple = (OutputHead("rgb", 3),)
    kernel_size: int = 3
    slope: float = 0.1
    noise_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "output_heads", tuple(self.output_heads))
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.channels) != self.depth:
            raise ValueError(f"need {self.depth} channel counts, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise ValueError(f"channel counts must be positive: {self.channels}")
        if self.skip_channels < 0 or self.input_noise_channels < 1:
            raise ValueError("skip_channels must be >= 0 and input_noise_channels >= 1")
        if not self.output_heads:
            raise ValueError("at least one output head is required")
        names = [h.name for h in self.output_heads]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate head names: {names}")
        for head in self.output_heads:
            if head.channels < 1:
                raise ValueError(f"head {head.name!r} needs >= 1 channel")
            if head.activation != "sigmoid":
                raise ValueError(f"unsupported head activation {head.activation!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    def with_heads(self, *heads):
        return UNetConfig(self.depth, self.channels, self.skip_channels, self.input_noise_channels,
                          tuple(heads), self.kernel_size, self.slope, self.noise_scale)


def parameter_shapes(config):
    """Ordered ``name -> shape`` for every trainable tensor of ``config``."""
    k = config.kernel_size
    c = config.channels
    s = config.skip_channels
    shapes = {}
    c_in = config.input_noise_channels
    for i in range(config.depth):
        if s:
            shapes[f"skip{i}.weight"] = (s, c_in, 1, 1)
        shapes[f"enc{i}.down.weight"] = (c[i], c_in, k, k)
        shapes[f"enc{i}.conv.weight"] = (c[i], c[i], k, k)
        c_in = c[i]
    for i in reversed(range(config.depth)):
        c_up = c[min(i + 1, config.depth - 1)]
        shapes[f"dec{i}.conv1.weight"] = (c[i], c_up + s, k, k)
        shapes[f"dec{i}.conv2.weight"] = (c[i], c[i], 1, 1)
    for head in config.output_heads:
        shapes[f"head.{head.name}.weight"] = (head.channels, c[0], 1, 1)
        shapes[f"head.{head.name}.bias"] = (head.channels,)
    return shapes


def _rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


def padded_size(image_size, depth):
    step = 2 ** depth
    h, w = image_size
    return (-(-h // step) * step, -(-w // step) * step)


@dataclass
class Network:
    config: UNetConfig
    image_size: tuple
    params: dict
    noise_input: Tensor
    seed: int = 0

    @property
    def dtype(self):
        return self.noise_input.dtype

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self):
        return forward(self)


def init_weights(net, seed):
    """Centered uniform init with bound ``1/sqrt(fan_in)``, drawn in float64."""
    rng = _rng(seed, 1)
    for name, shape in parameter_shapes(net.config).items():
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else net.config.channels[0]
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=shape)
        if name in net.params:
            net.params[name].data[...] = values
        else:
            net.params[name] = Tensor(values, requires_grad=True, dtype=net.dtype)


def build_unet(config, image_size, seed, dtype=np.float32):
    """Build a network whose heads produce ``image_size`` outputs.

    Sizes that are not multiples of ``2**depth`` get a larger noise tensor and
    the head outputs are cropped back.
    """
    h, w = (int(v) for v in image_size)
    k = config.kernel_size
    min_side = (k - 1) * 2 ** config.depth + 1
    if h < min_side or w < min_side:
        raise ValueError(
            f"image {h}x{w} is too small for a depth-{config.depth} U-net "
            f"(needs at least {min_side} px per side); reduce depth")
    ph, pw = padded_size((h, w), config.depth)
    noise = _rng(seed, 0).uniform(0.0, config.noise_scale, size=(config.input_noise_channels, ph, pw))
    net = Network(config=config, image_size=(h, w), params={},
                  noise_input=Tensor(noise, dtype=dtype), seed=int(seed))
    init_weights(net, seed)
    return net


def _block(x, weight, slope, stride=1):
    return ops.leaky_relu(ops.instance_norm(ops.conv2d(x, weight, stride=stride)), slope)


def forward(net):
    """Run the network; returns ``{head name: (channels, H, W) tensor}``."""
    cfg = net.config
    p = net.params
    x = net.noise_input
    skips = []
    for i in range(cfg.depth):
        if cfg.skip_channels:
            skips.append(_block(x, p[f"skip{i}.weight"], cfg.slope))
        x = _block(x, p[f"enc{i}.down.weight"], cfg.slope, stride=2)
        x = _block(x, p[f"enc{i}.conv.weight"], cfg.slope)
    for i in reversed(range(cfg.depth)):
        x = ops.upsample_nearest(x, 2)
        if cfg.skip_channels:
            x = ops.concat_channels([x, skips[i]])
        x = _block(x, p[f"dec{i}.conv1.weight"], cfg.slope)
        x = _block(x, p[f"dec{i}.conv2.weight"], cfg.slope)
    h, w = net.image_size
    out = {}
    for head in cfg.output_heads:
        y = ops.conv2d(x, p[f"head.{head.name}.weight"])
        y = ops.sigmoid(ops.add_channel_bias(y, p[f"head.{head.name}.bias"]))
        out[head.name] = ops.crop(y, h, w)
    return out


def copy_weights(src, dst):
    """Overwrite ``dst`` parameters with ``src``'s (warm start)."""
    if src.config != dst.config or src.image_size != dst.image_size:
        raise ValueError("copy_weights needs networks with identical config and image size")
    for name, t in src.params.items():
        np.copyto(dst.params[name].data, t.data, casting="same_kind")


def checksum(net):
    h = hashlib.sha256()
    for name, t in net.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def noise_checksum(net):
    return hashlib.sha256(net.noise_input.data.tobytes()).hexdigest()


def network_state(net):
    """Named arrays (parameters plus the fixed noise) for snapshotting."""
    state = {name: t.data.copy() for name, t in net.params.items()}
    state["noise_input"] = net.noise_input.data.copy()
    return state


def load_network_state(net, state):
    missing = [n for n in net.params if n not in state]
    if missing:
        raise ValueError(f"snapshot lacks parameters: {missing[:3]}")
    for name, t in net.params.items():
        if state[name].shape != t.shape:
            raise ValueError(f"snapshot shape {state[name].shape} != {t.shape} for {name}")
        t.data[...] = state[name]
    if "noise_input" in state:
        if state["noise_input"].shape != net.noise_input.shape:
            raise ValueError("snapshot noise shape does not match the network")
        net.noise_input.data[...] = state["noise_input"]


# -- weight snapshot files ---------------------------------------------------
# layout (little-endian): b"DIPW", u16 version, u16 reserved, u32 count, then per
# array: u16 name length, utf-8 name, u8 ndim, ndim x u32 dims, float32 data

SNAPSHOT_MAGIC = b"DIPW"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    pass


def save_snapshot(path, arrays):
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<HHI", SNAPSHOT_VERSION, 0, len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_snapshot(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a weight snapshot")
    try:
        version, _, count = struct.unpack_from("<HHI", buf, 4)
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {version}")
        pos = 12
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 4 * size > len(buf):
                raise SnapshotError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise SnapshotError(f"{path}: truncated snapshot") from exc
    return arrays
