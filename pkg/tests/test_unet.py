import numpy as np
import pytest

from dipmatte.optim import Adam
from dipmatte.tensor import no_grad, reset_tape
from dipmatte.unet import (
    OutputHead,
    SnapshotError,
    UNetConfig,
    build_unet,
    checksum,
    copy_weights,
    forward,
    load_network_state,
    load_snapshot,
    network_state,
    noise_checksum,
    parameter_shapes,
    save_snapshot,
)

SMALL = UNetConfig(depth=2, channels=(4, 8), skip_channels=2, input_noise_channels=3)
TWO_HEADS = SMALL.with_heads(OutputHead("image", 3), OutputHead("alpha", 1))


def hand_count(cfg):
    """Closed-form parameter count from the layer list."""
    k2 = cfg.kernel_size ** 2
    c, s = cfg.channels, cfg.skip_channels
    total = 0
    c_in = cfg.input_noise_channels
    for i in range(cfg.depth):
        total += s * c_in                      # 1x1 skip conv
        total += c[i] * c_in * k2 + c[i] * c[i] * k2  # strided conv + conv
        c_in = c[i]
    for i in range(cfg.depth):
        up = c[min(i + 1, cfg.depth - 1)]
        total += c[i] * (up + s) * k2 + c[i] * c[i]
    total += sum(h.channels * c[0] + h.channels for h in cfg.output_heads)
    return total


@pytest.mark.parametrize("cfg", [SMALL, TWO_HEADS, UNetConfig()])
def test_parameter_count_matches_hand_formula(cfg):
    net = build_unet(cfg, (64, 64), seed=0)
    assert sum(p.data.size for p in net.parameters()) == hand_count(cfg)
    assert sum(int(np.prod(s)) for s in parameter_shapes(cfg).values()) == hand_count(cfg)


def test_default_config_count():
    # encoder levels: 7040 + 13888 + 55424 + 221440; decoder: 168448 + 80128 + 20608 + 5440; head 51
    assert hand_count(UNetConfig()) == 297_792 + 274_624 + 51


def test_same_seed_bit_identical():
    a = build_unet(TWO_HEADS, (16, 16), seed=7)
    b = build_unet(TWO_HEADS, (16, 16), seed=7)
    c = build_unet(TWO_HEADS, (16, 16), seed=8)
    assert checksum(a) == checksum(b) != checksum(c)
    assert noise_checksum(a) == noise_checksum(b)


def test_depth1_shape():
    cfg = UNetConfig(depth=1, channels=(8,))
    out = forward(build_unet(cfg, (16, 16), seed=0))
    assert list(out) == ["rgb"] and out["rgb"].shape == (3, 16, 16)


def test_two_heads_shapes_and_range():
    out = forward(build_unet(TWO_HEADS, (16, 16), seed=1))
    assert list(out) == ["image", "alpha"]
    assert out["image"].shape == (3, 16, 16) and out["alpha"].shape == (1, 16, 16)
    assert np.all((out["alpha"].data > 0) & (out["alpha"].data < 1))


@pytest.mark.parametrize("depth", [1, 2, 3])
@pytest.mark.parametrize("size", [(40, 40), (37, 45), (50, 33)])
def test_output_resolution_matches_image(depth, size):
    cfg = UNetConfig(depth=depth, channels=(4,) * depth, skip_channels=1, input_noise_channels=2)
    out = forward(build_unet(cfg, size, seed=0))
    assert out["rgb"].shape == (3,) + size


def test_too_small_image_rejected():
    with pytest.raises(ValueError, match="reduce depth"):
        build_unet(UNetConfig(), (16, 16), seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        UNetConfig(depth=2, channels=(4,))
    with pytest.raises(ValueError):
        UNetConfig(depth=0, channels=())
    with pytest.raises(ValueError):
        UNetConfig(depth=1, channels=(4,), output_heads=(OutputHead("x", 0),))


def test_every_parameter_reaches_the_output():
    net = build_unet(TWO_HEADS, (16, 16), seed=3, dtype=np.float64)
    with no_grad():
        base = {k: v.data.copy() for k, v in forward(net).items()}
    for name, p in net.params.items():
        flat = p.data.reshape(-1)
        flat[0] += 0.05
        with no_grad():
            out = forward(net)
        flat[0] -= 0.05
        changed = any(not np.array_equal(out[k].data, base[k]) for k in base)
        assert changed, f"perturbing {name} left every head unchanged"


def test_only_params_require_grad():
    net = build_unet(SMALL, (16, 16), seed=0)
    assert not net.noise_input.requires_grad
    assert all(p.requires_grad for p in net.parameters())


def test_noise_is_untouched_by_optimization():
    net = build_unet(SMALL, (16, 16), seed=0)
    before = noise_checksum(net)
    opt = Adam(net.parameters(), lr=0.01)
    for _ in range(3):
        reset_tape()
        opt.zero_grad()
        out = forward(net)["rgb"]
        out.sum().backward()
        opt.step()
    assert noise_checksum(net) == before


def test_copy_weights_reproduces_outputs():
    src = build_unet(SMALL, (16, 16), seed=1)
    dst = build_unet(SMALL, (16, 16), seed=2)
    dst.noise_input = src.noise_input
    copy_weights(src, dst)
    assert checksum(src) == checksum(dst)
    with no_grad():
        np.testing.assert_array_equal(forward(src)["rgb"].data, forward(dst)["rgb"].data)


def test_copy_weights_checksum_stable_across_chain():
    nets = [build_unet(SMALL, (16, 16), seed=s) for s in range(4)]
    for a, b in zip(nets, nets[1:]):
        copy_weights(a, b)
    assert len({checksum(n) for n in nets}) == 1


def test_copy_weights_config_mismatch():
    with pytest.raises(ValueError):
        copy_weights(build_unet(SMALL, (16, 16), 0), build_unet(TWO_HEADS, (16, 16), 0))
    with pytest.raises(ValueError):
        copy_weights(build_unet(SMALL, (16, 16), 0), build_unet(SMALL, (20, 20), 0))


def test_snapshot_round_trip(tmp_path):
    net = build_unet(TWO_HEADS, (16, 16), seed=5)
    path = tmp_path / "w.bin"
    save_snapshot(path, network_state(net))
    raw = path.read_bytes()
    assert raw[:4] == b"DIPW" and raw[4:6] == b"\x01\x00"
    loaded = load_snapshot(path)
    other = build_unet(TWO_HEADS, (16, 16), seed=6)
    load_network_state(other, loaded)
    assert checksum(other) == checksum(net) and noise_checksum(other) == noise_checksum(net)


def test_snapshot_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(SnapshotError):
        load_snapshot(bad)
    net = build_unet(SMALL, (16, 16), seed=5)
    path = tmp_path / "w.bin"
    save_snapshot(path, network_state(net))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(SnapshotError):
        load_snapshot(path)
