"""Perception, control and discriminator networks and their forward passes.

Every module is an architecture record plus a flat ``{name: array}``
parameter dict. Graph builders bind those arrays into a
:class:`numgrad.Graph`, either as trainable parameters or as constants,
so a training step chooses which module receives gradients.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .numgrad import Graph, Tensor, load_checkpoint, save_checkpoint

IN_CHANNELS = 3
THETA_DIM = 10
VELOCITY_DIM = 7
INPUT_TOL = 1e-6


class ArchitectureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PerceptionArch:
    resolution: int
    conv: tuple[tuple[int, bool], ...]   # (output maps, maxpool after)
    hidden: tuple[int, ...]
    name: str = "custom"

    @property
    def feature_dim(self) -> int:
        side = self.resolution // 2 ** sum(p for _, p in self.conv)
        return side * side * self.conv[-1][0]

    def validate(self):
        pools = sum(p for _, p in self.conv)
        if self.resolution % 2 ** pools:
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{pools}")


@dataclass(frozen=True)
class MlpArch:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    name: str = "custom"


def desk_perception(resolution: int = 64) -> PerceptionArch:
    return PerceptionArch(resolution, ((8, True), (16, True), (16, True), (32, True)), (64,), "desk")


def paper_perception(resolution: int = 256) -> PerceptionArch:
    groups = ((16, 16), (32, 32), (64, 64), (64, 64), (128, 128), (128,), (64,))
    conv = tuple((c, i == len(g) - 1) for g in groups for i, c in enumerate(g))
    return PerceptionArch(resolution, conv, (256, 256), "paper")


def control_arch(hidden=(400, 300)) -> MlpArch:
    return MlpArch(THETA_DIM, tuple(hidden), VELOCITY_DIM, "control")


DISCRIMINATOR_NETS = {
    1: (32, 32), 2: (64, 64), 3: (128, 128), 4: (256, 256), 5: (512, 512),
    6: (256,) * 3, 7: (256,) * 4, 8: (256,) * 5,
}


def discriminator_arch(feature_dim: int, net: int = 4, hidden=None) -> MlpArch:
    h = tuple(hidden) if hidden is not None else DISCRIMINATOR_NETS[net]
    return MlpArch(feature_dim, h, 2, f"disc{net}" if hidden is None else "disc")


# -- parameter sets ---------------------------------------------------------------

@dataclass
class Module:
    kind: str            # "perception" | "control" | "discriminator"
    arch: PerceptionArch | MlpArch
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self, part: str | None = None) -> list[str]:
        return [k for k in self.params if part is None or k.startswith(part + ".")]

    def arch_dict(self) -> dict:
        return {"kind": self.kind, "type": type(self.arch).__name__, **asdict(self.arch)}

    def count(self, part: str | None = None) -> int:
        return int(sum(self.params[k].size for k in self.names(part)))

    def checksum(self, part: str | None = None) -> str:
        import hashlib
        h = hashlib.sha256()
        for k in sorted(self.names(part)):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _init_mlp(rng, prefix, dims, params):
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.fc{i}.w"] = _glorot(rng, a, b, (a, b))
        params[f"{prefix}.fc{i}.b"] = np.zeros(b)


def init_perception(arch: PerceptionArch, rng) -> Module:
    arch.validate()
    p = {}
    c_in = IN_CHANNELS
    for i, (c, _) in enumerate(arch.conv):
        p[f"enc.conv{i}.w"] = _glorot(rng, 9 * c_in, 9 * c, (3, 3, c_in, c))
        p[f"enc.conv{i}.b"] = np.zeros(c)
        c_in = c
    _init_mlp(rng, "reg", (arch.feature_dim, *arch.hidden, 3), p)
    return Module("perception", arch, p)


def init_mlp_module(kind: str, arch: MlpArch, rng) -> Module:
    p = {}
    _init_mlp(rng, {"control": "ctl", "discriminator": "disc"}[kind],
              (arch.in_dim, *arch.hidden, arch.out_dim), p)
    return Module(kind, arch, p)


def init_control(rng, hidden=(400, 300)) -> Module:
    return init_mlp_module("control", control_arch(hidden), rng)


def init_discriminator(rng, feature_dim: int, net: int = 4, hidden=None) -> Module:
    return init_mlp_module("discriminator", discriminator_arch(feature_dim, net, hidden), rng)


def expected_param_count(arch) -> int:
    """Parameter count from the layer arithmetic alone."""
    if isinstance(arch, PerceptionArch):
        n, c_in = 0, IN_CHANNELS
        for c, _ in arch.conv:
            n += 9 * c_in * c + c
            c_in = c
        dims = (arch.feature_dim, *arch.hidden, 3)
    else:
        n, dims = 0, (arch.in_dim, *arch.hidden, arch.out_dim)
    return n + sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def clone_params(source: Module, target: Module | None = None) -> Module:
    """Bit-identical deep copy of ``source`` (into ``target`` when given)."""
    if target is not None:
        if target.arch != source.arch or set(target.params) != set(source.params):
            raise ArchitectureMismatch(f"cannot clone {source.arch} into {target.arch}")
        for k, v in source.params.items():
            target.params[k] = v.copy()
        return target
    return Module(source.kind, source.arch, {k: v.copy() for k, v in source.params.items()})


# -- graph builders ---------------------------------------------------------------

def bind(g: Graph, module: Module, trainable: bool | set | str = True) -> dict[str, Tensor]:
    """Place module arrays into ``g``.

    ``trainable`` is a bool for the whole module, a part prefix such as
    ``"enc"``, or an explicit set of names.
    """
    out = {}
    for k, v in module.params.items():
        if isinstance(trainable, bool):
            is_p = trainable
        elif isinstance(trainable, str):
            is_p = k.startswith(trainable + ".")
        else:
            is_p = k in trainable
        out[k] = g.param(k, v) if is_p else g.constant(v, k)
    return out


def encode(g: Graph, arch: PerceptionArch, t: dict[str, Tensor], images: Tensor) -> Tensor:
    h = images
    for i, (_, pool) in enumerate(arch.conv):
        h = g.apply("relu", g.apply("conv2d", h, t[f"enc.conv{i}.w"], t[f"enc.conv{i}.b"]))
        if pool:
            h = g.apply("maxpool2x2", h)
    return g.apply("reshape", h, shape=(h.shape[0], arch.feature_dim))


def mlp(g: Graph, prefix: str, n_layers: int, t: dict[str, Tensor], x: Tensor) -> Tensor:
    """ReLU hidden layers, linear output."""
    h = x
    for i in range(n_layers):
        h = g.apply("linear", h, t[f"{prefix}.fc{i}.w"], t[f"{prefix}.fc{i}.b"])
        if i < n_layers - 1:
            h = g.apply("relu", h)
    return h


def regress(g, arch: PerceptionArch, t, feats: Tensor) -> Tensor:
    return mlp(g, "reg", len(arch.hidden) + 1, t, feats)


def control_graph(g, arch: MlpArch, t, theta: Tensor) -> Tensor:
    return mlp(g, "ctl", len(arch.hidden) + 1, t, theta)


def discriminator_graph(g, arch: MlpArch, t, feats: Tensor) -> Tensor:
    return g.apply("softmax", mlp(g, "disc", len(arch.hidden) + 1, t, feats))


# -- validated forward passes -----------------------------------------------------

def _check_images(arch: PerceptionArch, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    r = arch.resolution
    if x.shape[1:] != (r, r, IN_CHANNELS):
        raise ArchitectureMismatch(f"expected images of shape (m, {r}, {r}, 3), got {x.shape}")
    return x


def _check_theta(theta) -> np.ndarray:
    th = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if th.shape[1] != THETA_DIM:
        raise ValueError(f"scene configuration must have {THETA_DIM} entries, got {th.shape[1]}")
    if np.any(th < -INPUT_TOL) or np.any(th > 1 + INPUT_TOL):
        raise ValueError("scene configuration outside [0, 1]")
    return th


def perception_forward(module: Module, images, return_features: bool = False):
    """Estimated normalized target position for each image (and the encoder features)."""
    x = _check_images(module.arch, images)
    g = Graph()
    t = bind(g, module, False)
    feats = encode(g, module.arch, t, g.constant(x))
    out = regress(g, module.arch, t, feats)
    return (out.data, feats.data) if return_features else out.data


def encoder_forward(module: Module, images) -> np.ndarray:
    x = _check_images(module.arch, images)
    g = Graph()
    return encode(g, module.arch, bind(g, module, False), g.constant(x)).data


def control_forward(module: Module, theta) -> np.ndarray:
    th = _check_theta(theta)
    g = Graph()
    return control_graph(g, module.arch, bind(g, module, False), g.constant(th)).data


def discriminator_forward(module: Module, feats) -> np.ndarray:
    """Rows of (p_sim, p_real)."""
    f = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if f.shape[1] != module.arch.in_dim:
        raise ArchitectureMismatch(f"discriminator expects {module.arch.in_dim} features, got {f.shape[1]}")
    g = Graph()
    return discriminator_graph(g, module.arch, bind(g, module, False), g.constant(f)).data


@dataclass
class CombinedNetwork:
    perception: Module
    control: Module


def combined_graph(g: Graph, net: CombinedNetwork, tp, tc, images: Tensor, qn: Tensor):
    """Velocity and bottleneck tensors; the bottleneck fills the x* slot of Θ."""
    x_hat = regress(g, net.perception.arch, tp, encode(g, net.perception.arch, tp, images))
    v = control_graph(g, net.control.arch, tc, g.apply("concat", x_hat, qn))
    return v, x_hat


def combined_forward(net: CombinedNetwork, images, q_norm) -> np.ndarray:
    x = _check_images(net.perception.arch, images)
    qn = np.atleast_2d(np.asarray(q_norm, dtype=np.float64))
    g = Graph()
    v, _ = combined_graph(g, net, bind(g, net.perception, False), bind(g, net.control, False),
                          g.constant(x), g.constant(qn))
    return v.data


# -- checkpoints ------------------------------------------------------------------

def save_module(path, module: Module, extra: dict | None = None) -> None:
    save_checkpoint(path, module.params, {"arch": module.arch_dict(), **(extra or {})})


def _arch_from_dict(d: dict):
    d = dict(d)
    d.pop("kind")
    typ = d.pop("type")
    if typ == "PerceptionArch":
        return PerceptionArch(d["resolution"], tuple((int(c), bool(p)) for c, p in d["conv"]),
                              tuple(d["hidden"]), d["name"])
    return MlpArch(d["in_dim"], tuple(d["hidden"]), d["out_dim"], d["name"])


def load_module(path, expect=None) -> tuple[Module, dict]:
    """Load a module; ``expect`` (an architecture) must match the stored one."""
    params, header = load_checkpoint(path)
    arch = _arch_from_dict(header["arch"])
    if expect is not None and expect != arch:
        raise ArchitectureMismatch(
            f"checkpoint {path} holds {json.dumps(header['arch'])}, expected {expect}")
    mod = Module(header["arch"]["kind"], arch, params)
    if mod.count() != expected_param_count(arch):
        raise ArchitectureMismatch(f"checkpoint {path}: parameter count does not fit its architecture")
    return mod, header
