"""Perception and control datasets, and their on-disk directory format.

Directory layout::

    manifest.json   domain, kind, counts, profile snapshot, seed, item seeds
    images/NNNNN.ppm  binary P6, 8-bit, pixel = round((v + 1) * 127.5)
    labels.csv      index,image[,x1..x3][,q1..q7][,v1..v7]

Every item is generated from its own seed, derived from (root seed, role,
index), so items never depend on generation order and datasets built for
different roles are disjoint by construction.
"""
from __future__ import annotations

import csv
import io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import KinematicChain, default_chain
from .render import render, to_uint8
from .scene import Domain, RenderProfile, Scenario, normalize_target, randomize_scene
from .trajectory import generate_trajectory

PAPER_SIM_BUDGETS = (340, 750, 3000)
PAPER_REAL_BUDGETS = (48, 93, 186, 279)
PAPER_TRAJECTORY_BUDGETS = (118, 333, 2964)


def role_code(role: str) -> int:
    return zlib.crc32(role.encode())


def item_seeds(root_seed: int, role: str, n: int, start: int = 0) -> np.ndarray:
    code = role_code(role)
    return np.array([np.random.SeedSequence([int(root_seed), code, i]).generate_state(1, np.uint64)[0]
                     for i in range(start, start + n)], dtype=np.uint64)


@dataclass
class Dataset:
    domain: Domain
    kind: str                           # "perception" or "control"
    images: np.ndarray                  # (n_images, H, W, 3) uint8
    image_index: np.ndarray             # (n,) row of ``images`` for each sample
    seeds: np.ndarray                   # (n_images,) per-item generation seeds
    targets: np.ndarray | None = None   # (n, 3) normalized x*
    joints: np.ndarray | None = None    # (n, 7) normalized q
    velocities: np.ndarray | None = None  # (n, 7) rad/s
    trajectory: np.ndarray | None = None  # (n,) trajectory id per frame
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.image_index)

    @property
    def labeled(self) -> bool:
        return self.targets is not None

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.targets, self.joints], axis=1)

    def images_f64(self, idx) -> np.ndarray:
        return self.images[self.image_index[np.asarray(idx)]].astype(np.float64) / 127.5 - 1.0

    def take(self, n: int) -> "Dataset":
        """First ``n`` samples (first ``n`` trajectories for control data)."""
        if self.kind == "control":
            keep = self.trajectory < n
        else:
            keep = np.arange(len(self)) < n
        rows = np.unique(self.image_index[keep])
        remap = np.full(len(self.images), -1)
        remap[rows] = np.arange(len(rows))
        opt = lambda a: None if a is None else a[keep]  # noqa: E731
        meta = dict(self.meta, count=int(keep.sum()))
        if self.kind == "control":
            meta["trajectories"] = int(n)
        return Dataset(self.domain, self.kind, self.images[rows], remap[self.image_index[keep]],
                       self.seeds[rows], opt(self.targets), opt(self.joints), opt(self.velocities),
                       opt(self.trajectory), meta)

    def strip_labels(self) -> "Dataset":
        return Dataset(self.domain, self.kind, self.images, self.image_index, self.seeds,
                       meta=dict(self.meta, labeled=False))


def _perception_item(args):
    seed, profile, scenario = args
    scene = randomize_scene(np.random.default_rng(int(seed)), profile, scenario)
    return to_uint8(render(scene)), normalize_target(scene.target_top)


def make_perception_dataset(root_seed: int, profile: RenderProfile, n: int, labeled: bool = True,
                            role: str | None = None, scenario: Scenario | None = None,
                            jobs: int = 1) -> Dataset:
    """``n`` randomized scenes rendered under ``profile``.

    Labeled datasets store the target top centre normalized over the
    operational area; unlabeled ones store images only. ``jobs`` > 1 renders
    in worker processes; items are seeded individually, so the result does
    not depend on it.
    """
    if n <= 0:
        raise ValueError(f"dataset size must be positive, got {n}")
    role = role or f"perception/{profile.domain.value}/{'sup' if labeled else 'ad'}"
    seeds = item_seeds(root_seed, role, n)
    res = profile.resolution
    images = np.empty((n, res, res, 3), dtype=np.uint8)
    targets = np.empty((n, 3))
    work = [(s, profile, scenario) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            items = list(pool.map(_perception_item, work, chunksize=max(1, n // (4 * jobs))))
    else:
        items = map(_perception_item, work)
    for i, (img, tgt) in enumerate(items):
        images[i], targets[i] = img, tgt
    meta = {"role": role, "seed": int(root_seed), "count": n, "labeled": labeled,
            "profile": profile.snapshot(), "scenario": scenario.value if scenario else None}
    return Dataset(profile.domain, "perception", images, np.arange(n), seeds,
                   targets if labeled else None, meta=meta)


def make_control_dataset(root_seed: int, profile: RenderProfile, n_trajectories: int,
                         chain: KinematicChain | None = None, role: str | None = None,
                         render_images: bool = True) -> Dataset:
    """Scene-configuration/velocity pairs from ``n_trajectories`` P-controlled reaches."""
    if n_trajectories <= 0:
        raise ValueError("need at least one trajectory")
    chain = chain or default_chain()
    role = role or f"control/{profile.domain.value}"
    seeds = item_seeds(root_seed, role, n_trajectories)
    res = profile.resolution
    images = np.zeros((n_trajectories, res, res, 3), dtype=np.uint8)
    tg, jq, vel, tid = [], [], [], []
    for t, s in enumerate(seeds):
        traj = generate_trajectory(np.random.default_rng(int(s)), chain, profile,
                                   render_image=render_images)
        if render_images:
            images[t] = traj.image
        for fr in traj.frames:
            tg.append(fr.target)
            jq.append(fr.theta[3:])
            vel.append(fr.velocity)
            tid.append(t)
    tid = np.array(tid)
    meta = {"role": role, "seed": int(root_seed), "count": len(tid), "trajectories": n_trajectories,
            "labeled": True, "profile": profile.snapshot(), "chain": chain.to_dict(),
            "images": bool(render_images)}
    return Dataset(profile.domain, "control", images, tid.copy(), seeds, np.array(tg),
                   np.array(jq), np.array(vel), tid, meta)


# -- disk format ------------------------------------------------------------------

def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img, np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    stream = io.BytesIO(buf)
    tokens = []
    while len(tokens) < 4:
        line = stream.readline()
        if not line:
            raise ValueError(f"{path}: truncated PPM header")
        tokens += line.split(b"#")[0].split()
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    data = stream.read()
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3).copy()


def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.images):
        write_ppm(d / "images" / f"{i:05d}.ppm", img)
    cols = ["index", "image"]
    blocks = []
    for prefix, arr in (("x", ds.targets), ("q", ds.joints), ("v", ds.velocities)):
        if arr is not None:
            cols += [f"{prefix}{k + 1}" for k in range(arr.shape[1])]
            blocks.append(arr)
    with open(d / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols + (["trajectory"] if ds.trajectory is not None else []))
        for i in range(len(ds)):
            row = [i, int(ds.image_index[i])] + [repr(float(b[i, k])) for b in blocks
                                                 for k in range(b.shape[1])]
            if ds.trajectory is not None:
                row.append(int(ds.trajectory[i]))
            wr.writerow(row)
    manifest = {"domain": ds.domain.value, "kind": ds.kind, "n_samples": len(ds),
                "n_images": int(len(ds.images)), "seeds": [int(s) for s in ds.seeds],
                "meta": ds.meta}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no dataset manifest in {d}")
    man = json.loads((d / "manifest.json").read_text())
    images = np.stack([read_ppm(d / "images" / f"{i:05d}.ppm") for i in range(man["n_images"])])
    with open(d / "labels.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = {name: [r[k] for r in body] for k, name in enumerate(header)}

    def block(prefix, width):
        names = [f"{prefix}{k + 1}" for k in range(width)]
        if names[0] not in data:
            return None
        return np.array([[float(data[nm][i]) for nm in names] for i in range(len(body))])

    traj = np.array([int(t) for t in data["trajectory"]]) if "trajectory" in data else None
    return Dataset(Domain(man["domain"]), man["kind"], images,
                   np.array([int(v) for v in data["image"]], dtype=np.int64),
                   np.array(man["seeds"], dtype=np.uint64), block("x", 3), block("q", 7),
                   block("v", 7), traj, man["meta"])
