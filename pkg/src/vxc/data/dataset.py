"""Synthetic multi-view corpus: generation, manifest I/O and loading.

The manifest is UTF-8 text with one ``key<TAB>value`` record per line.  A
header block precedes one block per example; every example block starts
with an ``example`` record.  Paths are relative to the manifest directory.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from vxc.data.formats import read_ppm, read_vox, vox_to_bytes, write_ppm, write_vox, image_to_bytes
from vxc.data.render import render_views
from vxc.data.shapes import FAMILIES, generate_shape, random_spec
from vxc.exceptions import FormatError, UsageError

MANIFEST_NAME = "manifest.tsv"
MANIFEST_VERSION = 1
SPLITS = ("train", "test")


@dataclass
class ExampleRecord:
    id: str
    split: str
    family: str
    spec_hash: str
    content_hash: str
    voxels: str
    views: list = field(default_factory=list)


@dataclass
class DatasetManifest:
    version: int
    D: int
    height: int
    width: int
    n_views: int
    seed: int
    examples: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [e for e in self.examples if e.split == name]

    def to_text(self) -> str:
        lines = [f"version\t{self.version}", f"D\t{self.D}", f"height\t{self.height}",
                 f"width\t{self.width}", f"views\t{self.n_views}", f"seed\t{self.seed}"]
        for e in self.examples:
            lines += [f"example\t{e.id}", f"split\t{e.split}", f"family\t{e.family}",
                      f"spec_hash\t{e.spec_hash}", f"content_hash\t{e.content_hash}", f"voxels\t{e.voxels}"]
            lines += [f"view\t{v}" for v in e.views]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<manifest>") -> "DatasetManifest":
        header, examples, cur = {}, [], None
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                raise FormatError(f"{source}:{n}: expected key<TAB>value, got {line!r}")
            if key == "example":
                cur = {"id": value, "views": []}
                examples.append(cur)
            elif cur is None:
                header[key] = value
            elif key == "view":
                cur["views"].append(value)
            elif key in ("split", "family", "spec_hash", "content_hash", "voxels"):
                cur[key] = value
            else:
                raise FormatError(f"{source}:{n}: unknown example key {key!r}")
        try:
            m = cls(int(header["version"]), int(header["D"]), int(header["height"]),
                    int(header["width"]), int(header["views"]), int(header["seed"]))
            m.examples = [ExampleRecord(**e) for e in examples]
        except (KeyError, TypeError) as err:
            raise FormatError(f"{source}: incomplete manifest ({err})") from None
        if m.version != MANIFEST_VERSION:
            raise FormatError(f"{source}: unsupported manifest version {m.version}")
        ids = [e.id for e in m.examples]
        if len(set(ids)) != len(ids):
            raise FormatError(f"{source}: duplicate example ids")
        return m


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def manifest_hash(path) -> str:
    """SHA-256 of the manifest bytes; the manifest embeds per-example content hashes."""
    return hashlib.sha256(_manifest_path(path).read_bytes()).hexdigest()


def _example_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def make_example(seed: int, index: int, V: int, D: int, height: int, width: int):
    """Deterministic (spec, grid, views) for corpus position ``index``."""
    rng = _example_seed(seed, index)
    spec = random_spec(rng, D, FAMILIES[index % len(FAMILIES)])
    grid = generate_shape(spec)
    views = render_views(grid, V, int(rng.integers(2 ** 31)), height, width)
    return spec, grid, views


def _build_one(args):
    root, seed, index, ex_id, split, V, D, height, width = args
    spec, grid, views = make_example(seed, index, V, D, height, width)
    vox_rel = f"{split}/{ex_id}.vox"
    write_vox(Path(root) / vox_rel, grid)
    h = hashlib.sha256(vox_to_bytes(grid))
    view_rels = []
    for v, img in enumerate(views):
        rel = f"{split}/{ex_id}_v{v}.ppm"
        data = image_to_bytes(img)
        write_ppm(Path(root) / rel, data)
        h.update(data.tobytes())
        view_rels.append(rel)
    return ExampleRecord(ex_id, split, spec.family, spec.digest(), h.hexdigest(), vox_rel, view_rels)


def build_dataset(out_dir, n_train: int = 64, n_test: int = 16, V: int = 5, seed: int = 0,
                  D: int = 32, height: int = 32, width: int = 32, workers: int = 1,
                  force: bool = False) -> DatasetManifest:
    """Render the corpus into ``out_dir`` and write ``manifest.tsv`` last."""
    if n_train < 1 or n_test < 1:
        raise UsageError(f"train/test counts must be >= 1, got {n_train}/{n_test}")
    if V < 1:
        raise UsageError(f"views per example must be >= 1, got {V}")
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()) and not force:
        raise UsageError(f"{root} exists and is not empty (use force to overwrite)")
    for split in SPLITS:
        (root / split).mkdir(parents=True, exist_ok=True)
    jobs = [(str(root), seed, i, f"train_{i:04d}", "train", V, D, height, width) for i in range(n_train)]
    jobs += [(str(root), seed, n_train + i, f"test_{i:04d}", "test", V, D, height, width) for i in range(n_test)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_build_one, jobs))
    else:
        records = [_build_one(j) for j in jobs]
    manifest = DatasetManifest(MANIFEST_VERSION, D, height, width, V, seed, records)
    (root / MANIFEST_NAME).write_text(manifest.to_text(), encoding="utf-8")
    return manifest


def read_manifest(path) -> DatasetManifest:
    path = _manifest_path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return DatasetManifest.from_text(path.read_text(encoding="utf-8"), str(path))


@dataclass
class SplitData:
    ids: list
    views: np.ndarray  # (n, V, H, W, 3) float32 in [0, 1]
    grids: np.ndarray  # (n, D, D, D) bool


def load_split(path, split: str = "train", limit: Optional[int] = None) -> SplitData:
    """Read one split; every referenced file must exist and parse."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    records = manifest.split(split)[:limit]
    if not records:
        raise FormatError(f"{root}: split {split!r} is empty")
    views, grids = [], []
    for rec in records:
        for rel in rec.views + [rec.voxels]:
            if not (root / rel).is_file():
                raise FileNotFoundError(f"{rec.id}: missing file {root / rel}")
        views.append(np.stack([read_ppm(root / v) for v in rec.views]).astype(np.float32) / 255.0)
        grids.append(read_vox(root / rec.voxels))
    return SplitData([r.id for r in records], np.stack(views), np.stack(grids))
