"""Synthetic voxel shapes, renders and the on-disk corpus."""

from vxc.data.dataset import (
    DatasetManifest,
    ExampleRecord,
    SplitData,
    build_dataset,
    load_split,
    manifest_hash,
    read_manifest,
)
from vxc.data.formats import read_ppm, read_vox, write_ppm, write_vox
from vxc.data.render import render_view, render_views, view_basis, view_directions
from vxc.data.shapes import FAMILIES, ShapeSpec, generate_shape, random_spec

__all__ = [
    "DatasetManifest", "ExampleRecord", "SplitData", "build_dataset", "load_split", "manifest_hash",
    "read_manifest", "read_ppm", "read_vox", "write_ppm", "write_vox", "render_view", "render_views",
    "view_basis", "view_directions", "FAMILIES", "ShapeSpec", "generate_shape", "random_spec",
]
