import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vxc.data.dataset import DatasetManifest, build_dataset, load_split, make_example, manifest_hash, read_manifest
from vxc.data.formats import read_ppm, read_vox, vox_from_bytes, vox_to_bytes, write_ppm, write_vox
from vxc.data.render import RADIUS, pixel_coords, render_view, render_views, view_directions
from vxc.data.shapes import FAMILIES, ShapeSpec, apply_pose, generate_shape, random_spec
from vxc.exceptions import ConfigurationError, DomainError, FormatError, UsageError

AXES = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (0, 1, 0), (0, -1, 0), (-1, 0, 0)]


def projection_mask(grid, direction, size=32):
    """Pixels whose orthographic ray crosses an occupied column, from plane geometry alone."""
    d = np.asarray(direction, float)
    axis = int(np.abs(d).argmax())
    # image axes for an axis-aligned direction, matching a right-handed (right, up, d) frame
    helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(helper, d)
    up = np.cross(d, right)
    U, V = pixel_coords(size, size)
    pts = U[..., None] * right + V[..., None] * up
    idx = np.floor((pts + 0.5) * grid.shape[0]).astype(int)
    inside = np.all((idx >= 0) & (idx < grid.shape[0]), axis=-1)
    column = grid.any(axis=axis)
    others = [a for a in range(3) if a != axis]
    mask = np.zeros((size, size), bool)
    ii = np.clip(idx, 0, grid.shape[0] - 1)
    mask[inside] = column[ii[..., others[0]], ii[..., others[1]]][inside]
    return mask


class TestShapes:
    def test_full_box(self):
        g = generate_shape(ShapeSpec("box-union", (0, 0, 0, 8, 8, 8), D=8))
        assert g.all()

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 20))
    def test_box_voxel_count(self, a, b, c, pose):
        g = generate_shape(ShapeSpec("box-union", (0, 0, 0, a, b, c), pose_seed=pose, D=12))
        assert g.sum() == a * b * c

    def test_out_of_bounds(self):
        with pytest.raises(DomainError):
            generate_shape(ShapeSpec("box-union", (4, 0, 0, 8, 8, 8), D=8))
        with pytest.raises(DomainError):
            generate_shape(ShapeSpec("cylinder", (2, 2, 3, 0, 4), D=8))

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            ShapeSpec("torus", (1,))

    @pytest.mark.parametrize("family", FAMILIES)
    def test_random_specs_are_valid_and_repeatable(self, family):
        for seed in range(20):
            spec = random_spec(np.random.default_rng(seed), 32, family)
            g = generate_shape(spec)
            assert g.shape == (32, 32, 32) and g.any()
            assert spec.digest() == random_spec(np.random.default_rng(seed), 32, family).digest()
            np.testing.assert_array_equal(g, generate_shape(spec))

    @pytest.mark.parametrize("family", [f for f in FAMILIES if f != "sphere-cluster"])
    def test_connected(self, family):
        from scipy import ndimage
        for seed in range(10):
            g = generate_shape(random_spec(np.random.default_rng(seed), 32, family))
            _, n = ndimage.label(g)
            assert n == 1

    def test_pose_preserves_volume(self, rng):
        g = rng.random((6, 6, 6)) < 0.3
        assert apply_pose(g, 17).sum() == g.sum()


class TestRender:
    def test_empty_grid_is_white(self):
        img = render_view(np.zeros((8, 8, 8), bool), (0.3, 0.5, 0.8))
        assert np.all(img == 1.0)

    def test_full_grid_silhouette(self):
        img = render_view(np.ones((8, 8, 8), bool), (0, 0, 1))
        U, V = pixel_coords(32, 32)
        expected = (np.abs(U) < 0.5) & (np.abs(V) < 0.5)
        np.testing.assert_array_equal(np.any(img < 1.0, axis=-1), expected)

    def test_full_grid_silhouette_is_centred(self):
        hit = np.any(render_view(np.ones((8, 8, 8), bool), (1, 0, 0)) < 1.0, axis=-1)
        rows, cols = np.nonzero(hit)
        assert rows.min() + rows.max() == 31 and cols.min() + cols.max() == 31
        # unit cube side on a plane of side 2R: count pixel centres with |u| < 1/2
        centres = (np.arange(32) + 0.5) / 32 * 2 * RADIUS - RADIUS
        assert rows.max() - rows.min() + 1 == np.count_nonzero(np.abs(centres) < 0.5)

    @pytest.mark.parametrize("direction", AXES)
    def test_silhouette_inside_projection(self, direction):
        for seed in range(8):
            g = generate_shape(random_spec(np.random.default_rng(seed), 16))
            hit = np.any(render_view(g, direction) < 1.0, axis=-1)
            mask = projection_mask(g, direction)
            assert not np.any(hit & ~mask)

    def test_deterministic(self):
        g = generate_shape(random_spec(np.random.default_rng(3), 16))
        np.testing.assert_array_equal(render_views(g, 3, 5), render_views(g, 3, 5))

    def test_range_and_shape(self):
        g = generate_shape(random_spec(np.random.default_rng(4), 16))
        imgs = render_views(g, 2, 9, 16, 24)
        assert imgs.shape == (2, 16, 24, 3) and imgs.min() >= 0 and imgs.max() <= 1

    def test_directions_are_unit(self):
        d = view_directions(5, 1)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
        with pytest.raises(ValueError):
            view_directions(0, 1)


class TestFormats:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")

    def test_ppm_float_rounding(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", np.full((1, 1, 3), 0.5))
        assert read_ppm(tmp_path / "a.ppm")[0, 0, 0] == 128

    def test_ppm_rejects_other_magic(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
        with pytest.raises(FormatError):
            read_ppm(tmp_path / "a.ppm")

    def test_ppm_truncated(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00")
        with pytest.raises(FormatError):
            read_ppm(tmp_path / "a.ppm")

    @given(st.integers(1, 9), st.integers(0, 2 ** 16))
    @settings(max_examples=25)
    def test_vox_bits_round_trip(self, D, seed):
        g = np.random.default_rng(seed).random((D, D, D)) < 0.5
        back = vox_from_bytes(vox_to_bytes(g))
        assert back.dtype == bool
        np.testing.assert_array_equal(back, g)

    def test_vox_float_round_trip(self, tmp_path, rng):
        p = rng.random((4, 4, 4)).astype(np.float32)
        write_vox(tmp_path / "p.vox", p)
        np.testing.assert_array_equal(read_vox(tmp_path / "p.vox"), p)

    def test_vox_layout(self):
        g = np.zeros((2, 2, 2), bool)
        g[0, 0, 0] = True
        assert vox_to_bytes(g) == b"VOX1\x02\x00\x00\x80"

    @pytest.mark.parametrize("raw", [b"VOX", b"VOX2\x02\x00\x00\x80", b"VOX1\x02\x00\x00", b"VOX1\x02\x00\x07\x80"])
    def test_vox_rejects_corrupt(self, raw):
        with pytest.raises(FormatError):
            vox_from_bytes(raw)


class TestDataset:
    def test_file_counts(self, tmp_path):
        m = build_dataset(tmp_path / "d", 4, 2, 5, seed=3, D=8, height=16, width=16)
        assert len(list((tmp_path / "d").rglob("*.ppm"))) == 4 * 5 + 2 * 5
        assert len(list((tmp_path / "d").rglob("*.vox"))) == 6
        assert len(m.split("train")) == 4 and len(m.split("test")) == 2

    def test_same_seed_same_hash(self, tmp_path):
        build_dataset(tmp_path / "a", 2, 1, 2, seed=5, D=8, height=16, width=16)
        build_dataset(tmp_path / "b", 2, 1, 2, seed=5, D=8, height=16, width=16)
        build_dataset(tmp_path / "c", 2, 1, 2, seed=6, D=8, height=16, width=16)
        assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b") != manifest_hash(tmp_path / "c")

    def test_parallel_matches_serial(self, tmp_path):
        build_dataset(tmp_path / "a", 3, 1, 2, seed=5, D=8, height=16, width=16)
        build_dataset(tmp_path / "b", 3, 1, 2, seed=5, D=8, height=16, width=16, workers=2)
        assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")

    def test_splits_disjoint(self, tiny_dataset):
        m = read_manifest(tiny_dataset)
        assert not {e.id for e in m.split("train")} & {e.id for e in m.split("test")}

    def test_manifest_text_round_trip(self, tiny_dataset):
        m = read_manifest(tiny_dataset)
        assert DatasetManifest.from_text(m.to_text()) == m

    def test_manifest_is_tab_separated(self, tiny_dataset):
        text = (tiny_dataset / "manifest.tsv").read_text(encoding="utf-8")
        assert all("\t" in line for line in text.splitlines())

    def test_load_split(self, tiny_dataset):
        data = load_split(tiny_dataset, "train")
        assert data.views.shape[:2] == (4, 3) and data.views.dtype == np.float32
        assert data.grids.dtype == bool and data.grids.any(axis=(1, 2, 3)).all()

    def test_examples_match_generator(self, tiny_dataset):
        m = read_manifest(tiny_dataset)
        data = load_split(tiny_dataset, "train")
        _, grid, _ = make_example(m.seed, 0, m.n_views, m.D, m.height, m.width)
        np.testing.assert_array_equal(data.grids[0], grid)

    def test_non_empty_directory_refused(self, tmp_path):
        (tmp_path / "x").mkdir()
        (tmp_path / "x" / "f").write_text("x")
        with pytest.raises(UsageError):
            build_dataset(tmp_path / "x", 1, 1, 1, D=8, height=16, width=16)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
    def test_counts_validated(self, tmp_path, args):
        with pytest.raises(UsageError):
            build_dataset(tmp_path / "y", *args, D=8, height=16, width=16)

    def test_missing_file_named(self, tmp_path):
        build_dataset(tmp_path / "d", 1, 1, 1, D=8, height=16, width=16)
        victim = next((tmp_path / "d" / "train").glob("*.ppm"))
        victim.unlink()
        with pytest.raises(FileNotFoundError, match=victim.name):
            load_split(tmp_path / "d", "train")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_manifest(tmp_path)

    def test_bad_manifest_line(self):
        with pytest.raises(FormatError, match=":2:"):
            DatasetManifest.from_text("version\t1\nbroken line\n")
