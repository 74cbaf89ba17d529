import json
import math

import numpy as np
import pytest

from stereorad.geometry import Ray, WorldPoint
from stereorad.phantoms import (
    cylinder_phantom,
    phantom_from_description,
    sphere_phantom,
    spine_phantom,
)
from stereorad.volume import (
    IDENTITY_TF,
    DimensionMismatch,
    ParseError,
    TransferFunction,
    TransferMode,
    Volume,
    default_step,
    line_integral,
    load_volume,
    sample_trilinear,
    save_volume,
)


def unit_cube(n=8, s=2.0) -> Volume:
    return Volume(np.ones((n, n, n)), (s, s, s),
                  WorldPoint(*(-(n - 1) / 2 * s,) * 3))


def axis_ray(axis=0, offset=(0.0, 0.0)) -> Ray:
    d = [0.0, 0.0, 0.0]
    d[axis] = 1.0
    o = [-1e4, *offset] if axis == 0 else [offset[0], -1e4, offset[1]]
    return Ray(WorldPoint(*o), tuple(d))


class TestSampling:
    def test_exact_voxel_center(self):
        data = np.arange(27, dtype=float).reshape(3, 3, 3)
        vol = Volume(data, (1.0, 1.0, 1.0), WorldPoint(0, 0, 0))
        assert sample_trilinear(vol, vol.voxel_center(1, 2, 0)) == data[1, 2, 0]

    def test_midpoint_between_two_voxels(self):
        data = np.zeros((2, 1, 1))
        data[1, 0, 0] = 1.0
        vol = Volume(data, (2.0, 2.0, 2.0), WorldPoint(0, 0, 0))
        assert sample_trilinear(vol, WorldPoint(1.0, 0.0, 0.0)) == 0.5

    def test_outside_bounds_is_air(self):
        vol = unit_cube(4)
        lo, hi = vol.support_bounds()
        assert sample_trilinear(vol, WorldPoint(hi[0] + 0.1, 0, 0)) == 0.0
        assert sample_trilinear(vol, WorldPoint(0, 0, lo[2] - 5.0)) == 0.0

    def test_fades_linearly_to_support_edge(self):
        vol = unit_cube(4, s=2.0)
        # one voxel beyond the outermost center the field reaches zero
        xc = vol.voxel_center(3, 1, 1).x
        assert sample_trilinear(vol, WorldPoint(xc + 1.0, 0, 0)) == pytest.approx(0.5)
        assert sample_trilinear(vol, WorldPoint(xc + 2.0, 0, 0)) == 0.0


class TestLineIntegral:
    def test_uniform_cube_chord_equals_edge(self):
        n, s = 16, 2.0
        vol = unit_cube(n, s)
        got = line_integral(vol, axis_ray(0), step=default_step(vol))
        assert got == pytest.approx(n * s, abs=default_step(vol) / 2)

    def test_sphere_central_chord(self):
        vol = sphere_phantom()
        step = default_step(vol)
        got = line_integral(vol, axis_ray(0), step=step)
        assert got == pytest.approx(100.0, abs=step)

    def test_non_intersecting_ray(self):
        vol = unit_cube(4)
        assert line_integral(vol, axis_ray(0, offset=(500.0, 0.0)), 1.0) == 0.0

    def test_linearity_in_value(self):
        vol = sphere_phantom(dims=(32, 32, 32), spacing=(4, 4, 4), radius=40)
        base = line_integral(vol, axis_ray(1), 1.0)
        scaled = line_integral(vol.scaled(3.5), axis_ray(1), 1.0)
        assert scaled == pytest.approx(3.5 * base, rel=1e-12)

    def test_convergence_under_step_halving(self):
        vol = sphere_phantom()
        step = default_step(vol)
        a = line_integral(vol, axis_ray(0), step)
        b = line_integral(vol, axis_ray(0), step / 2)
        assert abs(a - b) < (step / 2) * float(np.max(np.abs(vol.data)))

    def test_mirrored_rays_agree(self):
        vol = sphere_phantom()
        up = Ray(WorldPoint(-1e4, 12.0, 30.0), (1.0, 0.0, 0.0))
        down = Ray(WorldPoint(-1e4, 12.0, -30.0), (1.0, 0.0, 0.0))
        assert line_integral(vol, up, 1.0) == pytest.approx(
            line_integral(vol, down, 1.0), abs=1e-9)

    def test_oblique_matches_analytic_slab(self):
        # 45-degree ray through a uniform slab: chord = thickness * sqrt(2)
        n, s = 32, 1.0
        vol = unit_cube(n, s)
        d = (1 / math.sqrt(2), 1 / math.sqrt(2), 0.0)
        got = line_integral(vol, Ray(WorldPoint(-100, -100, 0), d), 0.25)
        assert got == pytest.approx(n * s * math.sqrt(2), abs=0.5)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            line_integral(unit_cube(2), axis_ray(0), 0.0)


class TestTransferFunctions:
    def test_identity(self):
        v = np.array([-1.0, 0.5, 2.0])
        assert np.array_equal(IDENTITY_TF.apply(v), v)

    def test_high_pass_density(self):
        tf = TransferFunction(TransferMode.HIGH_PASS_DENSITY, threshold=1.0)
        got = tf.apply(np.array([0.0, 0.5, 1.0, 3.0]))
        assert np.array_equal(got, [0.0, 0.0, 0.0, 2.0])

    def test_windowed_linear(self):
        tf = TransferFunction(TransferMode.WINDOWED_LINEAR, threshold=1.0, window=2.0)
        got = tf.apply(np.array([0.0, 1.0, 2.0, 4.0]))
        assert np.allclose(got, [0.0, 0.0, 0.5, 1.0])

    def test_windowed_linear_requires_width(self):
        with pytest.raises(ValueError):
            TransferFunction(TransferMode.WINDOWED_LINEAR, window=0.0)

    def test_high_pass_never_exceeds_identity(self):
        vol = sphere_phantom(dims=(16, 16, 16), spacing=(4, 4, 4), radius=20)
        tf = TransferFunction(TransferMode.HIGH_PASS_DENSITY, threshold=0.4)
        ray = axis_ray(0)
        assert line_integral(vol, ray, 1.0, tf) <= line_integral(vol, ray, 1.0)


class TestPhantoms:
    def test_sphere_json_description(self):
        vol = phantom_from_description({
            "kind": "sphere", "dims": [128, 128, 128],
            "spacing": [2.0, 2.0, 2.0], "radius": 50.0, "value": 1.0})
        assert vol.dims == (128, 128, 128)
        c = np.array([vol.voxel_center(i, i, i).x for i in (63, 64)])
        assert np.allclose(c, [-1.0, 1.0])  # grid straddles the center
        # inside r <= 50 of center, 0 outside
        inside = vol.voxel_center(64, 64, 64)
        assert sample_trilinear(vol, inside) == 1.0
        assert vol.data[0, 0, 0] == 0.0
        dist = np.linalg.norm([1.0, 1.0, 49.0])
        assert dist <= 50 and vol.data[64, 64, 88] == 1.0  # center (1,1,49)

    def test_cylinder(self):
        vol = cylinder_phantom(dims=(64, 64, 64), spacing=(2, 2, 2),
                               radius=20, height=60, value=2.0)
        assert vol.data.max() == 2.0
        k = np.nonzero(vol.data)
        zs = vol.origin.z + 2.0 * np.unique(k[2])
        assert zs.min() >= -30.0 and zs.max() <= 30.0

    def test_spine_stack_has_levels(self):
        vol = spine_phantom(dims=(64, 64, 128), spacing=(2, 2, 2), levels=3,
                            pitch=40.0)
        profile = vol.data.sum(axis=(0, 1))
        # three separated blobs along z
        occupied = profile > 0
        runs = np.diff(np.flatnonzero(np.diff(np.r_[0, occupied, 0])))[::2]
        assert len(runs) == 3

    def test_unknown_kind_rejected(self):
        with pytest.raises(ParseError):
            phantom_from_description({"kind": "torus"})

    def test_unknown_key_rejected(self):
        with pytest.raises(ParseError):
            phantom_from_description({"kind": "sphere", "radius": 10, "clr": 1})


class TestVolumeIO:
    def test_round_trip(self, tmp_path):
        vol = sphere_phantom(dims=(16, 24, 8), spacing=(1.5, 2.0, 3.0),
                             radius=10.0, origin=(-4.0, 2.0, 7.0))
        save_volume(vol, tmp_path / "ball.mhd")
        back = load_volume(tmp_path / "ball.mhd")
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        assert back.origin == vol.origin
        assert np.array_equal(back.data, vol.data)

    def test_round_trip_short(self, tmp_path):
        vol = Volume(np.arange(24, dtype=float).reshape(2, 3, 4),
                     (1.0, 1.0, 1.0), WorldPoint(0, 0, 0))
        save_volume(vol, tmp_path / "v.mhd", element_type="MET_SHORT")
        back = load_volume(tmp_path / "v.mhd")
        assert np.array_equal(back.data, vol.data)

    def test_dimension_mismatch(self, tmp_path):
        (tmp_path / "bad.mhd").write_text("\n".join([
            "NDims = 3", "DimSize = 4 4 4", "ElementSpacing = 1 1 1",
            "ElementType = MET_FLOAT", "ElementDataFile = bad.raw"]) + "\n")
        np.zeros(63, dtype="<f4").tofile(tmp_path / "bad.raw")
        with pytest.raises(DimensionMismatch):
            load_volume(tmp_path / "bad.mhd")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "broken.mhd").write_text("DimSize 4 4 4\n")
        with pytest.raises(ParseError):
            load_volume(tmp_path / "broken.mhd")

    def test_missing_keys(self, tmp_path):
        (tmp_path / "nokeys.mhd").write_text("NDims = 3\n")
        with pytest.raises(ParseError):
            load_volume(tmp_path / "nokeys.mhd")

    def test_load_phantom_json(self, tmp_path):
        f = tmp_path / "ph.json"
        f.write_text(json.dumps({"kind": "sphere", "dims": [8, 8, 8],
                                 "spacing": [4, 4, 4], "radius": 10}))
        vol = load_volume(f)
        assert vol.dims == (8, 8, 8)
        assert vol.data.max() == 1.0

    def test_raw_order_x_fastest(self, tmp_path):
        # scalar at (i,j,k) = i + 10 j + 100 k, written x fastest
        i, j, k = np.meshgrid(range(2), range(3), range(4), indexing="ij")
        vol = Volume((i + 10 * j + 100 * k).astype(float), (1, 1, 1),
                     WorldPoint(0, 0, 0))
        save_volume(vol, tmp_path / "o.mhd")
        raw = np.fromfile(tmp_path / "o.raw", dtype="<f4")
        assert raw[0] == 0.0 and raw[1] == 1.0    # x fastest
        assert raw[2] == 10.0                      # then y
        back = load_volume(tmp_path / "o.mhd")
        assert np.array_equal(back.data, vol.data)
