import numpy as np
import pytest
from hypothesis import given, strategies as st

from affordance import io
from affordance.geometry import CameraIntrinsics, DepthMap, ManhattanFrame, PointCloud
from affordance.labeler import AffordanceMap, Label
from affordance.voxels import VoxelGrid


def test_depth_png_round_trip_is_millimetre_exact(tmp_path):
    rng = np.random.default_rng(0)
    mm = rng.integers(0, 65536, (7, 9))
    mm[0, 0] = 0
    intr = CameraIntrinsics.default(9, 7)
    io.write_depth_png(tmp_path / "d.png", DepthMap(mm / 1000.0, intr))
    back = io.read_depth_png(tmp_path / "d.png", intr)
    assert np.array_equal(np.rint(back.depths * 1000), mm)
    assert not back.valid[0, 0]


def test_depth_png_rejects_far_depth(tmp_path):
    with pytest.raises(ValueError):
        io.write_depth_png(tmp_path / "d.png", DepthMap(np.full((2, 2), 70.0), CameraIntrinsics.default(2, 2)))


def test_intrinsics_round_trip_and_parsing(tmp_path):
    intr = CameraIntrinsics(518.8579, 519.4696, 325.5824, 253.7362, 640, 480)
    io.write_intrinsics(tmp_path / "k.txt", intr)
    assert io.read_intrinsics(tmp_path / "k.txt") == intr
    (tmp_path / "p.txt").write_text("# camera\nfx = 100\nfy=100  # square\n\ncx = 10\ncy = 5\n")
    k = io.read_intrinsics(tmp_path / "p.txt", (12, 20))
    assert (k.width, k.height, k.cx) == (20, 12, 10.0)
    with pytest.raises(ValueError):
        io.read_intrinsics(tmp_path / "p.txt")
    (tmp_path / "bad.txt").write_text("fx 100\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        io.read_intrinsics(tmp_path / "bad.txt")


def test_rgb_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (5, 6, 3)) / 255.0
    io.write_rgb(tmp_path / "c.png", img)
    assert np.allclose(io.read_rgb(tmp_path / "c.png"), img)


@given(st.integers(0, 10 ** 6))
def test_label_png_round_trip(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("labels")
    lab = np.random.default_rng(seed).integers(-1, 2, (6, 5)).astype(np.int8)
    paths = io.write_label_maps(d, "room", {"lying": AffordanceMap(lab, "lying")})
    assert paths["lying"].name == "room_lying.png"
    back = io.read_label_maps(d, "room")
    assert list(back) == ["lying"] and back["lying"].affordance == "lying"
    assert np.array_equal(back["lying"].labels, lab)


def test_label_png_values(tmp_path):
    lab = np.array([[Label.NOT, Label.UNKNOWN, Label.SUPPORTS]], np.int8)
    io.write_label_png(tmp_path / "x_standing.png", AffordanceMap(lab, "standing"))
    from PIL import Image
    assert np.asarray(Image.open(tmp_path / "x_standing.png")).tolist() == [[0, 128, 255]]
    assert io.read_label_png(tmp_path / "x_standing.png").affordance == "standing"


@given(st.integers(0, 10 ** 6))
def test_grid_round_trip(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(1, 6, 3))
    g = rng.normal(size=3)
    h = np.cross(g, rng.normal(size=3))
    frame = ManhattanFrame.from_gravity_and_heading(g, h)
    grid = VoxelGrid(rng.integers(0, 3, dims).astype(np.uint8), float(rng.uniform(0.01, 1)),
                     rng.normal(size=3), frame, int(rng.integers(0, 3)), int(rng.integers(0, 100)))
    back = io.grid_from_bytes(io.grid_to_bytes(grid))
    assert np.array_equal(back.cells, grid.cells) and back.cells.shape == dims
    assert back.voxel_size == grid.voxel_size and np.array_equal(back.origin, grid.origin)
    assert np.array_equal(back.frame.rotation, grid.frame.rotation)
    assert (back.up_axis, back.fill_conflicts) == (grid.up_axis, grid.fill_conflicts)


def test_grid_layout_is_x_fastest(tmp_path):
    cells = np.zeros((2, 3, 4), np.uint8)
    cells[1, 0, 0] = 2
    grid = VoxelGrid(cells, 0.1, np.zeros(3), ManhattanFrame.identity())
    io.write_grid(tmp_path / "g.vox", grid)
    data = (tmp_path / "g.vox").read_bytes()
    assert data[:8] == b"AFFVOXG1" and len(data) == 129 + 24
    assert data[129:131] == b"\x00\x02"
    assert np.array_equal(io.read_grid(tmp_path / "g.vox").cells, cells)
    with pytest.raises(ValueError):
        io.grid_from_bytes(data[:-1])
    with pytest.raises(ValueError):
        io.grid_from_bytes(b"garbage")


def test_ply_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    pts, nrm = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    io.write_ply(tmp_path / "c.ply", PointCloud(pts, nrm, np.arange(5), (1, 5)))
    p, n = io.read_ply(tmp_path / "c.ply")
    assert np.allclose(p, pts, atol=1e-6) and np.allclose(n, nrm, atol=1e-6)
    (tmp_path / "x.ply").write_text("obj\n")
    with pytest.raises(ValueError):
        io.read_ply(tmp_path / "x.ply")
