import dataclasses
import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from pileforesight.geometry import Action, rectangle_in_workspace
from pileforesight.imaging import grand_sum
from pileforesight.sim import (Piece, Scene, SceneFormatError, SimConfig, apply_push, rasterize,
                               read_scene, spawn_scene, touches_scene, write_scene)

CFG = SimConfig()
PITCH = 1.0 / 32


def regular_piece(cx, cy, r=0.02, m=8, phase=0.0):
    ang = phase + 2 * math.pi * np.arange(m) / m
    return Piece(np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)]))


def max_overlap(scene):
    polys = [Polygon(p.vertices) for p in scene.pieces]
    worst = 0.0
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            if polys[i].intersects(polys[j]):
                worst = max(worst, polys[i].intersection(polys[j]).area)
    return worst


def pile_scenario(seed):
    """A seeded pile and a push that touches it."""
    rng = np.random.default_rng(seed)
    scene = spawn_scene(CFG, int(rng.integers(20, 81)), (0.2, 0.2, 0.8, 0.8), seed)
    while True:
        a = Action(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0, 2 * math.pi),
                   float(rng.choice([0.06, 0.12, 0.18, 0.24, 0.30])))
        if rectangle_in_workspace(a) and touches_scene(scene, a):
            return scene, a


@pytest.fixture(scope="module")
def scenarios():
    return [pile_scenario(s) for s in range(20)]


@pytest.fixture(scope="module")
def pushed(scenarios):
    return [apply_push(s, a, CFG) for s, a in scenarios]


class TestPiece:
    def test_rejects_clockwise(self):
        with pytest.raises(ValueError):
            Piece([(0, 0), (0, 1), (1, 0)])

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Piece([(0, 0), (1, 1), (2, 2)])

    def test_area_and_centroid(self):
        p = Piece([(0.1, 0.1), (0.3, 0.1), (0.3, 0.2), (0.1, 0.2)])
        assert p.area == pytest.approx(0.02)
        np.testing.assert_allclose(p.centroid, [0.2, 0.15])


class TestSimConfig:
    def test_defaults(self):
        assert (CFG.piece_radius, CFG.verts_per_piece, CFG.substeps_per_unit_length,
                CFG.settle_iterations, CFG.overlap_tol, CFG.supersample) == (0.02, 7, 100, 20, 1e-4, 4)

    @pytest.mark.parametrize("name", ["piece_radius", "settle_iterations", "supersample"])
    def test_positive(self, name):
        with pytest.raises(ValueError):
            dataclasses.replace(CFG, **{name: 0})


class TestSpawn:
    def test_empty(self):
        assert len(spawn_scene(CFG, 0, (0, 0, 1, 1), 1)) == 0

    def test_deterministic(self):
        a = spawn_scene(CFG, 40, (0.1, 0.1, 0.9, 0.9), 7)
        b = spawn_scene(CFG, 40, (0.1, 0.1, 0.9, 0.9), 7)
        assert a.verts.tobytes() == b.verts.tobytes()
        assert spawn_scene(CFG, 40, (0.1, 0.1, 0.9, 0.9), 8) != a

    def test_fifty_pieces_in_region_without_overlap(self):
        region = (0.25, 0.3, 0.75, 0.8)
        scene = spawn_scene(CFG, 50, region, 3)
        assert len(scene) == 50
        c = scene.centroids
        assert np.all(c[:, 0] >= region[0] - 1e-12) and np.all(c[:, 0] <= region[2] + 1e-12)
        assert np.all(c[:, 1] >= region[1] - 1e-12) and np.all(c[:, 1] <= region[3] + 1e-12)
        assert max_overlap(scene) <= CFG.overlap_tol

    def test_pieces_sampled_on_circle(self):
        scene = spawn_scene(CFG, 5, (0.3, 0.3, 0.7, 0.7), 0)
        for p in scene.pieces:
            assert len(p.vertices) == CFG.verts_per_piece
            # translation never changes shape: vertices stay equidistant from the circle center
            d = np.linalg.norm(p.vertices - p.vertices.mean(axis=0), axis=1)
            assert d.max() <= 2 * CFG.piece_radius

    def test_region_outside_workspace(self):
        with pytest.raises(ValueError):
            spawn_scene(CFG, 3, (0.5, 0.5, 1.5, 0.9), 0)


class TestApplyPush:
    def test_untouched_scene_unchanged(self):
        scene = Scene.from_pieces([regular_piece(0.2, 0.2), regular_piece(0.8, 0.8)])
        a = Action(0.5, 0.5, 0.0, 0.2)
        assert not touches_scene(scene, a)
        assert apply_push(scene, a, CFG) == scene

    def test_single_piece_oracle(self):
        for d, theta in ((0.05, 0.0), (0.1, math.pi / 2), (0.15, 2.5)):
            start = np.array([0.5, 0.5]) - 0.15 * np.array([math.cos(theta), math.sin(theta)])
            a = Action(start[0], start[1], theta, 0.25)
            p = regular_piece(*(a.start + d * a.direction), phase=0.3)
            u0 = (p.centroid - a.start) @ a.direction
            back = u0 - ((p.vertices - a.start) @ a.direction).min()
            after = apply_push(Scene.from_pieces([p]), a, CFG).pieces[0]
            u1 = (after.centroid - a.start) @ a.direction
            lateral = (after.centroid - p.centroid) @ a.normal
            # the trailing face rests on the pusher's final edge
            assert ((after.vertices - a.start) @ a.direction).min() >= a.length - 1e-9
            assert u1 - u0 == pytest.approx(a.length - d + back, abs=2 * PITCH)
            assert abs(lateral) <= 1e-12

    def test_two_pieces_single_file(self):
        a = Action(0.2, 0.5, 0.0, 0.3)
        scene = Scene.from_pieces([regular_piece(0.26, 0.5), regular_piece(0.32, 0.5)])
        out = apply_push(scene, a, CFG)
        for p in out.pieces:
            assert p.vertices[:, 0].min() >= 0.5 - 1e-9
        assert max_overlap(out) <= CFG.overlap_tol

    def test_corner_contact_slides_sideways(self):
        a = Action(0.3, 0.5, 0.0, 0.2)
        p = regular_piece(0.4, 0.5 + 0.125 + 0.012)   # centered just beside the pusher
        after = apply_push(Scene.from_pieces([p]), a, CFG).pieces[0]
        assert after.vertices[:, 1].min() >= 0.625 - 1e-9
        assert after.centroid[0] == pytest.approx(p.centroid[0])

    def test_piece_cut_at_start_is_cleared(self):
        a = Action(0.3, 0.5, 0.0, 0.1)
        behind = regular_piece(0.295, 0.5)    # mostly behind the start line
        out = apply_push(Scene.from_pieces([behind]), a, CFG).pieces[0]
        assert out.vertices[:, 0].max() <= 0.3 + 1e-9

    def test_clamped_into_workspace(self):
        a = Action(0.6, 0.5, 0.0, 0.4)
        out = apply_push(Scene.from_pieces([regular_piece(0.9, 0.5)]), a, CFG)
        v = out.pieces[0].vertices
        assert v.min() >= -1e-12 and v.max() <= 1.0 + 1e-12

    def test_deterministic(self, scenarios):
        scene, a = scenarios[0]
        assert apply_push(scene, a, CFG).verts.tobytes() == apply_push(scene, a, CFG).verts.tobytes()

    def test_input_not_mutated(self, scenarios):
        scene, a = scenarios[1]
        before = scene.verts.tobytes()
        apply_push(scene, a, CFG)
        assert scene.verts.tobytes() == before

    def test_piece_count_and_shapes_preserved(self, scenarios, pushed):
        for (scene, _), out in zip(scenarios, pushed):
            assert len(out) == len(scene)
            for p, q in zip(scene.pieces, out.pieces):
                shift = q.vertices - p.vertices
                np.testing.assert_allclose(shift, shift[0] + np.zeros_like(shift), atol=1e-12)

    def test_overlap_after_settle(self, pushed):
        for out in pushed:
            assert max_overlap(out) <= CFG.overlap_tol
            assert out.verts.min() >= -1e-12 and out.verts.max() <= 1.0 + 1e-12

    def test_quasi_static_monotone(self, scenarios, pushed):
        for (scene, a), out in zip(scenarios, pushed):
            along = (out.centroids - scene.centroids) @ a.direction
            assert along.min() >= -PITCH

    def test_mass_plausible(self, scenarios, pushed):
        for (scene, _), out in zip(scenarios, pushed):
            before, after = grand_sum(rasterize(scene)), grand_sum(rasterize(out))
            assert abs(after - before) <= 0.15 * before

    def test_substep_refinement(self, scenarios, pushed):
        fine = dataclasses.replace(CFG, substeps_per_unit_length=2 * CFG.substeps_per_unit_length)
        for (scene, a), out in zip(scenarios, pushed):
            moved = np.linalg.norm(apply_push(scene, a, fine).centroids - out.centroids, axis=1)
            assert moved.max() <= PITCH


class TestRasterize:
    def test_empty(self):
        assert not rasterize(Scene.from_pieces([]), 32).any()

    def test_full_board(self):
        full = Piece([(0, 0), (1, 0), (1, 1), (0, 1)])
        np.testing.assert_array_equal(rasterize(Scene.from_pieces([full]), 32), np.ones((32, 32)))

    def test_supersample_oracle(self):
        scene = spawn_scene(CFG, 60, (0.1, 0.1, 0.9, 0.9), 11)
        hi = rasterize(scene, 32, 16)
        lo = rasterize(scene, 32, 4)
        assert np.abs(hi - lo).max() <= 0.25

    def test_half_pixel_coverage(self):
        # a rectangle covering exactly the left half of pixel (0, 0) at N=2
        p = Piece([(0.0, 0.0), (0.25, 0.0), (0.25, 0.5), (0.0, 0.5)])
        img = rasterize(Scene.from_pieces([p]), 2, 4)
        np.testing.assert_allclose(img, [[0.5, 0.0], [0.0, 0.0]])

    def test_values_in_range(self):
        img = rasterize(spawn_scene(CFG, 80, (0.2, 0.2, 0.6, 0.6), 2), 32, 4)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_resolution_checked(self):
        with pytest.raises(ValueError):
            rasterize(Scene.from_pieces([]), 1)


class TestSceneFile:
    def test_round_trip(self, tmp_path):
        scene = spawn_scene(CFG, 12, (0.1, 0.1, 0.9, 0.9), 99)
        path = tmp_path / "s.txt"
        write_scene(path, scene)
        back = read_scene(path)
        assert back == scene and back.seed == 99
        assert back.verts.tobytes() == scene.verts.tobytes()

    def test_format(self, tmp_path):
        path = tmp_path / "s.txt"
        write_scene(path, Scene.from_pieces([Piece([(0, 0), (0.5, 0), (0, 0.5)])], seed=4))
        lines = path.read_text().splitlines()
        assert lines[0] == "scene N=1 seed=4"
        assert lines[1].split()[0] == "piece" and len(lines[1].split()) == 7

    @pytest.mark.parametrize("text", ["piece 0 0 1 0 0 1\n", "scene N=2 seed=0\npiece 0 0 0.5 0 0 0.5\n",
                                      "scene N=1 seed=0\npiece 0 0 0.5\n", "scene seed=0\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(SceneFormatError):
            read_scene(path)
