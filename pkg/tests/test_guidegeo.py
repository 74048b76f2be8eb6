import numpy as np
import pytest

from headsplat.diffcore import ParamStore, engine, finite_diff_check, grad
from headsplat.guidegeo import (
    build_lattice,
    ellipsoid_sdf,
    eval_sdf_field,
    export_obj,
    extract_guide_mesh,
    extract_surface,
    init_sdf_net,
    laplacian_loss,
    marching_tets,
    pretrain_sdf,
    render_guide,
    umbrella_residuals,
)
from headsplat.guidegeo.surface import GuideMesh
from headsplat.splatcore import Camera


def sphere_field(positions, r=0.5):
    return np.linalg.norm(positions, axis=1) - r


def mesh_from_field(field_fn, res=32, box=1.0, fdim=2):
    positions, tet_idx = build_lattice(res, box)
    s = field_fn(positions)
    gamma = np.tile(np.arange(fdim, dtype=float), (len(positions), 1))
    verts, feats, faces, _ = marching_tets(s, gamma, positions, tet_idx)
    return verts, feats, faces, positions, tet_idx, s, gamma


def euler_characteristic(verts, faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    n_edges = len(np.unique(lo * len(verts) + hi))
    return len(verts) - n_edges + len(faces)


def uv_sphere(r, n_lat, n_lon):
    th = np.linspace(0, np.pi, n_lat)
    ph = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    t, p = np.meshgrid(th, ph, indexing="ij")
    verts = np.stack([r * np.sin(t) * np.cos(p),
                      r * np.sin(t) * np.sin(p),
                      r * np.cos(t)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(n_lat - 1):
        for j in range(n_lon):
            a = i * n_lon + j
            b = (i + 1) * n_lon + j
            c = (i + 1) * n_lon + (j + 1) % n_lon
            d = i * n_lon + (j + 1) % n_lon
            faces.append([a, b, c])
            faces.append([a, c, d])
    return verts, np.array(faces)


def flat_hex_patch():
    """Planar hexagon fan: center vertex 0 ringed by six neighbors."""
    ang = np.arange(6) * np.pi / 3.0
    ring = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], axis=1)
    verts = np.vstack([[0.0, 0.0, 0.0], ring])
    faces = np.array([[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)])
    return verts, faces


class TestMarchingTets:
    def test_sphere_vertices_near_radius_and_closed(self):
        verts, feats, faces, *_ = mesh_from_field(sphere_field, res=32)
        spacing = 2.0 / 31
        r = np.linalg.norm(verts, axis=1)
        assert len(verts) > 500
        assert np.all(np.abs(r - 0.5) <= spacing / 2.0 + 1e-9)
        assert euler_characteristic(verts, faces) == 2

    def test_all_positive_field_gives_empty_mesh(self):
        positions, tet_idx = build_lattice(8)
        s = np.ones(len(positions))
        verts, feats, faces, _ = marching_tets(
            s, np.zeros((len(positions), 2)), positions, tet_idx)
        assert len(verts) == 0
        assert len(faces) == 0

    def test_plane_field_reproduced_exactly(self):
        verts, *_ = mesh_from_field(lambda p: p[:, 2] - 0.1, res=12)
        assert len(verts) > 0
        np.testing.assert_allclose(verts[:, 2], 0.1, atol=1e-6)

    def test_vertices_lie_on_sign_change_edges(self):
        positions, tet_idx = build_lattice(10)
        s = sphere_field(positions, 0.6)
        verts, _, faces, bwd = marching_tets(
            s, np.zeros((len(positions), 1)), positions, tet_idx)
        slo, shi = s[bwd["lo"]], s[bwd["hi"]]
        assert np.all(slo * shi < 0.0)
        t = bwd["t"]
        expect = positions[bwd["lo"]] + t[:, None] * (
            positions[bwd["hi"]] - positions[bwd["lo"]])
        np.testing.assert_allclose(verts, expect, atol=1e-12)

    def test_invariant_to_tet_enumeration_order(self):
        positions, tet_idx = build_lattice(9)
        s = sphere_field(positions, 0.55)
        gamma = np.cos(positions)
        v1, f1, faces1, _ = marching_tets(s, gamma, positions, tet_idx)
        rng = np.random.default_rng(3)
        v2, f2, faces2, _ = marching_tets(s, gamma, positions,
                                          tet_idx[rng.permutation(len(tet_idx))])
        np.testing.assert_array_equal(v1, v2)
        np.testing.assert_array_equal(faces1, faces2)
        np.testing.assert_array_equal(f1, f2)

    def test_outward_orientation_on_sphere(self):
        verts, _, faces, *_ = mesh_from_field(sphere_field, res=16)
        p0, p1, p2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
        nrm = np.cross(p1 - p0, p2 - p0)
        centroid = (p0 + p1 + p2) / 3.0
        agree = np.einsum("tx,tx->t", nrm, centroid) > 0.0
        assert agree.all()

    def test_uniform_field_shift_moves_sphere_inward(self):
        positions, tet_idx = build_lattice(16)
        s = sphere_field(positions, 0.5)
        gamma = np.zeros((len(positions), 1))
        delta = 1e-3
        v1, *_ = marching_tets(s, gamma, positions, tet_idx)
        v2, *_ = marching_tets(s + delta, gamma, positions, tet_idx)
        dr = np.linalg.norm(v2, axis=1).mean() - np.linalg.norm(v1, axis=1).mean()
        # within 10%: linear interpolation bends the shift by O(spacing)
        assert abs(dr + delta) < 0.1 * delta

    def test_gradients_match_finite_differences(self):
        positions, tet_idx = build_lattice(5)
        store = ParamStore()
        rng = np.random.default_rng(7)
        base = sphere_field(positions, 0.55)
        store.add("s", base + rng.normal(scale=0.02, size=base.shape))
        store.add("gamma", rng.normal(size=(len(positions), 2)))
        w = rng.normal(size=5)  # projection weights, fixed

        def loss():
            packed, _ = extract_surface(store.leaf("s"), store.leaf("gamma"),
                                        positions, tet_idx)
            return engine.vsum(packed * engine.constant(w))

        report = finite_diff_check(loss, store, h=1e-6, tolerance=1e-5,
                                   max_coords=24, seed=1)
        assert report["__all_ok__"], report


class TestLaplacian:
    def test_flat_interior_vertex_residual_zero(self):
        verts, faces = flat_hex_patch()
        res = umbrella_residuals(verts, faces)
        np.testing.assert_allclose(res[0], 0.0, atol=1e-12)

    def test_displaced_vertex_residual_closed_form(self):
        verts, faces = flat_hex_patch()
        d = np.array([0.02, -0.01, 0.3])
        verts2 = verts.copy()
        verts2[0] += d
        res = umbrella_residuals(verts2, faces)
        np.testing.assert_allclose(res[0] @ res[0], d @ d, rtol=1e-12)

    def test_loss_rigid_motion_invariant(self):
        verts, _, faces, *_ = mesh_from_field(sphere_field, res=10)
        l1 = laplacian_loss(verts, faces).value
        ang = 0.6
        R = np.array([[np.cos(ang), -np.sin(ang), 0],
                      [np.sin(ang), np.cos(ang), 0],
                      [0, 0, 1.0]])
        l2 = laplacian_loss(verts @ R.T + np.array([0.3, -0.2, 1.0]),
                            faces).value
        assert abs(l1 - l2) < 1e-10

    def test_isolated_vertex_contributes_zero(self):
        verts, faces = flat_hex_patch()
        verts = np.vstack([verts, [5.0, 5.0, 5.0]])  # no faces touch it
        l_with = laplacian_loss(verts, faces).value
        l_without = laplacian_loss(verts[:-1], faces).value
        np.testing.assert_allclose(l_with * 8, l_without * 7, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        verts, faces = flat_hex_patch()
        store = ParamStore()
        store.add("v", verts + rng.normal(scale=0.05, size=verts.shape))

        def loss():
            return laplacian_loss(store.leaf("v"), faces)

        report = finite_diff_check(loss, store, h=1e-6, tolerance=1e-7,
                                   max_coords=21)
        assert report["__all_ok__"], report


class TestSdfNet:
    def test_pretrained_sign_convention_and_feature_width(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        init_sdf_net(store, fdim=4, rng=rng)
        pretrain_sdf(store, rng, steps=150, batch=256)
        pts = np.array([[0.0, 0.0, 0.0], [0.97, 0.97, 0.97]])
        s, gamma = eval_sdf_field(store, pts)
        assert s.value[0] < 0.0
        assert s.value[1] > 0.0
        assert gamma.value.shape == (2, 4)

    def test_field_gradient_matches_finite_differences(self):
        store = ParamStore()
        rng = np.random.default_rng(1)
        init_sdf_net(store, fdim=2, rng=rng, hidden=(16, 16))
        pts = rng.uniform(-1, 1, size=(12, 3))

        def loss():
            s, _ = eval_sdf_field(store, pts)
            return engine.vsum(s * s)

        report = finite_diff_check(loss, store, h=1e-5, tolerance=1e-6,
                                   max_coords=6, seed=2)
        assert report["__all_ok__"], report


class TestRenderGuide:
    def test_empty_mesh_renders_zero(self):
        cam = Camera(40.0, 40.0, 16.0, 16.0, np.eye(3), np.zeros(3), 32, 32)
        packed = render_guide(np.zeros((0, 3)), np.zeros((0, 3)),
                              np.zeros((0, 3), dtype=np.int64), cam)
        assert packed.value.shape == (4, 32, 32)
        assert np.abs(packed.value).max() == 0.0

    def test_sphere_mask_matches_analytic_disk(self):
        # dense parametric sphere: vertex splats must reproduce the exact
        # silhouette disk f*r/sqrt(d^2-r^2) up to ~1px of footprint bleed
        verts, faces = uv_sphere(0.5, 192, 384)
        color = np.tile([0.2, 0.7, 0.4], (len(verts), 1))
        d, f, size = 2.5, 520.0, 256
        cam = Camera(f, f, size / 2, size / 2, np.eye(3),
                     np.array([0.0, 0.0, d]), size, size)
        packed = render_guide(verts, color, faces, cam).value
        alpha = packed[3]
        jj, ii = np.meshgrid(np.arange(size), np.arange(size))
        rad = np.hypot(jj + 0.5 - size / 2, ii + 0.5 - size / 2)
        disk_r = f * 0.5 / np.sqrt(d * d - 0.25)
        disk = rad <= disk_r
        mask = alpha >= 0.5
        iou = (mask & disk).sum() / (mask | disk).sum()
        assert iou >= 0.95
        # interior pixels carry the vertex color
        interior = alpha > 0.99
        assert interior.sum() > 50
        err = np.abs(packed[:3].transpose(1, 2, 0)[interior]
                     - [0.2, 0.7, 0.4]).max()
        assert err <= 2e-2

    def test_gradient_flows_to_vertex_positions(self):
        verts, _, faces, *_ = mesh_from_field(sphere_field, res=10)
        color = np.tile([1.0, 0.0, 0.0], (len(verts), 1))
        cam = Camera(40.0, 40.0, 16.0, 16.0, np.eye(3),
                     np.array([0.0, 0.0, 2.0]), 32, 32)
        v = engine.leaf(verts)
        packed = render_guide(v, color, faces, cam)
        w = np.random.default_rng(5).normal(size=packed.value.shape)
        (gv,) = grad(engine.vsum(packed * engine.constant(w)), [v])
        assert np.abs(gv).max() > 0.0

        # spot-check one coordinate against finite differences
        i, j = np.unravel_index(np.abs(gv).argmax(), gv.shape)
        h = 1e-5
        vp, vm = verts.copy(), verts.copy()
        vp[i, j] += h
        vm[i, j] -= h
        lp = (render_guide(vp, color, faces, cam).value * w).sum()
        lm = (render_guide(vm, color, faces, cam).value * w).sum()
        fd = (lp - lm) / (2 * h)
        # FD also sees the (intentionally frozen) mean-edge -> scale coupling
        assert abs(fd - gv[i, j]) / max(abs(fd), abs(gv[i, j])) < 1e-3


class TestObjExport:
    def test_obj_roundtrip_by_eye(self, tmp_path):
        verts, feats, faces, *_ = mesh_from_field(sphere_field, res=8)
        p = tmp_path / "m.obj"
        export_obj(str(p), GuideMesh(verts, faces, feats))
        lines = p.read_text().splitlines()
        nv = sum(1 for ln in lines if ln.startswith("v "))
        nf = sum(1 for ln in lines if ln.startswith("f "))
        assert nv == len(verts)
        assert nf == len(faces)
