import numpy as np
import pytest

from stclust.panel import (
    AdjacencyGraph,
    PanelData,
    gearys_c,
    load_adjacency,
    load_panel,
    morans_i,
    permute_panel,
    panel_time_slice,
    standardize,
    unstandardize,
    write_adjacency_csv,
    write_panel_csv,
)
from stclust.simulate import grid_unit_ids, rook_grid_graph

from conftest import path_graph


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadPanel:
    def test_small_panel(self, tmp_path):
        f = tmp_path / "p.csv"
        write_lines(f, [
            "unit,time,y,x1",
            "a,2001,1.0,0.5",
            "a,2000,2.0,0.25",
            "b,2000,3.0,-1.0",
            "b,2001,4.0,0.0",
        ])
        data = load_panel(f)
        assert data.n_units == 2 and data.n_times == 2 and data.n_predictors == 1
        assert data.unit_ids == ["a", "b"]
        assert data.times == [2000, 2001]  # sorted ascending
        assert np.allclose(data.x[:, :, 0], 1.0)
        assert data.y[0, 1] == 1.0 and data.x[0, 1, 1] == 0.5

    def test_duplicate_row(self, tmp_path):
        f = tmp_path / "p.csv"
        write_lines(f, ["unit,time,y,x1", "a,1,1,1", "a,1,2,2"])
        with pytest.raises(ValueError, match="duplicate"):
            load_panel(f)

    def test_incomplete_panel(self, tmp_path):
        f = tmp_path / "p.csv"
        write_lines(f, ["unit,time,y,x1", "a,1,1,1", "a,2,1,1", "b,1,1,1"])
        with pytest.raises(ValueError, match="incomplete panel"):
            load_panel(f)

    def test_non_numeric(self, tmp_path):
        f = tmp_path / "p.csv"
        write_lines(f, ["unit,time,y,x1", "a,1,oops,1"])
        with pytest.raises(ValueError, match="non-numeric"):
            load_panel(f)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("", encoding="utf-8")
        with pytest.raises(ValueError, match="empty"):
            load_panel(f)

    def test_application_scale_layout(self, tmp_path):
        # 110 units x 13 years x 7 predictors, the target application's shape
        rng = np.random.default_rng(5)
        x = np.concatenate(
            [np.ones((110, 13, 1)), rng.standard_normal((110, 13, 7))], axis=2
        )
        data = PanelData(
            unit_ids=[f"prov{i}" for i in range(110)],
            times=list(range(2005, 2018)),
            y=rng.standard_normal((110, 13)),
            x=x,
        )
        f = tmp_path / "big.csv"
        write_panel_csv(data, f)
        back = load_panel(f)
        assert back.n_units == 110 and back.n_times == 13 and back.n_predictors == 7
        assert np.allclose(back.y, data.y) and np.allclose(back.x, data.x)

    def test_intercept_enforced(self):
        with pytest.raises(ValueError, match="intercept"):
            PanelData(["a"], [1], np.ones((1, 1)), np.full((1, 1, 1), 2.0))


class TestLoadAdjacency:
    def test_single_edge(self, tmp_path):
        f = tmp_path / "a.csv"
        write_lines(f, ["unit_a,unit_b", "a,b"])
        g = load_adjacency(f, ["a", "b"])
        assert g.n == 2 and g.edges == ((0, 1),)
        assert list(g.neighbor_counts) == [1, 1]

    def test_self_loop(self, tmp_path):
        f = tmp_path / "a.csv"
        write_lines(f, ["unit_a,unit_b", "a,a"])
        with pytest.raises(ValueError, match="self-loop"):
            load_adjacency(f, ["a", "b"])

    def test_unknown_unit(self, tmp_path):
        f = tmp_path / "a.csv"
        write_lines(f, ["unit_a,unit_b", "a,z"])
        with pytest.raises(ValueError, match="unknown unit"):
            load_adjacency(f, ["a", "b"])

    def test_duplicate_edges_warn(self, tmp_path):
        f = tmp_path / "a.csv"
        write_lines(f, ["unit_a,unit_b", "a,b", "b,a"])
        with pytest.warns(UserWarning, match="duplicate"):
            g = load_adjacency(f, ["a", "b"])
        assert g.n_edges == 1

    def test_rook_grid_degrees(self, tmp_path):
        g = rook_grid_graph(10, 10)
        ids = grid_unit_ids(10, 10)
        f = tmp_path / "grid.csv"
        write_adjacency_csv(g, ids, f)
        back = load_adjacency(f, ids)
        assert back.n == 100
        assert back.neighbor_counts[0] == 2          # corner
        assert back.neighbor_counts[5 * 10 + 5] == 4  # interior
        assert back.edges == g.edges


class TestStandardize:
    def test_single_unit_two_times(self):
        data = PanelData(["a"], [1, 2], np.array([[1.0, 3.0]]),
                         np.ones((1, 2, 1)))
        out, scales = standardize(data)
        # sample sd with denominator I*T - 1 = 1 gives sd sqrt(2)
        assert np.allclose(out.y, [[-1 / np.sqrt(2), 1 / np.sqrt(2)]])
        assert scales.y_mean == 2.0 and np.isclose(scales.y_sd, np.sqrt(2))

    def test_idempotent(self, rng):
        y = rng.standard_normal((4, 5))
        x = np.concatenate([np.ones((4, 5, 1)), rng.standard_normal((4, 5, 2))],
                           axis=2)
        data = PanelData(list("abcd"), list(range(5)), y, x)
        once, _ = standardize(data)
        twice, _ = standardize(once)
        assert np.allclose(once.y, twice.y, atol=1e-12)
        assert np.allclose(once.x, twice.x, atol=1e-12)

    def test_zero_variance(self):
        x = np.ones((2, 2, 2))  # constant predictor column
        data = PanelData(["a", "b"], [1, 2], np.array([[1., 2.], [3., 4.]]), x)
        with pytest.raises(ValueError, match="zero variance"):
            standardize(data)

    def test_round_trip(self, rng):
        y = rng.standard_normal((6, 4)) * 3 + 1
        x = np.concatenate([np.ones((6, 4, 1)),
                            2 * rng.standard_normal((6, 4, 3)) - 1], axis=2)
        data = PanelData([f"u{i}" for i in range(6)], list(range(4)), y, x)
        out, scales = standardize(data)
        back = unstandardize(out, scales)
        assert np.allclose(back.y, data.y, atol=1e-10)
        assert np.allclose(back.x, data.x, atol=1e-10)


def checkerboard():
    graph = rook_grid_graph(2, 2)
    values = np.array([1.0, -1.0, -1.0, 1.0])
    return values, graph


class TestSpatialAutocorrelation:
    def test_checkerboard_moran(self):
        values, graph = checkerboard()
        assert abs(morans_i(values, graph) - (-1.0)) < 1e-12

    def test_checkerboard_geary(self):
        values, graph = checkerboard()
        assert abs(gearys_c(values, graph) - 1.5) < 1e-12

    def test_constant_input(self):
        _, graph = checkerboard()
        with pytest.raises(ValueError, match="constant"):
            morans_i(np.ones(4), graph)
        with pytest.raises(ValueError, match="constant"):
            gearys_c(np.ones(4), graph)

    def test_empty_graph(self):
        g = AdjacencyGraph.from_edges(3, [])
        with pytest.raises(ValueError, match="empty graph"):
            morans_i(np.array([1.0, 2.0, 3.0]), g)

    def test_location_scale_invariance(self, rng):
        graph = rook_grid_graph(4, 3)
        for _ in range(20):
            v = rng.standard_normal(12)
            shift, scale = rng.normal(), rng.uniform(0.1, 5.0)
            for stat in (morans_i, gearys_c):
                assert abs(stat(v, graph) - stat(scale * v + shift, graph)) < 1e-10

    def test_permutation_invariance(self, rng):
        from stclust.spatial import apply_permutation

        graph = rook_grid_graph(3, 4)
        v = rng.standard_normal(12)
        order = rng.permutation(12)
        permuted = apply_permutation(graph, order)
        assert abs(morans_i(v, graph) - morans_i(v[order], permuted)) < 1e-12
        assert abs(gearys_c(v, graph) - gearys_c(v[order], permuted)) < 1e-12


def test_permute_panel_and_slice(rng):
    y = rng.standard_normal((3, 4))
    x = np.concatenate([np.ones((3, 4, 1)), rng.standard_normal((3, 4, 1))], axis=2)
    data = PanelData(["a", "b", "c"], [1, 2, 3, 4], y, x)
    out = permute_panel(data, np.array([2, 0, 1]))
    assert out.unit_ids == ["c", "a", "b"]
    assert np.array_equal(out.y[0], y[2])
    sl = panel_time_slice(data, 2)
    assert sl.times == [1, 2] and sl.y.shape == (3, 2)
