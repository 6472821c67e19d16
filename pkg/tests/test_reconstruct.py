import numpy as np
import pytest

from sepformer.geometry import Axis, ScoredSeparator, SingleLine
from sepformer.reconstruct import (CellGrid, DegenerateTableError, ReconstructConfig, check_tiling,
                                   grid_to_html_structure, separators_to_grid, structure_html, threshold_filter)
from sepformer.synthdata import Distortion, TableDistribution, TableSpec, generate, sample_spec


def hline(y, x0=0.1, x1=0.9):
    return np.array([[x0, y], [x1, y]])


def vline(x, y0=0.1, y1=0.9):
    return np.array([[x, y0], [x, y1]])


def grid_of(gt):
    return separators_to_grid(gt.rows, gt.cols, gt.width, gt.height)


class TestThreshold:
    def seps(self, *scores):
        return [ScoredSeparator(s, SingleLine((0, 0), (1, 0)), Axis.ROW) for s in scores]

    def test_examples(self):
        assert [s.score for s in threshold_filter(self.seps(0.99, 0.5), 0.95)] == [0.99]
        assert len(threshold_filter(self.seps(0.99, 0.5), 0.0)) == 2
        assert threshold_filter([], 0.5) == []

    def test_stable_order(self):
        assert [s.score for s in threshold_filter(self.seps(0.97, 0.2, 0.96), 0.95)] == [0.97, 0.96]


class TestGrid:
    def test_closed_two_by_two(self):
        grid = separators_to_grid([hline(y) for y in (0.1, 0.5, 0.9)], [vline(x) for x in (0.1, 0.5, 0.9)])
        assert (grid.n_rows, grid.n_cols) == (2, 2)
        assert grid.cells == [(0, 0, 0, 0), (0, 0, 1, 1), (1, 1, 0, 0), (1, 1, 1, 1)]

    def test_top_span_from_ground_truth(self):
        grid = grid_of(generate(TableSpec(2, 2, spans=((0, 0, 0, 1),))))
        assert set(grid.cells) == {(0, 0, 0, 1), (1, 1, 0, 0), (1, 1, 1, 1)}

    def test_near_duplicates_merge(self):
        rows = [hline(0.1), hline(0.5), hline(0.505), hline(0.9)]
        grid = separators_to_grid(rows, [vline(0.1), vline(0.9)])
        assert grid.n_rows == 2

    def test_degenerate(self):
        with pytest.raises(DegenerateTableError) as err:
            separators_to_grid([hline(0.5)], [vline(0.1), vline(0.9)])
        assert err.value.to_dict()["error"] == "degenerate-table"
        assert err.value.axis == "row"
        with pytest.raises(DegenerateTableError):
            separators_to_grid([hline(0.1), hline(0.9)], [])

    def test_duplicates_do_not_rescue_degenerate(self):
        with pytest.raises(DegenerateTableError):
            separators_to_grid([hline(0.5), hline(0.503)], [vline(0.1), vline(0.9)])

    def test_adding_full_separator_is_monotone(self):
        rng = np.random.default_rng(0)
        rows = [hline(0.1), hline(0.9)]
        cols = [vline(0.1), vline(0.9)]
        last = separators_to_grid(rows, cols).n_rows
        for y in rng.uniform(0.15, 0.85, size=6):
            rows.append(hline(float(y)))
            n = separators_to_grid(rows, cols).n_rows
            assert n >= last
            last = n

    def test_partial_separator_creates_span(self):
        rows = [hline(0.1), hline(0.5, 0.1, 0.5), hline(0.9)]
        cols = [vline(0.1), vline(0.5), vline(0.9)]
        assert set(separators_to_grid(rows, cols).cells) == {(0, 0, 0, 0), (1, 1, 0, 0), (0, 1, 1, 1)}

    def test_l_shape_split_with_warning(self):
        # a missing interior piece on two edges around one corner leaves an L-shaped region
        rows = [hline(0.1), hline(0.5, 0.1, 0.5), hline(0.9)]
        cols = [vline(0.1), vline(0.5, 0.5, 0.9), vline(0.9)]
        grid = separators_to_grid(rows, cols)
        assert grid.warnings
        check_tiling(grid.cells, grid.n_rows, grid.n_cols)

    def test_noise_keeps_tiling(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            rows = [hline(0.05, 0.05, 0.95), hline(0.95, 0.05, 0.95)]
            cols = [vline(0.05, 0.05, 0.95), vline(0.95, 0.05, 0.95)]
            for _ in range(int(rng.integers(0, 6))):
                a, b = np.sort(rng.uniform(0.05, 0.95, 2))
                rows.append(hline(float(rng.uniform(0.1, 0.9)), a, b))
            for _ in range(int(rng.integers(0, 6))):
                a, b = np.sort(rng.uniform(0.05, 0.95, 2))
                cols.append(vline(float(rng.uniform(0.1, 0.9)), a, b))
            grid = separators_to_grid(rows, cols)
            check_tiling(grid.cells, grid.n_rows, grid.n_cols)

    @pytest.mark.parametrize("seed", range(25))
    def test_round_trip(self, seed):
        gt = generate(sample_spec(TableDistribution(spans_prob=0.6, distortion_prob=0.6), seed))
        grid = grid_of(gt)
        assert (grid.n_rows, grid.n_cols) == (gt.n_rows, gt.n_cols)
        assert sorted(grid.cells) == sorted(c.as_tuple() for c in gt.cells)

    def test_tiling_violation(self):
        with pytest.raises(AssertionError):
            CellGrid([], [], [(0, 0, 0, 0)], 1, 2)

    def test_config_guards(self):
        with pytest.raises(ValueError):
            ReconstructConfig(merge_tol=0)
        with pytest.raises(ValueError):
            ReconstructConfig(cover_frac=1.5)

    def test_rotated_table(self):
        gt = generate(TableSpec(4, 3, distortion=Distortion(rotation_deg=8.0), seed=2))
        assert len(grid_of(gt).cells) == 12


class TestHtml:
    def test_single_cell(self):
        grid = CellGrid([], [], [(0, 0, 0, 0)], 1, 1)
        assert structure_html(grid) == "<table><tr><td></td></tr></table>"

    def test_two_by_two(self):
        grid = CellGrid([], [], [(0, 0, 0, 0), (0, 0, 1, 1), (1, 1, 0, 0), (1, 1, 1, 1)], 2, 2)
        assert structure_html(grid) == "<table>" + "<tr><td></td><td></td></tr>" * 2 + "</table>"

    def test_top_span(self):
        grid = grid_of(generate(TableSpec(2, 2, spans=((0, 0, 0, 1),))))
        tree = grid_to_html_structure(grid)
        assert [c.label for c in tree.children[0].children] == ["td colspan=2"]
        assert structure_html(grid) == '<table><tr><td colspan="2"></td></tr><tr><td></td><td></td></tr></table>'

    def test_row_span_only_in_top_row(self):
        grid = CellGrid([], [], [(0, 1, 0, 0), (0, 0, 1, 1), (1, 1, 1, 1)], 2, 2)
        tree = grid_to_html_structure(grid)
        assert [len(tr.children) for tr in tree.children] == [2, 1]
        assert tree.children[0].children[0].attrs == {"rowspan": 2}
