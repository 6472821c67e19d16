"""From separators to a cell grid, HTML structure and evaluation scores.

Ground-truth separators of a table with spanning cells rebuild its exact
grid. Dropping one separator shows how the adjacency relation metric and
the tree-edit structure score react.

    python demos/grid_reconstruction.py
"""

from sepformer.metrics import adjacency_prf, grid_teds
from sepformer.reconstruct import DegenerateTableError, separators_to_grid, structure_html
from sepformer.synthdata import Distortion, TableSpec, generate

gt = generate(TableSpec(4, 4, spans=((0, 0, 1, 3), (2, 3, 0, 0)), distortion=Distortion(rotation_deg=2.0),
                        seed=5))
grid = separators_to_grid(gt.rows, gt.cols, gt.width, gt.height)
print(f"rebuilt {grid.n_rows}x{grid.n_cols} grid with {len(grid.cells)} cells "
      f"(ground truth {len(gt.cells)} cells)")
print(structure_html(grid))

# drop the separator under the header row: header and first body row merge
rows = sorted(gt.rows, key=lambda s: s.line.coords()[1])
broken = separators_to_grid([rows[0]] + rows[2:], gt.cols, gt.width, gt.height)
print(f"\nwithout one row separator: {broken.n_rows}x{broken.n_cols}, {len(broken.cells)} cells")
prf = adjacency_prf(broken, grid)
print(f"adjacency precision {prf.precision:.3f} recall {prf.recall:.3f} F1 {prf.f1:.3f}")
print(f"TEDS-Struct {grid_teds(broken, grid):.3f}  (self: {grid_teds(grid, grid):.3f})")

try:
    separators_to_grid(rows[:1], gt.cols, gt.width, gt.height)
except DegenerateTableError as err:
    print(f"\nwith a single row separator: {err}")
