use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::paths::grid::TimeGrid;
use crate::scalar::Real;

/// Per-path named scalars stored row-major (`n_paths x names`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxTable<F> {
    names: Vec<String>,
    data: Vec<F>,
}

impl<F: Real> AuxTable<F> {
    pub fn empty() -> Self {
        Self { names: Vec::new(), data: Vec::new() }
    }

    /// Table with one column.
    pub fn single(name: &str, column: Vec<F>) -> Self {
        Self { names: vec![name.to_string()], data: column }
    }

    /// Builds a table from per-path rows.
    pub fn from_rows(names: &[&str], rows: impl IntoIterator<Item = Vec<F>>) -> Self {
        let mut data = Vec::new();
        for row in rows {
            assert_eq!(row.len(), names.len(), "aux row width");
            data.extend(row);
        }
        Self { names: names.iter().map(|s| s.to_string()).collect(), data }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.data.len() / self.names.len()
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, path: usize) -> &[F] {
        let w = self.width();
        &self.data[path * w..(path + 1) * w]
    }

    pub fn column(&self, name: &str) -> Option<Vec<F>> {
        let j = self.position(name)?;
        let w = self.width();
        Some(self.data.iter().skip(j).step_by(w).copied().collect())
    }

    /// Adds (or replaces) a column; `column.len()` must equal the row count
    /// unless the table is still empty.
    pub fn insert(&mut self, name: &str, column: Vec<F>) {
        if self.names.is_empty() {
            *self = Self::single(name, column);
            return;
        }
        let n = self.n_rows();
        assert_eq!(column.len(), n, "aux column length");
        if let Some(j) = self.position(name) {
            let w = self.width();
            for (i, v) in column.into_iter().enumerate() {
                self.data[i * w + j] = v;
            }
            return;
        }
        let w = self.width();
        let mut data = Vec::with_capacity(n * (w + 1));
        for (i, v) in column.into_iter().enumerate() {
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
            data.push(v);
        }
        self.names.push(name.to_string());
        self.data = data;
    }
}

/// Bookkeeping attached to a simulated bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    /// Global index of the first path (bundles may hold a chunk of a run).
    pub first_path: u64,
    /// Euler steps whose drift was clamped.
    pub clip_events: u64,
    /// Paths absorbed at a barrier before the last grid node.
    pub absorbed_paths: u64,
}

/// Simulated trajectories aligned to one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle<F> {
    grid: TimeGrid<F>,
    n_paths: usize,
    values: Vec<F>,
    jump_times: Option<Vec<Vec<F>>>,
    jump_sizes: Option<Vec<Vec<F>>>,
    aux: AuxTable<F>,
    pub meta: BundleMeta,
}

/// Borrowed view of one path.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a, F> {
    pub index: usize,
    pub path_id: u64,
    pub grid: &'a TimeGrid<F>,
    pub values: &'a [F],
    pub jump_times: Option<&'a [F]>,
    pub jump_sizes: Option<&'a [F]>,
    aux_names: &'a [String],
    aux: &'a [F],
}

impl<'a, F: Real> PathView<'a, F> {
    pub fn aux(&self, name: &str) -> Option<F> {
        self.aux_names.iter().position(|n| n == name).map(|j| self.aux[j])
    }

    pub fn require_aux(&self, name: &str) -> Result<F> {
        self.aux(name).ok_or_else(|| Error::MissingAux(name.to_string()))
    }

    pub fn last(&self) -> F {
        *self.values.last().expect("non-empty path")
    }
}

impl<F: Real> PathBundle<F> {
    /// Assembles a bundle from row-major values (`n_paths x grid.len()`).
    pub fn new(grid: TimeGrid<F>, values: Vec<F>, aux: AuxTable<F>, meta: BundleMeta) -> Result<Self> {
        let width = grid.len();
        ensure!(values.len().is_multiple_of(width), "values length {} not a multiple of grid length {width}", values.len());
        let n_paths = values.len() / width;
        ensure!(
            aux.width() == 0 || aux.n_rows() == n_paths,
            "aux table has {} rows for {n_paths} paths",
            aux.n_rows()
        );
        Ok(Self { grid, n_paths, values, jump_times: None, jump_sizes: None, aux, meta })
    }

    /// Attaches exact jump epochs (and optionally sizes; unit jumps otherwise).
    pub fn with_jumps(mut self, times: Vec<Vec<F>>, sizes: Option<Vec<Vec<F>>>) -> Result<Self> {
        ensure!(times.len() == self.n_paths, "jump lists for {} paths, bundle has {}", times.len(), self.n_paths);
        let horizon = self.grid.horizon();
        for (i, list) in times.iter().enumerate() {
            ensure!(
                list.iter().all(|&t| t > F::zero() && t <= horizon) && list.windows(2).all(|w| w[0] < w[1]),
                "jump times of path {i} must be strictly increasing in (0, T]"
            );
        }
        if let Some(s) = &sizes {
            ensure!(
                s.iter().zip(&times).all(|(a, b)| a.len() == b.len()),
                "jump sizes must parallel jump times"
            );
        }
        self.jump_times = Some(times);
        self.jump_sizes = sizes;
        Ok(self)
    }

    pub fn grid(&self) -> &TimeGrid<F> {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn aux(&self) -> &AuxTable<F> {
        &self.aux
    }

    pub fn aux_column(&self, name: &str) -> Result<Vec<F>> {
        self.aux.column(name).ok_or_else(|| Error::MissingAux(name.to_string()))
    }

    pub fn insert_aux(&mut self, name: &str, column: Vec<F>) {
        self.aux.insert(name, column);
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_times.is_some()
    }

    pub fn path(&self, i: usize) -> PathView<'_, F> {
        let w = self.grid.len();
        let empty: &[F] = &[];
        PathView {
            index: i,
            path_id: self.meta.first_path + i as u64,
            grid: &self.grid,
            values: &self.values[i * w..(i + 1) * w],
            jump_times: self.jump_times.as_ref().map(|j| j[i].as_slice()),
            jump_sizes: self.jump_sizes.as_ref().map(|j| j[i].as_slice()),
            aux_names: self.aux.names(),
            aux: if self.aux.width() == 0 { empty } else { self.aux.row(i) },
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = PathView<'_, F>> + '_ {
        (0..self.n_paths).map(move |i| self.path(i))
    }

    /// Values of every path at grid node `node`.
    pub fn column(&self, node: usize) -> Vec<F> {
        let w = self.grid.len();
        self.values.iter().skip(node).step_by(w).copied().collect()
    }

    /// Final value of every path.
    pub fn terminal(&self) -> Vec<F> {
        self.column(self.grid.len() - 1)
    }

    /// Bundle on the same grid whose values are `f(t, x, path)` pointwise.
    pub fn map_values(&self, f: impl Fn(F, F, &PathView<'_, F>) -> F) -> PathBundle<F> {
        let mut values = Vec::with_capacity(self.values.len());
        for p in self.paths() {
            for (&t, &x) in self.grid.points().iter().zip(p.values) {
                values.push(f(t, x, &p));
            }
        }
        PathBundle { values, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::grid::{make_grid, Refinement};

    #[test]
    fn aux_table_insert_and_lookup() {
        let mut t = AuxTable::single("L", vec![1.0, 2.0]);
        t.insert("tau", vec![0.5, 0.7]);
        t.insert("L", vec![3.0, 4.0]);
        assert_eq!(t.row(1), &[4.0, 0.7]);
        assert_eq!(t.column("tau").unwrap(), vec![0.5, 0.7]);
        assert!(t.column("nope").is_none());
    }

    #[test]
    fn bundle_validates_shapes() {
        let g = make_grid(1.0, 2, Refinement::Uniform).unwrap();
        assert!(PathBundle::new(g.clone(), vec![0.0; 5], AuxTable::empty(), BundleMeta::default()).is_err());
        let b = PathBundle::new(g.clone(), vec![0.0; 6], AuxTable::empty(), BundleMeta::default()).unwrap();
        assert_eq!(b.n_paths(), 2);
        assert!(b.clone().with_jumps(vec![vec![0.3, 0.2], vec![]], None).is_err());
        assert!(b.clone().with_jumps(vec![vec![0.0], vec![]], None).is_err());
        assert!(b.with_jumps(vec![vec![0.2, 0.3], vec![1.0]], None).is_ok());
    }
}
