//! Vertex-degree and edge-count diagnostics of a matrix's off-diagonal support.

use serde::Serialize;

use crate::matrix::SymMatrix;

pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphDiagnostics {
    pub degree_per_vertex: Vec<usize>,
    pub max_degree: usize,
    /// Sum of vertex degrees; each undirected edge is counted twice.
    pub edge_count: usize,
}

impl GraphDiagnostics {
    /// Fraction of off-diagonal pairs that are nonzero.
    pub fn density(&self) -> f64 {
        let p = self.degree_per_vertex.len();
        if p < 2 {
            return 0.0;
        }
        self.edge_count as f64 / (p * (p - 1)) as f64
    }
}

pub fn graph_diagnostics(m: &SymMatrix, zero_tol: f64) -> GraphDiagnostics {
    let data = m.data();
    let p = m.dim();
    let degree_per_vertex: Vec<usize> = (0..p)
        .map(|j| {
            (0..p)
                .filter(|&i| i != j && data[(i, j)].abs() > zero_tol)
                .count()
        })
        .collect();
    let max_degree = degree_per_vertex.iter().copied().max().unwrap_or(0);
    let edge_count = degree_per_vertex.iter().sum();
    GraphDiagnostics {
        degree_per_vertex,
        max_degree,
        edge_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MatrixRole;
    use nalgebra::DMatrix;

    fn sym(m: DMatrix<f64>) -> SymMatrix {
        SymMatrix::new(m, MatrixRole::Precision).unwrap()
    }

    #[test]
    fn identity_has_no_edges() {
        let d = graph_diagnostics(&sym(DMatrix::identity(4, 4)), DEFAULT_ZERO_TOL);
        assert_eq!(d.degree_per_vertex, vec![0; 4]);
        assert_eq!((d.max_degree, d.edge_count), (0, 0));
    }

    #[test]
    fn dense_is_complete() {
        let d = graph_diagnostics(&sym(DMatrix::from_element(4, 4, 0.3)), DEFAULT_ZERO_TOL);
        assert_eq!((d.max_degree, d.edge_count), (3, 12));
        assert_eq!(d.density(), 1.0);
    }

    #[test]
    fn tridiagonal_band() {
        let m = DMatrix::from_fn(5, 5, |i, j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        let d = graph_diagnostics(&sym(m), DEFAULT_ZERO_TOL);
        assert_eq!(d.degree_per_vertex, vec![1, 2, 2, 2, 1]);
        assert_eq!(d.edge_count, 8);
    }

    #[test]
    fn scale_invariance() {
        let m = DMatrix::from_fn(5, 5, |i, j| {
            1.0 / (1.0 + (i + 2 * j) as f64) + if i == j { 1.0 } else { 0.0 }
        });
        let m = (&m + m.transpose()) * 0.5;
        let tol = 0.05;
        let base = graph_diagnostics(&sym(m.clone()), tol);
        for c in [0.01, 3.0, 1e4] {
            assert_eq!(graph_diagnostics(&sym(&m * c), tol * c), base);
        }
    }
}
