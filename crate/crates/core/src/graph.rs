//! Undirected graphs and their degree-normalized operators.

use std::io::BufRead;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;

/// Simple undirected graph. Edges are stored once as `(i, j)` with `i < j`;
/// the CSR adjacency holds both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: SparseMatrix,
}

impl Graph {
    /// Builds a graph from undirected pairs. Duplicates (in either
    /// orientation) collapse; self-loops and out-of-range ids are rejected.
    pub fn from_edges(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Graph("graph must have at least one node".into()));
        }
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Graph(format!("self-loop on node {a}")));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Graph(format!(
                    "edge ({a},{b}) references a node outside 0..{n_nodes}"
                )));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in &edges {
            trip.push((i, j, 1.0));
            trip.push((j, i, 1.0));
        }
        let adjacency = SparseMatrix::from_triplets(n_nodes, n_nodes, &trip)?;
        Ok(Self {
            n_nodes,
            edges,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes)
            .map(|i| self.adjacency.indptr()[i + 1] - self.adjacency.indptr()[i])
            .collect()
    }

    /// Induced subgraph on `keep` (relabelled `0..keep.len()` in the given order).
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Graph> {
        let mut map = vec![usize::MAX; self.n_nodes];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let pairs = self
            .edges
            .iter()
            .filter(|(i, j)| map[*i] != usize::MAX && map[*j] != usize::MAX)
            .map(|(i, j)| (map[*i], map[*j]));
        Graph::from_edges(keep.len(), pairs)
    }
}

/// Parses a whitespace-separated edge list with 0-based ids. Lines starting
/// with `#` and blank lines are skipped.
pub fn load_edge_list<R: BufRead>(reader: R, n_nodes: Option<usize>) -> Result<Graph> {
    let mut pairs = Vec::new();
    let mut max_id = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected two node ids, got {trimmed:?}"),
            });
        };
        let parse = |s: &str| -> Result<usize> {
            let v: i64 = s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid node id {s:?}"),
            })?;
            if v < 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("negative node id {v}"),
                });
            }
            let v = v as usize;
            if let Some(n) = n_nodes {
                if v >= n {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("node id {v} is not below declared node count {n}"),
                    });
                }
            }
            Ok(v)
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a == b {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("self-loop on node {a}"),
            });
        }
        max_id = max_id.max(a).max(b);
        pairs.push((a, b));
    }
    let n = match n_nodes {
        Some(n) => n,
        None if pairs.is_empty() => {
            return Err(Error::Graph("empty edge list and no node count given".into()))
        }
        None => max_id + 1,
    };
    Graph::from_edges(n, pairs)
}

/// Writes one `i j` line per undirected edge.
pub fn write_edge_list<W: std::io::Write>(g: &Graph, mut w: W) -> std::io::Result<()> {
    for (i, j) in g.edges() {
        writeln!(w, "{i} {j}")?;
    }
    Ok(())
}

/// 4-neighbourhood lattice with node id `row * width + col`.
pub fn grid_graph(width: usize, height: usize) -> Result<Graph> {
    if width == 0 || height == 0 {
        return Err(Error::Graph(format!("grid dimensions must be positive, got {width}x{height}")));
    }
    let mut pairs = Vec::with_capacity(2 * width * height);
    for r in 0..height {
        for c in 0..width {
            let id = r * width + c;
            if c + 1 < width {
                pairs.push((id, id + 1));
            }
            if r + 1 < height {
                pairs.push((id, id + width));
            }
        }
    }
    Graph::from_edges(width * height, pairs)
}

/// Erdős–Rényi G(n, p) sample.
pub fn random_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_edges(n, pairs)
}

fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    // isolated nodes get 0 so their rows stay finite
    g.degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect()
}

/// `D^{-1/2} A D^{-1/2}`.
pub fn normalized_adjacency(g: &Graph) -> SparseMatrix {
    let s = inv_sqrt_degrees(g);
    let trip: Vec<_> = g
        .edges()
        .iter()
        .flat_map(|&(i, j)| {
            let v = s[i] * s[j];
            [(i, j, v), (j, i, v)]
        })
        .collect();
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &trip)
        .expect("edge ids are validated at construction")
}

/// `I - D^{-1/2} A D^{-1/2}` with explicit unit diagonal.
pub fn normalized_laplacian(g: &Graph) -> SparseMatrix {
    normalized_adjacency(g)
        .shifted(-1.0, 1.0)
        .expect("normalized adjacency is square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn path_graph_from_text() {
        let g = load_edge_list(Cursor::new("0 1\n1 2"), None).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.adjacency().nnz(), 4);
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let a = load_edge_list(Cursor::new("0 1\n1 0"), None).unwrap();
        let b = load_edge_list(Cursor::new("0 1"), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tabs_and_comments_accepted() {
        let g = load_edge_list(Cursor::new("# header\n0\t1\n\n2 1\n"), Some(5)).unwrap();
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        let err = load_edge_list(Cursor::new("0 1\n2 2\n"), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load_edge_list(Cursor::new("0 1\n\n-1 2\n"), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = load_edge_list(Cursor::new("0 4\n"), Some(4)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = load_edge_list(Cursor::new("0 x\n"), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn grid_edge_counts() {
        let g = grid_graph(2, 2).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (4, 4));
        assert!(g.degrees().iter().all(|&d| d == 2));
        let g = grid_graph(1, 3).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (3, 2));
        let g = grid_graph(24, 24).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (576, 1104));
        let g = grid_graph(100, 100).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (10000, 19800));
        assert!(grid_graph(0, 3).is_err());
    }

    #[test]
    fn grid_edge_list_round_trip() {
        let g = grid_graph(24, 24).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let back = load_edge_list(Cursor::new(buf), None).unwrap();
        assert_eq!((back.n_nodes(), back.n_edges()), (576, 1104));
    }

    #[test]
    fn normalized_operators_small_cases() {
        let edge = Graph::from_edges(2, [(0, 1)]).unwrap();
        let a = normalized_adjacency(&edge).to_dense();
        assert_eq!(a.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let l = normalized_laplacian(&edge).to_dense();
        assert_eq!(l.as_slice(), &[1.0, -1.0, -1.0, 1.0]);

        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let a = normalized_adjacency(&tri);
        let l = normalized_laplacian(&tri);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(a.get(i, j), 0.0);
                    assert_eq!(l.get(i, j), 1.0);
                } else {
                    assert!((a.get(i, j) - 0.5).abs() < 1e-15);
                    assert!((l.get(i, j) + 0.5).abs() < 1e-15);
                }
            }
        }

        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a = normalized_adjacency(&star);
        for j in 1..4 {
            assert!((a.get(0, j) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_rows() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        let a = normalized_adjacency(&g);
        assert_eq!(a.row(2).count(), 0);
        let l = normalized_laplacian(&g).to_dense();
        assert_eq!(l.row(2), &[0.0, 0.0, 1.0]);
        assert!(l.as_slice().iter().all(|v| v.is_finite()));
    }
}
