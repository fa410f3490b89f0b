//! Network topology and the spectral operators derived from it.
//!
//! A benchmark network is an undirected connected graph on `m` agents.
//! From the graph we build the lazy Metropolis weight matrix `W`, and from
//! `W` the operators the algorithms and their diagnostics need:
//!
//! * the half-Laplacian `(I - W)/2`, applied once per communication round;
//! * its symmetric square root `U` with `U^2 = (I - W)/2`, whose null space
//!   is exactly the consensus line;
//! * the Moore-Penrose pseudo-inverse `U^+`, used to recover dual iterates
//!   from their communicated surrogate.
//!
//! Everything is dense and eigendecomposition-based, sized for desk-scale
//! networks (tens to a few hundreds of agents).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Retry budget for connected-graph rejection sampling.
const CONNECT_RETRIES: u32 = 1000;

/// Eigenvalues of `(I - W)/2` at or below this are treated as the
/// consensus null space in every assembled operator. The threshold sits on
/// the `||W|| = 1` scale: it absorbs eigensolver round-off in the unit
/// eigenvalue of W (which would otherwise leak a huge reciprocal root into
/// `U^+`) while staying far below the genuine spectral values of any
/// connected network of realistic size.
const NULL_TOL: f64 = 1e-8;

/// Anything at or below this is a real PSD violation and is reported;
/// eigenvalues in `(CLAMP_ERROR, NULL_TOL]` are round-off and join the
/// null space.
const CLAMP_ERROR: f64 = -1e-9;

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("agent count {m} is too small for a {family} graph (minimum {min})")]
    TooFewAgents {
        family: &'static str,
        m: usize,
        min: usize,
    },
    #[error("edge probability must lie in (0, 1], got {p}")]
    BadEdgeProbability { p: f64 },
    #[error("connection radius must be positive, got {d}")]
    BadRadius { d: f64 },
    #[error(
        "could not sample a connected graph (family {family}, m = {m}, parameter {param}) in {retries} attempts"
    )]
    CouldNotConnect {
        family: &'static str,
        m: usize,
        param: f64,
        retries: u32,
    },
    #[error("weight matrix is not symmetric: max |W - W'| = {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error(
        "half-Laplacian has eigenvalue {eigenvalue:.3e} below the PSD tolerance; weight matrix is not a valid lazy mixing matrix"
    )]
    NotPositiveSemidefinite { eigenvalue: f64 },
    #[error("edge list is malformed: {reason}")]
    BadEdgeList { reason: String },
}

/// Undirected simple graph on agents `0..m`.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted, no self-loops.
/// Generators only return connected graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list, normalizing pair order and
    /// rejecting self-loops, duplicates, and out-of-range endpoints.
    pub fn from_edges(m: usize, raw: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut edges = Vec::with_capacity(raw.len());
        for &(a, b) in raw {
            if a == b {
                return Err(TopologyError::BadEdgeList {
                    reason: format!("self-loop at agent {a}"),
                });
            }
            if a >= m || b >= m {
                return Err(TopologyError::BadEdgeList {
                    reason: format!("edge ({a}, {b}) out of range for m = {m}"),
                });
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(TopologyError::BadEdgeList {
                reason: "duplicate edge".into(),
            });
        }
        Ok(Self { m, edges })
    }

    /// Number of agents.
    pub fn agents(&self) -> usize {
        self.m
    }

    /// Edges as sorted `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Per-agent degrees.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// True when every agent can reach every other through edges.
    pub fn is_connected(&self) -> bool {
        if self.m == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.m];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.m
    }

    /// Serializes to the edge-list text format: first line `m`, then one
    /// `i j` pair per line, 0-indexed, in sorted order.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.m);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// Parses the edge-list text format produced by [`Graph::to_edge_list`].
    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let m: usize = lines
            .next()
            .ok_or_else(|| TopologyError::BadEdgeList {
                reason: "empty input".into(),
            })?
            .trim()
            .parse()
            .map_err(|e| TopologyError::BadEdgeList {
                reason: format!("bad agent count: {e}"),
            })?;
        let mut raw = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (a, b) = match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(TopologyError::BadEdgeList {
                        reason: format!("expected `i j`, got {line:?}"),
                    })
                }
            };
            let a: usize = a.parse().map_err(|e| TopologyError::BadEdgeList {
                reason: format!("bad endpoint: {e}"),
            })?;
            let b: usize = b.parse().map_err(|e| TopologyError::BadEdgeList {
                reason: format!("bad endpoint: {e}"),
            })?;
            raw.push((a, b));
        }
        Self::from_edges(m, &raw)
    }
}

/// Erdos-Renyi graph: each of the `m(m-1)/2` pairs is an edge independently
/// with probability `p`. Disconnected draws are rejected and resampled with
/// the seed advanced, up to a fixed retry budget.
pub fn gen_erdos_renyi(m: usize, p: f64, seed: u64) -> Result<Graph, TopologyError> {
    if m < 2 {
        return Err(TopologyError::TooFewAgents {
            family: "erdos_renyi",
            m,
            min: 2,
        });
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(TopologyError::BadEdgeProbability { p });
    }
    for attempt in 0..CONNECT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph { m, edges };
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(TopologyError::CouldNotConnect {
        family: "erdos_renyi",
        m,
        param: p,
        retries: CONNECT_RETRIES,
    })
}

/// Random geometric graph: `m` points drawn uniformly in the unit square,
/// with an edge whenever two points lie within Euclidean distance `d`.
/// Disconnected draws are rejected and resampled like [`gen_erdos_renyi`].
pub fn gen_geometric(m: usize, d: f64, seed: u64) -> Result<Graph, TopologyError> {
    if m < 2 {
        return Err(TopologyError::TooFewAgents {
            family: "geometric",
            m,
            min: 2,
        });
    }
    if !(d > 0.0) {
        return Err(TopologyError::BadRadius { d });
    }
    let d2 = d * d;
    for attempt in 0..CONNECT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let pts: Vec<(f64, f64)> = (0..m)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                if dx * dx + dy * dy <= d2 {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph { m, edges };
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(TopologyError::CouldNotConnect {
        family: "geometric",
        m,
        param: d,
        retries: CONNECT_RETRIES,
    })
}

/// Cycle on `m >= 3` agents: edges `(i, i+1 mod m)`.
pub fn gen_ring(m: usize) -> Result<Graph, TopologyError> {
    if m < 3 {
        return Err(TopologyError::TooFewAgents {
            family: "ring",
            m,
            min: 3,
        });
    }
    let mut edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
    edges.push((0, m - 1));
    Graph::from_edges(m, &edges)
}

/// Path on `m >= 2` agents: edges `(i, i+1)`.
pub fn gen_line(m: usize) -> Result<Graph, TopologyError> {
    if m < 2 {
        return Err(TopologyError::TooFewAgents {
            family: "line",
            m,
            min: 2,
        });
    }
    let edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(m, &edges)
}

/// Symmetric doubly stochastic mixing matrix with spectrum in `[0, 1]`.
///
/// Built from a graph by the lazy Metropolis rule, or wrapped around an
/// externally supplied matrix after validation. The second largest
/// eigenvalue (which equals the second largest singular value here) is
/// computed once and cached; it controls every rate in the bench.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    /// Eigenvalues of `w`, descending.
    eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, columns matching `eigenvalues`.
    eigenvectors: DMatrix<f64>,
}

impl WeightMatrix {
    /// Lazy Metropolis weights for a connected graph:
    /// `M[i][j] = 1 / (1 + max(deg(i), deg(j)))` on edges, diagonal chosen so
    /// rows sum to one, then the lazy step `W = (I + M) / 2`. The halving
    /// shifts the spectrum into `[0, 1]`, so singular values and eigenvalues
    /// coincide and `I - W` is positive semidefinite.
    pub fn metropolis_lazy(graph: &Graph) -> Result<Self, TopologyError> {
        let m = graph.agents();
        let deg = graph.degrees();
        let mut w = DMatrix::<f64>::zeros(m, m);
        for &(i, j) in graph.edges() {
            let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        // lazy step: W = (I + M) / 2
        for i in 0..m {
            for j in 0..m {
                w[(i, j)] *= 0.5;
            }
            w[(i, i)] += 0.5;
        }
        Self::from_matrix(w)
    }

    /// Wraps an explicit mixing matrix, validating symmetry and running the
    /// eigendecomposition. The matrix is expected to be doubly stochastic
    /// with spectrum in `[0, 1]`; `(I - W)/2` failing PSD past round-off is
    /// reported when operators are built.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self, TopologyError> {
        if w.nrows() != w.ncols() {
            return Err(TopologyError::NotSquare {
                rows: w.nrows(),
                cols: w.ncols(),
            });
        }
        let asymmetry = (&w - w.transpose()).abs().max();
        if asymmetry > 1e-12 {
            return Err(TopologyError::NotSymmetric { asymmetry });
        }
        // symmetrize round-off so the eigendecomposition sees an exactly
        // symmetric matrix
        let sym = (&w + w.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("eigenvalues are finite")
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::<f64>::zeros(w.nrows(), w.ncols());
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            w: sym,
            eigenvalues,
            eigenvectors,
        })
    }

    /// Matrix dimension (number of agents).
    pub fn agents(&self) -> usize {
        self.w.nrows()
    }

    /// The mixing matrix itself.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Largest eigenvalue; 1 for a valid mixing matrix on a connected graph.
    pub fn largest_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Second largest eigenvalue of `W`, which for a PSD doubly stochastic
    /// matrix is also its second largest singular value. By convention 0
    /// for the degenerate single-agent network, whose spectrum has no
    /// second element.
    pub fn second_largest_eigenvalue(&self) -> f64 {
        if self.eigenvalues.len() < 2 {
            0.0
        } else {
            self.eigenvalues[1]
        }
    }

    /// Spectral gap `1 - sigma_2(W)`.
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.second_largest_eigenvalue()
    }

    /// Eigenvalues of `W`, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Serializes the matrix as CSV: `m` rows of `m` comma-separated
    /// decimals with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let m = self.agents();
        let mut out = String::new();
        for i in 0..m {
            for j in 0..m {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:.16e}", self.w[(i, j)]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form written by [`WeightMatrix::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, TopologyError> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|f| {
                        f.trim().parse::<f64>().map_err(|e| TopologyError::BadEdgeList {
                            reason: format!("bad matrix entry: {e}"),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(TopologyError::NotSquare {
                rows: m,
                cols: rows.first().map_or(0, Vec::len),
            });
        }
        let w = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        Self::from_matrix(w)
    }
}

/// Spectral operators shared by the algorithms and their diagnostics.
///
/// All four operators commute (common eigenbasis from one decomposition of
/// `(I - W)/2`): the half-Laplacian `U^2`, its root `U`, the pseudo-inverse
/// `U^+`, and the projector `Pi = I - (1/m) 1 1'` onto disagreement space.
#[derive(Debug, Clone)]
pub struct ConsensusOperators {
    m: usize,
    sigma2: f64,
    half_laplacian: DMatrix<f64>,
    u_sqrt: DMatrix<f64>,
    u_pinv: DMatrix<f64>,
}

impl ConsensusOperators {
    /// Eigendecomposes `(I - W)/2 = Q S Q'` and takes the elementwise root
    /// and reciprocal-root of `S`. Eigenvalues in `(-1e-9, 0)` are clamped
    /// to zero as round-off; at or below `-1e-9` the matrix is rejected as
    /// not PSD. Reciprocals are taken only above the `1e-10` cutoff, so the
    /// consensus null space maps to zero in `U^+`.
    pub fn from_weights(weights: &WeightMatrix) -> Result<Self, TopologyError> {
        let m = weights.agents();
        let q = &weights.eigenvectors;
        // eigenvalues of (I - W)/2 from those of W, same eigenvectors
        let s: Vec<f64> = weights
            .eigenvalues
            .iter()
            .map(|&lam| (1.0 - lam) / 2.0)
            .collect();
        let mut clamped = Vec::with_capacity(m);
        for &v in &s {
            if v <= CLAMP_ERROR {
                return Err(TopologyError::NotPositiveSemidefinite { eigenvalue: v });
            }
            clamped.push(if v <= NULL_TOL { 0.0 } else { v });
        }
        let assemble = |f: &dyn Fn(f64) -> f64| -> DMatrix<f64> {
            let d = DMatrix::from_diagonal(&DVector::from_iterator(
                m,
                clamped.iter().map(|&v| f(v)),
            ));
            q * d * q.transpose()
        };
        let half_laplacian = assemble(&|v| v);
        let u_sqrt = assemble(&|v| v.sqrt());
        let u_pinv = assemble(&|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
        Ok(Self {
            m,
            sigma2: weights.second_largest_eigenvalue(),
            half_laplacian,
            u_sqrt,
            u_pinv,
        })
    }

    /// Number of agents.
    pub fn agents(&self) -> usize {
        self.m
    }

    /// Cached second largest eigenvalue of the underlying `W`.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `(I - W)/2`, the single communication primitive.
    pub fn half_laplacian(&self) -> &DMatrix<f64> {
        &self.half_laplacian
    }

    /// Symmetric PSD root `U` with `U^2 = (I - W)/2`; `null(U) = span(1)`.
    pub fn u_sqrt(&self) -> &DMatrix<f64> {
        &self.u_sqrt
    }

    /// Moore-Penrose pseudo-inverse `U^+`.
    pub fn u_pinv(&self) -> &DMatrix<f64> {
        &self.u_pinv
    }

    /// Projects each column of the identity minus averaging: applies
    /// `Pi = I - (1/m) 1 1'` to stacked iterates, removing the consensus
    /// component of every coordinate.
    pub fn project_disagreement(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mean = x.row_mean();
        let mut out = x.clone();
        for mut row in out.row_iter_mut() {
            row -= &mean;
        }
        out
    }
}
