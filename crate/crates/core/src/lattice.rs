//! Five-point Helmholtz stencil matrices, sparsity patterns, supernode
//! layouts and self-contained local problems.
//!
//! Local problems are built intrinsically from the stencil: the region around
//! the decoupled node is enumerated directly in relative coordinates, so no
//! global grid is needed. Global matrices ([`build_helmholtz`]) use row-major
//! node order and drop couplings to off-grid nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parameters of a five-point Helmholtz stencil on a `width × height` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilSpec {
    pub lambda: f64,
    pub width: usize,
    pub height: usize,
}

impl StencilSpec {
    pub fn new(lambda: f64, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            lambda,
            width,
            height,
        })
    }

    /// Diagonal value of the stencil, `λ - 4`.
    pub fn diagonal(&self) -> f64 {
        self.lambda - 4.0
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    /// Row-major index of grid point `(x, y)`.
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Symmetric set of admissible nonzero positions, stored as unordered pairs
/// `(i, j)` with `i <= j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    entries: BTreeSet<(usize, usize)>,
}

impl SparsityPattern {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeSet::new(),
        }
    }

    /// Pattern of the nonzero entries of a dense symmetric matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut pattern = Self::new(a.nrows());
        for j in 0..a.ncols() {
            for i in 0..=j {
                if a[(i, j)] != 0.0 || a[(j, i)] != 0.0 {
                    pattern.entries.insert((i, j));
                }
            }
        }
        pattern
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of independent entries, i.e. unordered pairs including the diagonal.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.dim || j >= self.dim {
            return Err(Error::invalid(format!(
                "pattern position ({i}, {j}) outside dimension {}",
                self.dim
            )));
        }
        self.entries.insert((i.min(j), i.max(j)));
        Ok(())
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.contains(&(i.min(j), i.max(j)))
    }

    /// Entries in ascending `(i, j)` order with `i <= j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }

    pub fn is_subset(&self, other: &SparsityPattern) -> bool {
        self.dim == other.dim && self.entries.is_subset(&other.entries)
    }

    /// Copy of `a` with every position outside the pattern set to zero.
    pub fn mask(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        for (i, j) in self.iter() {
            out[(i, j)] = a[(i, j)];
            out[(j, i)] = a[(i, j)];
        }
        out
    }

    /// True when every nonzero of `a` lies inside the pattern.
    pub fn admits(&self, a: &DMatrix<f64>) -> bool {
        (0..a.nrows())
            .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
            .all(|(i, j)| a[(i, j)] == 0.0 || self.contains(i, j))
    }
}

/// Removes every off-diagonal coupling of node `c`, keeping `(c, c)`.
pub fn decoupled_pattern(base: &SparsityPattern, c: usize) -> Result<SparsityPattern> {
    if c >= base.dim {
        return Err(Error::invalid(format!(
            "decoupled node {c} outside dimension {}",
            base.dim
        )));
    }
    if !base.contains(c, c) {
        return Err(Error::invalid(format!(
            "pattern has no diagonal entry for node {c}"
        )));
    }
    let entries = base
        .entries
        .iter()
        .copied()
        .filter(|&(i, j)| i == j || (i != c && j != c))
        .collect();
    Ok(SparsityPattern {
        dim: base.dim,
        entries,
    })
}

/// Symmetric sparse matrix holding its upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparse {
    dim: usize,
    upper: BTreeMap<(usize, usize), f64>,
}

impl SymmetricSparse {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper
            .get(&(i.min(j), i.max(j)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Stored upper-triangle entries `(i, j, value)` with `i <= j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn pattern(&self) -> SparsityPattern {
        SparsityPattern {
            dim: self.dim,
            entries: self.upper.keys().copied().collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        out
    }
}

/// Assembles the five-point Helmholtz matrix on the grid with Dirichlet
/// truncation at the edges.
pub fn build_helmholtz(spec: &StencilSpec) -> Result<SymmetricSparse> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    let mut upper = BTreeMap::new();
    for y in 0..spec.height {
        for x in 0..spec.width {
            let k = spec.index(x, y);
            upper.insert((k, k), spec.diagonal());
            if x + 1 < spec.width {
                upper.insert((k, spec.index(x + 1, y)), 1.0);
            }
            if y + 1 < spec.height {
                upper.insert((k, spec.index(x, y + 1)), 1.0);
            }
        }
    }
    Ok(SymmetricSparse {
        dim: spec.node_count(),
        upper,
    })
}

/// Parity signs `(-1)^(x+y)` in row-major order.
///
/// With `D = diag(signs)`, `-D A(λ) D = A(8 - λ)` for the five-point stencil.
pub fn checkerboard_diagonal(width: usize, height: usize) -> Result<Vec<f64>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok((0..height)
        .flat_map(|y| (0..width).map(move |x| if (x + y) % 2 == 0 { 1.0 } else { -1.0 }))
        .collect())
}

/// Rectangular `p × q` supernode dimensions. `(1, 1)` is the scalar case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SupernodeDims {
    pub p: usize,
    pub q: usize,
}

impl SupernodeDims {
    pub const SCALAR: SupernodeDims = SupernodeDims { p: 1, q: 1 };

    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::invalid(format!(
                "supernode dimensions must be positive, got {p}x{q}"
            )));
        }
        Ok(Self { p, q })
    }

    pub fn size(&self) -> usize {
        self.p * self.q
    }

    pub fn is_scalar(&self) -> bool {
        self.size() == 1
    }
}

/// Tiling of a set of nodes by `p × q` supernodes.
#[derive(Debug, Clone)]
pub struct SupernodeLayout {
    pub dims: SupernodeDims,
    /// Supernode grid coordinates.
    pub supernode_coords: Vec<(i64, i64)>,
    /// Member nodes of every supernode, `p·q` each.
    pub node_of_supernode: Vec<Vec<usize>>,
    pub supernode_of_node: Vec<usize>,
    /// Unordered adjacent supernode pairs `(s, t)` with `s < t`.
    pub adjacency: BTreeSet<(usize, usize)>,
}

impl SupernodeLayout {
    /// Builds the layout over an explicit list of node coordinates. Every node
    /// must belong to a supernode that is fully present.
    pub fn from_coords(dims: SupernodeDims, coords: &[(i64, i64)]) -> Result<Self> {
        let (p, q) = (dims.p as i64, dims.q as i64);
        let mut index_of: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        let mut node_of_supernode: Vec<Vec<usize>> = Vec::new();
        let mut supernode_coords = Vec::new();
        let mut supernode_of_node = vec![0; coords.len()];
        for (node, &(x, y)) in coords.iter().enumerate() {
            let key = (x.div_euclid(p), y.div_euclid(q));
            let s = *index_of.entry(key).or_insert_with(|| {
                node_of_supernode.push(Vec::new());
                supernode_coords.push(key);
                node_of_supernode.len() - 1
            });
            node_of_supernode[s].push(node);
            supernode_of_node[node] = s;
        }
        if let Some(bad) = node_of_supernode
            .iter()
            .position(|m| m.len() != dims.size())
        {
            return Err(Error::invalid(format!(
                "supernode at {:?} is incomplete ({} of {} members)",
                supernode_coords[bad],
                node_of_supernode[bad].len(),
                dims.size()
            )));
        }
        let mut adjacency = BTreeSet::new();
        for (s, &(sx, sy)) in supernode_coords.iter().enumerate() {
            for nb in [(sx + 1, sy), (sx, sy + 1)] {
                if let Some(&t) = index_of.get(&nb) {
                    adjacency.insert((s.min(t), s.max(t)));
                }
            }
        }
        Ok(Self {
            dims,
            supernode_coords,
            node_of_supernode,
            supernode_of_node,
            adjacency,
        })
    }

    /// Supernode fill: all pairs within a supernode plus all pairs between
    /// adjacent supernodes.
    pub fn fill_pattern(&self) -> SparsityPattern {
        let mut pattern = SparsityPattern::new(self.supernode_of_node.len());
        let mut add_block = |a: &[usize], b: &[usize]| {
            for &i in a {
                for &j in b {
                    pattern.entries.insert((i.min(j), i.max(j)));
                }
            }
        };
        for members in &self.node_of_supernode {
            add_block(members, members);
        }
        for &(s, t) in &self.adjacency {
            add_block(&self.node_of_supernode[s], &self.node_of_supernode[t]);
        }
        pattern
    }
}

/// A self-contained single-node decoupling problem on a local region.
///
/// Nodes are ordered interior first, then boundary, so the interior rows of a
/// local-form matrix are its leading rows.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub a_ll: DMatrix<f64>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Index of the node being decoupled.
    pub decoupled: usize,
    pub target_pattern: SparsityPattern,
    /// Grid coordinates relative to the decoupled node.
    pub coords: Vec<(i64, i64)>,
    pub lambda: f64,
    pub hops: usize,
    pub supernode: SupernodeDims,
}

impl LocalProblem {
    pub fn n_local(&self) -> usize {
        self.a_ll.nrows()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Number of independent entries of the target pattern.
    pub fn n_a_tilde(&self) -> usize {
        self.target_pattern.len()
    }

    /// Number of free scalar unknowns `n_Ã + n_I·n_L`.
    pub fn n_unknowns(&self) -> usize {
        self.n_a_tilde() + self.n_interior() * self.n_local()
    }
}

fn diamond(radius: i64) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    for dy in -radius..=radius {
        let span = radius - dy.abs();
        for dx in -span..=span {
            pts.push((dx, dy));
        }
    }
    pts
}

fn hop_order_key(&(dx, dy): &(i64, i64)) -> (i64, i64, i64) {
    (dx.abs() + dy.abs(), dy, dx)
}

/// Scalar local problem: all nodes within `m` hops of the decoupled node.
pub fn extract_local_scalar(m: usize, lambda: f64) -> Result<LocalProblem> {
    extract_local_supernode(m, 1, 1, lambda)
}

/// Local problem on a grid of `p × q` supernodes: all supernodes within `m`
/// supernode hops of the one holding the decoupled node.
///
/// Interior nodes are the members of supernodes at distance `< m`; boundary
/// nodes those at distance exactly `m`. The target pattern is the supernode
/// fill with the decoupled node's couplings removed. Filled positions that
/// the raw stencil leaves empty are explicit zeros in `a_ll`.
pub fn extract_local_supernode(m: usize, p: usize, q: usize, lambda: f64) -> Result<LocalProblem> {
    if m == 0 {
        return Err(Error::invalid("hop radius m must be at least 1"));
    }
    let dims = SupernodeDims::new(p, q)?;
    let radius = m as i64;

    // (supernode key, (within-y, within-x), (x, y))
    type Keyed = ((i64, i64, i64), (i64, i64), (i64, i64));
    let mut nodes: Vec<Keyed> = Vec::new();
    for s in diamond(radius) {
        let key = hop_order_key(&s);
        for j in 0..q as i64 {
            for i in 0..p as i64 {
                let coord = (s.0 * p as i64 + i, s.1 * q as i64 + j);
                nodes.push((key, (j, i), coord));
            }
        }
    }
    nodes.sort();
    let coords: Vec<(i64, i64)> = nodes.iter().map(|n| n.2).collect();
    let n_local = coords.len();
    let (interior, boundary): (Vec<usize>, Vec<usize>) =
        (0..n_local).partition(|&k| nodes[k].0 .0 < radius);

    let position: HashMap<(i64, i64), usize> =
        coords.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut a_ll = DMatrix::zeros(n_local, n_local);
    for (k, &(x, y)) in coords.iter().enumerate() {
        a_ll[(k, k)] = lambda - 4.0;
        for nb in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if let Some(&l) = position.get(&nb) {
                a_ll[(k, l)] = 1.0;
            }
        }
    }

    let layout = SupernodeLayout::from_coords(dims, &coords)?;
    let decoupled = 0;
    debug_assert_eq!(coords[decoupled], (0, 0));
    let target_pattern = decoupled_pattern(&layout.fill_pattern(), decoupled)?;

    Ok(LocalProblem {
        a_ll,
        interior,
        boundary,
        decoupled,
        target_pattern,
        coords,
        lambda,
        hops: m,
        supernode: dims,
    })
}
