//! Gauss–Lobatto–Legendre discretization of a box mesh.
//!
//! The domain is the unit cube, split into `ex*ey*ez` axis-aligned hexahedral
//! elements, each carrying an `nx1^3` tensor-product GLL node grid. Storage
//! is element-local with the i index fastest; continuity across element
//! boundaries is restored by summing shared nodes (see the gather–scatter
//! kernel), which duplicates storage at faces, edges and corners.
//!
//! Because the element map is affine, the metric tensor of the stiffness
//! operator is diagonal per point; the off-diagonal factors are stored (and
//! applied by the operator) anyway, so the operator code matches the general
//! deformed-element form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mesh extent: element counts per direction and nodes per element edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub ex: u32,
    pub ey: u32,
    pub ez: u32,
    pub nx1: u32,
}

impl MeshSpec {
    pub fn new(ex: u32, ey: u32, ez: u32, nx1: u32) -> Result<Self> {
        let spec = MeshSpec { ex, ey, ez, nx1 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ex == 0 || self.ey == 0 || self.ez == 0 {
            return Err(Error::Mesh(format!(
                "element counts must be positive, got {self}"
            )));
        }
        if !(2..=32).contains(&self.nx1) {
            return Err(Error::Mesh(format!(
                "nx1 must be in [2, 32], got {}",
                self.nx1
            )));
        }
        Ok(())
    }

    pub fn nel(&self) -> usize {
        self.ex as usize * self.ey as usize * self.ez as usize
    }

    /// Local points per element.
    pub fn pel(&self) -> usize {
        (self.nx1 as usize).pow(3)
    }

    /// Total local points (duplicates included).
    pub fn npts(&self) -> usize {
        self.nel() * self.pel()
    }
}

impl fmt::Display for MeshSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.ex, self.ey, self.ez, self.nx1)
    }
}

impl FromStr for MeshSpec {
    type Err = Error;

    /// Parses `"ex,ey,ez,nx1"`, e.g. `"2,2,2,8"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Mesh(format!(
                "mesh spec must be ex,ey,ez,nx1 — got `{s}`"
            )));
        }
        let mut vals = [0u32; 4];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| Error::Mesh(format!("bad mesh spec component `{p}` in `{s}`")))?;
        }
        MeshSpec::new(vals[0], vals[1], vals[2], vals[3])
    }
}

/// One-dimensional GLL reference data on [-1, 1].
#[derive(Clone, Debug)]
pub struct Gll {
    pub nx1: usize,
    /// Nodes, ascending, endpoints exactly -1 and 1.
    pub nodes: Vec<f64>,
    /// Quadrature weights (sum to 2).
    pub weights: Vec<f64>,
    /// Differentiation matrix, row-major: (D u)_i = sum_j D[i*nx1+j] u_j.
    pub d: Vec<f64>,
}

/// Legendre P_n(x) and P_{n-1}(x) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    debug_assert!(n >= 1);
    let (mut pm, mut p) = (1.0, x); // P_0, P_1
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * p - k as f64 * pm) / (k + 1) as f64;
        pm = p;
        p = next;
    }
    (p, pm)
}

/// Computes GLL nodes, weights and the differentiation matrix.
///
/// Interior nodes are the roots of P'_N (N = nx1-1), found by Newton from a
/// Chebyshev initial guess; since d/dx[(1-x^2)P'_N] = -N(N+1)P_N, the Newton
/// step reduces to (P_{N-1} - x P_N) / ((N+1) P_N), which has no endpoint
/// singularity. The node set is symmetrized so x_{N-k} = -x_k exactly.
pub fn gll_setup(nx1: u32) -> Result<Gll> {
    if !(2..=32).contains(&nx1) {
        return Err(Error::Mesh(format!("nx1 must be in [2, 32], got {nx1}")));
    }
    let nx1 = nx1 as usize;
    let n = nx1 - 1; // polynomial degree

    let mut nodes = vec![0.0; nx1];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    for k in 1..n {
        let mut x = -(std::f64::consts::PI * k as f64 / n as f64).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (pn, pnm1) = legendre_pair(n, x);
            let step = (pnm1 - x * pn) / ((n + 1) as f64 * pn);
            x += step;
            if step.abs() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::GllNoConvergence { nx1 });
        }
        nodes[k] = x;
    }
    // enforce exact symmetry (Newton results agree only to roundoff)
    for k in 0..nx1 / 2 {
        let s = 0.5 * (nodes[n - k] - nodes[k]);
        nodes[k] = -s;
        nodes[n - k] = s;
    }
    if nx1 % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let scale = (n * (n + 1)) as f64;
    let pn_at: Vec<f64> = nodes.iter().map(|&x| legendre_pair(n, x).0).collect();
    let weights: Vec<f64> = pn_at.iter().map(|&p| 2.0 / (scale * p * p)).collect();

    let mut d = vec![0.0; nx1 * nx1];
    for i in 0..nx1 {
        for j in 0..nx1 {
            d[i * nx1 + j] = if i == j {
                if i == 0 {
                    -scale / 4.0
                } else if i == n {
                    scale / 4.0
                } else {
                    0.0
                }
            } else {
                pn_at[i] / (pn_at[j] * (nodes[i] - nodes[j]))
            };
        }
    }

    Ok(Gll {
        nx1,
        nodes,
        weights,
        d,
    })
}

/// Duplicate-node groups: local indices sharing a global node, one group per
/// shared node, groups ordered by global id and members ascending. Nodes
/// stored exactly once have no group.
#[derive(Clone, Debug, Default)]
pub struct GsMap {
    groups: Vec<Vec<u32>>,
}

impl GsMap {
    pub fn groups(&self) -> &[Vec<u32>] {
        &self.groups
    }

    /// Summation adds needed for one gather-scatter sweep.
    pub fn add_count(&self) -> u64 {
        self.groups.iter().map(|g| g.len() as u64 - 1).sum()
    }
}

/// Fully assembled discretization: reference data, per-point metric factors,
/// connectivity, and boundary mask.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub spec: MeshSpec,
    pub gll: Gll,
    /// Node coordinates, one Vec per direction, local-storage layout.
    pub coords: [Vec<f64>; 3],
    /// Metric factors g11,g22,g33,g12,g13,g23 per point (weights folded in).
    pub geom: [Vec<f64>; 6],
    /// Diagonal mass matrix per point (quadrature weight times Jacobian).
    pub bm: Vec<f64>,
    /// Inverse multiplicity: 1/(number of local copies of the global node).
    pub mult: Vec<f64>,
    /// True where the node lies on the domain boundary (Dirichlet).
    pub mask: Vec<bool>,
    pub gs: GsMap,
    /// Global node id per local point (connectivity ground truth).
    pub ids: Vec<u64>,
}

impl Mesh {
    pub fn build(spec: MeshSpec) -> Result<Mesh> {
        spec.validate()?;
        let gll = gll_setup(spec.nx1)?;
        let nx1 = gll.nx1;
        let n = nx1 - 1;
        let npts = spec.npts();
        let (ex, ey, ez) = (spec.ex as usize, spec.ey as usize, spec.ez as usize);
        let (hx, hy, hz) = (1.0 / ex as f64, 1.0 / ey as f64, 1.0 / ez as f64);

        // global grid of distinct nodes
        let (gnx, gny, gnz) = (ex * n + 1, ey * n + 1, ez * n + 1);

        let mut coords = [vec![0.0; npts], vec![0.0; npts], vec![0.0; npts]];
        let mut geom = [(); 6].map(|_| vec![0.0; npts]);
        let mut bm = vec![0.0; npts];
        let mut ids = vec![0u64; npts];
        let mut mask = vec![false; npts];

        let det_j = hx * hy * hz / 8.0;
        let (f11, f22, f33) = (
            hy * hz / (2.0 * hx),
            hx * hz / (2.0 * hy),
            hx * hy / (2.0 * hz),
        );

        let mut l = 0;
        for ke in 0..ez {
            for je in 0..ey {
                for ie in 0..ex {
                    for k in 0..nx1 {
                        for j in 0..nx1 {
                            for i in 0..nx1 {
                                // reference coordinate mapped so that shared
                                // faces produce bitwise-identical positions
                                let rx = ie as f64 + 0.5 * (gll.nodes[i] + 1.0);
                                let ry = je as f64 + 0.5 * (gll.nodes[j] + 1.0);
                                let rz = ke as f64 + 0.5 * (gll.nodes[k] + 1.0);
                                coords[0][l] = rx * hx;
                                coords[1][l] = ry * hy;
                                coords[2][l] = rz * hz;

                                let w = gll.weights[i] * gll.weights[j] * gll.weights[k];
                                bm[l] = w * det_j;
                                geom[0][l] = w * f11;
                                geom[1][l] = w * f22;
                                geom[2][l] = w * f33;
                                // off-diagonal metric vanishes on an affine box

                                let gx = (ie * n + i) as u64;
                                let gy = (je * n + j) as u64;
                                let gz = (ke * n + k) as u64;
                                ids[l] = (gz * gny as u64 + gy) * gnx as u64 + gx;
                                mask[l] = gx == 0
                                    || gx == (gnx - 1) as u64
                                    || gy == 0
                                    || gy == (gny - 1) as u64
                                    || gz == 0
                                    || gz == (gnz - 1) as u64;
                                l += 1;
                            }
                        }
                    }
                }
            }
        }

        // connectivity: group local indices by global id
        let mut by_id: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
        for (l, &id) in ids.iter().enumerate() {
            by_id.entry(id).or_default().push(l as u32);
        }
        let mut mult = vec![0.0; npts];
        let mut groups = Vec::new();
        for locals in by_id.values() {
            let m = 1.0 / locals.len() as f64; // copies are 1, 2, 4 or 8: exact
            for &l in locals {
                mult[l as usize] = m;
            }
            if locals.len() > 1 {
                groups.push(locals.clone());
            }
        }

        Ok(Mesh {
            spec,
            gll,
            coords,
            geom,
            bm,
            mult,
            mask,
            gs: GsMap { groups },
            ids,
        })
    }

    pub fn npts(&self) -> usize {
        self.spec.npts()
    }

    pub fn nel(&self) -> usize {
        self.spec.nel()
    }

    /// Count of unconstrained distinct nodes (system size after masking).
    pub fn free_nodes(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        self.ids
            .iter()
            .zip(&self.mask)
            .filter(|&(id, &m)| !m && seen.insert(*id))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_string_round_trip() {
        let spec: MeshSpec = "2,2,2,8".parse().unwrap();
        assert_eq!(spec, MeshSpec::new(2, 2, 2, 8).unwrap());
        assert_eq!(spec.to_string(), "2,2,2,8");
        assert_eq!(" 1, 2 ,3, 4 ".parse::<MeshSpec>().unwrap().to_string(), "1,2,3,4");
        for bad in ["", "2,2,2", "2,2,2,8,9", "2,2,2,x", "0,2,2,8", "2,2,2,1", "2,2,2,33", "-1,2,2,8"] {
            assert!(bad.parse::<MeshSpec>().is_err(), "`{bad}` should fail");
        }
        assert_eq!(spec.nel(), 8);
        assert_eq!(spec.pel(), 512);
        assert_eq!(spec.npts(), 4096);
    }

    #[test]
    fn gll_two_nodes_closed_form() {
        let g = gll_setup(2).unwrap();
        assert_eq!(g.nodes, vec![-1.0, 1.0]);
        assert_eq!(g.weights, vec![1.0, 1.0]);
        assert_eq!(g.d, vec![-0.5, 0.5, -0.5, 0.5]);
    }

    #[test]
    fn gll_nodes_are_symmetric_and_ordered() {
        for nx1 in 2..=16u32 {
            let g = gll_setup(nx1).unwrap();
            let n = g.nx1 - 1;
            assert_eq!(g.nodes[0], -1.0);
            assert_eq!(g.nodes[n], 1.0);
            for k in 0..g.nx1 {
                assert_eq!(g.nodes[k], -g.nodes[n - k], "nx1={nx1} k={k}");
                assert_eq!(g.weights[k], g.weights[n - k]);
            }
            for k in 1..g.nx1 {
                assert!(g.nodes[k] > g.nodes[k - 1]);
            }
        }
    }

    #[test]
    fn gll_weights_sum_to_interval_length() {
        for nx1 in 2..=16u32 {
            let g = gll_setup(nx1).unwrap();
            let sum: f64 = g.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "nx1={nx1} sum={sum}");
        }
    }

    #[test]
    fn gll_quadrature_is_exact_to_degree_2n_minus_1() {
        for nx1 in [2u32, 4, 8, 12] {
            let g = gll_setup(nx1).unwrap();
            let n = g.nx1 - 1;
            for p in 0..=(2 * n - 1) {
                let got: f64 = g
                    .nodes
                    .iter()
                    .zip(&g.weights)
                    .map(|(&x, &w)| w * x.powi(p as i32))
                    .sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!(
                    (got - exact).abs() < 1e-13,
                    "nx1={nx1} p={p} got={got} exact={exact}"
                );
            }
        }
    }

    #[test]
    fn known_nodes_nx1_4() {
        // degree-3 GLL interior nodes are ±1/sqrt(5)
        let g = gll_setup(4).unwrap();
        let r = 1.0 / 5.0f64.sqrt();
        assert!((g.nodes[1] + r).abs() < 1e-15);
        assert!((g.nodes[2] - r).abs() < 1e-15);
        // weights 1/6, 5/6
        assert!((g.weights[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((g.weights[1] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_matrix_is_exact_on_polynomials() {
        for nx1 in [2u32, 5, 8] {
            let g = gll_setup(nx1).unwrap();
            let n = g.nx1 - 1;
            for p in 0..=n as i32 {
                let u: Vec<f64> = g.nodes.iter().map(|&x| x.powi(p)).collect();
                for i in 0..g.nx1 {
                    let du: f64 = (0..g.nx1).map(|j| g.d[i * g.nx1 + j] * u[j]).sum();
                    let exact = if p == 0 {
                        0.0
                    } else {
                        p as f64 * g.nodes[i].powi(p - 1)
                    };
                    assert!(
                        (du - exact).abs() < 1e-11,
                        "nx1={nx1} p={p} i={i} du={du} exact={exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn mesh_multiplicities_are_reciprocal_powers_of_two() {
        let mesh = Mesh::build(MeshSpec::new(2, 2, 2, 3).unwrap()).unwrap();
        for &c in &mesh.mult {
            assert!(
                [1.0, 0.5, 0.25, 0.125].contains(&c),
                "unexpected multiplicity {c}"
            );
        }
        // the domain-center node is shared by all 8 elements
        let center = mesh
            .mult
            .iter()
            .zip(mesh.coords[0].iter().zip(mesh.coords[1].iter().zip(&mesh.coords[2])))
            .find(|&(_, (&x, (&y, &z)))| x == 0.5 && y == 0.5 && z == 0.5)
            .map(|(&c, _)| c);
        assert_eq!(center, Some(0.125));
    }

    #[test]
    fn gather_scatter_groups_are_consistent() {
        let mesh = Mesh::build(MeshSpec::new(2, 1, 1, 4).unwrap()).unwrap();
        // shared face: 4x4 nodes shared by exactly 2 elements
        assert_eq!(mesh.gs.groups().len(), 16);
        assert_eq!(mesh.gs.add_count(), 16);
        for group in mesh.gs.groups() {
            assert_eq!(group.len(), 2);
            let (a, b) = (group[0] as usize, group[1] as usize);
            assert!(a < b, "members ascending");
            assert_eq!(mesh.ids[a], mesh.ids[b]);
            for c in &mesh.coords {
                assert_eq!(c[a].to_bits(), c[b].to_bits(), "shared nodes coincide bitwise");
            }
        }
        // inverse multiplicity sums to one over each group
        for group in mesh.gs.groups() {
            let s: f64 = group.iter().map(|&l| mesh.mult[l as usize]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn mask_covers_exactly_the_domain_boundary() {
        let mesh = Mesh::build(MeshSpec::new(1, 1, 1, 5).unwrap()).unwrap();
        let masked = mesh.mask.iter().filter(|&&m| m).count();
        assert_eq!(masked, 5 * 5 * 5 - 3 * 3 * 3); // all but the interior block
        assert_eq!(mesh.free_nodes(), 27);

        let mesh = Mesh::build(MeshSpec::new(2, 2, 2, 2).unwrap()).unwrap();
        // trilinear elements: the only free global node is the domain center
        assert_eq!(mesh.free_nodes(), 1);
        for (l, &m) in mesh.mask.iter().enumerate() {
            let interior = mesh.coords[0][l] == 0.5
                && mesh.coords[1][l] == 0.5
                && mesh.coords[2][l] == 0.5;
            assert_eq!(!m, interior, "l={l}");
        }
    }

    #[test]
    fn geometry_scales_with_element_aspect() {
        // ex=1, ey=2, ez=4 -> hx=1, hy=1/2, hz=1/4
        let mesh = Mesh::build(MeshSpec::new(1, 2, 4, 2).unwrap()).unwrap();
        let w = 1.0; // nx1=2 GLL weights are all 1
        let det_j = 1.0 * 0.5 * 0.25 / 8.0;
        assert_eq!(mesh.bm[0], w * det_j);
        assert_eq!(mesh.geom[0][0], 0.5 * 0.25 / 2.0); // hy*hz/(2hx)
        assert_eq!(mesh.geom[1][0], 1.0 * 0.25 / (2.0 * 0.5)); // hx*hz/(2hy)
        assert_eq!(mesh.geom[2][0], 1.0 * 0.5 / (2.0 * 0.25)); // hx*hy/(2hz)
        for g in &mesh.geom[3..] {
            assert!(g.iter().all(|&v| v == 0.0), "affine box has no cross terms");
        }
    }

    #[test]
    fn global_ids_count_distinct_nodes() {
        let mesh = Mesh::build(MeshSpec::new(2, 2, 2, 8).unwrap()).unwrap();
        let distinct: std::collections::BTreeSet<u64> = mesh.ids.iter().copied().collect();
        assert_eq!(distinct.len(), 15 * 15 * 15); // (2*7+1)^3
        assert_eq!(mesh.npts(), 4096);
        assert_eq!(mesh.free_nodes(), 13 * 13 * 13);
    }
}
