//! Compute kernels of the solver, written once and generic over [`Exec`].
//!
//! Every floating-point operation goes through the executor, so the same
//! code runs instrumented (binary64 with per-kernel backends) and native
//! (f32/f64, counting only). Reductions and matrix products accumulate in a
//! fixed sequential order; results are reproducible bit-for-bit for a given
//! executor and scope.
//!
//! Attribution: tensor contractions count under `mxm` wherever they occur;
//! the operator's pointwise metric application, derivative combination,
//! gather–scatter summation and boundary masking count under `ax`; the
//! vector update and reduction kernels count under their own names.

use crate::context::{Exec, KernelId};
use crate::mesh::{GsMap, Mesh};
use crate::num::{FpOp, Real};

/// C = A * B, column-major, C being n1 x n3, contracting over n2.
/// 2*n1*n2*n3 - n1*n3 flops: the first product initializes the accumulator.
pub fn mxm<X: Exec>(a: &[X::Num], b: &[X::Num], c: &mut [X::Num], n1: usize, n2: usize, n3: usize, ex: &mut X) {
    debug_assert_eq!(a.len(), n1 * n2);
    debug_assert_eq!(b.len(), n2 * n3);
    debug_assert_eq!(c.len(), n1 * n3);
    const K: KernelId = KernelId::Mxm;
    ex.record_call(K);
    let w = X::width();
    ex.traffic(K, ((n1 * n2 + n2 * n3) as u64) * w, (n1 * n3) as u64 * w);
    for k in 0..n3 {
        let bcol = k * n2;
        let ccol = k * n1;
        for i in 0..n1 {
            let mut acc = ex.op(K, FpOp::Mul, a[i], b[bcol]);
            for m in 1..n2 {
                let t = ex.op(K, FpOp::Mul, a[i + m * n1], b[bcol + m]);
                acc = ex.op(K, FpOp::Add, acc, t);
            }
            c[ccol + i] = acc;
        }
    }
}

/// Weighted dot product sum((a_i * b_i) * c_i), sequential. 3n-1 flops.
pub fn glsc3<X: Exec>(a: &[X::Num], b: &[X::Num], c: &[X::Num], ex: &mut X) -> X::Num {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), c.len());
    const K: KernelId = KernelId::Glsc3;
    ex.record_call(K);
    ex.traffic(K, 3 * a.len() as u64 * X::width(), 0);
    let mut acc = X::Num::zero();
    for i in 0..a.len() {
        let ab = ex.op(K, FpOp::Mul, a[i], b[i]);
        let abc = ex.op(K, FpOp::Mul, ab, c[i]);
        acc = if i == 0 { abc } else { ex.op(K, FpOp::Add, acc, abc) };
    }
    acc
}

/// a = s*a + b. 2n flops.
pub fn add2s1<X: Exec>(a: &mut [X::Num], b: &[X::Num], s: X::Num, ex: &mut X) {
    debug_assert_eq!(a.len(), b.len());
    const K: KernelId = KernelId::Add2s1;
    ex.record_call(K);
    let w = X::width();
    ex.traffic(K, 2 * a.len() as u64 * w, a.len() as u64 * w);
    for i in 0..a.len() {
        let sa = ex.op(K, FpOp::Mul, s, a[i]);
        a[i] = ex.op(K, FpOp::Add, sa, b[i]);
    }
}

/// a = a + s*b. 2n flops.
pub fn add2s2<X: Exec>(a: &mut [X::Num], b: &[X::Num], s: X::Num, ex: &mut X) {
    debug_assert_eq!(a.len(), b.len());
    const K: KernelId = KernelId::Add2s2;
    ex.record_call(K);
    let w = X::width();
    ex.traffic(K, 2 * a.len() as u64 * w, a.len() as u64 * w);
    for i in 0..a.len() {
        let sb = ex.op(K, FpOp::Mul, s, b[i]);
        a[i] = ex.op(K, FpOp::Add, a[i], sb);
    }
}

/// a = a + b. n flops.
pub fn add2<X: Exec>(a: &mut [X::Num], b: &[X::Num], ex: &mut X) {
    debug_assert_eq!(a.len(), b.len());
    const K: KernelId = KernelId::Add2;
    ex.record_call(K);
    let w = X::width();
    ex.traffic(K, 2 * a.len() as u64 * w, a.len() as u64 * w);
    for i in 0..a.len() {
        a[i] = ex.op(K, FpOp::Add, a[i], b[i]);
    }
}

/// Sums duplicated nodes and writes the sum back to every copy, restoring
/// continuity. Adds attribute to `kernel` (the operator or rhs setup).
pub fn gather_scatter<X: Exec>(kernel: KernelId, f: &mut [X::Num], gs: &GsMap, ex: &mut X) {
    let w = X::width();
    let touched: u64 = gs.groups().iter().map(|g| g.len() as u64).sum();
    ex.traffic(kernel, touched * w, touched * w);
    for group in gs.groups() {
        let mut acc = f[group[0] as usize];
        for &l in &group[1..] {
            acc = ex.op(kernel, FpOp::Add, acc, f[l as usize]);
        }
        for &l in group {
            f[l as usize] = acc;
        }
    }
}

/// Zeroes constrained nodes. Exact: no flops, writes only.
pub fn apply_mask<X: Exec>(kernel: KernelId, f: &mut [X::Num], mask: &[bool], ex: &mut X) {
    debug_assert_eq!(f.len(), mask.len());
    let zeroed = mask.iter().filter(|&&m| m).count() as u64;
    ex.traffic(kernel, 0, zeroed * X::width());
    for (v, &m) in f.iter_mut().zip(mask) {
        if m {
            *v = X::Num::zero();
        }
    }
}

/// Reference-space geometry of the operator at the executor's width:
/// per-point metric factors and the two layouts of the differentiation
/// matrix the tensor contractions need.
#[derive(Clone, Debug)]
pub struct AxGeom<T> {
    pub n: usize,
    pub nel: usize,
    /// g11,g22,g33,g12,g13,g23 per point.
    pub g: [Vec<T>; 6],
    /// D column-major: dc[i + n*m] = D(i,m).
    pub dc: Vec<T>,
    /// D transposed, column-major: dt[m + n*j] = D(j,m).
    pub dt: Vec<T>,
}

impl<T: Real> AxGeom<T> {
    /// Converts the mesh's binary64 geometry once, up front.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let n = mesh.gll.nx1;
        let g = [0, 1, 2, 3, 4, 5]
            .map(|q| mesh.geom[q].iter().map(|&v| T::from_f64(v)).collect());
        let mut dc = vec![T::zero(); n * n];
        let mut dt = vec![T::zero(); n * n];
        for i in 0..n {
            for m in 0..n {
                let d = T::from_f64(mesh.gll.d[i * n + m]);
                dc[i + n * m] = d;
                dt[m + n * i] = d;
            }
        }
        AxGeom { n, nel: mesh.nel(), g, dc, dt }
    }

    pub fn npts(&self) -> usize {
        self.nel * self.n * self.n * self.n
    }
}

/// Scratch space for one operator application.
#[derive(Clone, Debug)]
pub struct AxWork<T> {
    ur: Vec<T>,
    us: Vec<T>,
    ut: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Real> AxWork<T> {
    pub fn new(npts: usize) -> Self {
        AxWork {
            ur: vec![T::zero(); npts],
            us: vec![T::zero(); npts],
            ut: vec![T::zero(); npts],
            tmp: vec![T::zero(); npts],
        }
    }
}

/// Reference-space derivatives of u along the three tensor directions.
///
/// The r-derivative is one contraction over the whole field (the jk-and-
/// element index is a single fast column dimension); the s-derivative works
/// per k-slab, the t-derivative per element.
pub fn local_grad3<X: Exec>(
    u: &[X::Num],
    ur: &mut [X::Num],
    us: &mut [X::Num],
    ut: &mut [X::Num],
    geom: &AxGeom<X::Num>,
    ex: &mut X,
) {
    let (n, nel) = (geom.n, geom.nel);
    let (n2, n3) = (n * n, n * n * n);
    mxm(&geom.dc, u, ur, n, n, n2 * nel, ex);
    for e in 0..nel {
        let base = e * n3;
        for k in 0..n {
            let off = base + k * n2;
            mxm(&u[off..off + n2], &geom.dt, &mut us[off..off + n2], n, n, n, ex);
        }
        mxm(&u[base..base + n3], &geom.dt, &mut ut[base..base + n3], n2, n, n, ex);
    }
}

/// Adjoint of [`local_grad3`]: w = D^T wr + (ws D)_slabs + wt D.
/// The three partials are combined with two adds per point, under `ax`.
pub fn local_grad3_t<X: Exec>(
    w: &mut [X::Num],
    wr: &[X::Num],
    ws: &[X::Num],
    wt: &[X::Num],
    tmp: &mut [X::Num],
    geom: &AxGeom<X::Num>,
    ex: &mut X,
) {
    let (n, nel) = (geom.n, geom.nel);
    let (n2, n3) = (n * n, n * n * n);
    let npts = n3 * nel;
    let width = X::width();

    mxm(&geom.dt, wr, w, n, n, n2 * nel, ex);
    for e in 0..nel {
        let base = e * n3;
        for k in 0..n {
            let off = base + k * n2;
            mxm(&ws[off..off + n2], &geom.dc, &mut tmp[off..off + n2], n, n, n, ex);
        }
    }
    ex.traffic(KernelId::Ax, 2 * npts as u64 * width, npts as u64 * width);
    for i in 0..npts {
        w[i] = ex.op(KernelId::Ax, FpOp::Add, w[i], tmp[i]);
    }
    for e in 0..nel {
        let base = e * n3;
        mxm(&wt[base..base + n3], &geom.dc, &mut tmp[base..base + n3], n2, n, n, ex);
    }
    ex.traffic(KernelId::Ax, 2 * npts as u64 * width, npts as u64 * width);
    for i in 0..npts {
        w[i] = ex.op(KernelId::Ax, FpOp::Add, w[i], tmp[i]);
    }
}

/// The assembled operator: w = mask(QQ^T(D^T G D u)) with G the per-point
/// metric. Pointwise metric application is 9 mul + 6 add per point.
pub fn ax<X: Exec>(
    w: &mut [X::Num],
    u: &[X::Num],
    geom: &AxGeom<X::Num>,
    gs: &GsMap,
    mask: &[bool],
    work: &mut AxWork<X::Num>,
    ex: &mut X,
) {
    const K: KernelId = KernelId::Ax;
    let npts = geom.npts();
    debug_assert_eq!(w.len(), npts);
    debug_assert_eq!(u.len(), npts);
    ex.record_call(K);

    local_grad3(u, &mut work.ur, &mut work.us, &mut work.ut, geom, ex);

    let width = X::width();
    ex.traffic(K, 9 * npts as u64 * width, 3 * npts as u64 * width);
    let g = &geom.g;
    for l in 0..npts {
        let (ur, us, ut) = (work.ur[l], work.us[l], work.ut[l]);
        // one metric row: 3 mul + 2 add
        let row = |a: X::Num, b: X::Num, c: X::Num, ex: &mut X| {
            let pa = ex.op(K, FpOp::Mul, a, ur);
            let pb = ex.op(K, FpOp::Mul, b, us);
            let pc = ex.op(K, FpOp::Mul, c, ut);
            let t = ex.op(K, FpOp::Add, pa, pb);
            ex.op(K, FpOp::Add, t, pc)
        };
        let wr = row(g[0][l], g[3][l], g[4][l], ex);
        let wsv = row(g[3][l], g[1][l], g[5][l], ex);
        let wtv = row(g[4][l], g[5][l], g[2][l], ex);
        work.ur[l] = wr;
        work.us[l] = wsv;
        work.ut[l] = wtv;
    }

    local_grad3_t(w, &work.ur, &work.us, &work.ut, &mut work.tmp, geom, ex);
    gather_scatter(K, w, gs, ex);
    apply_mask(K, w, mask, ex);
}
