//! Distributed vectors and sparse matrices over a [`SimCluster`].
//!
//! Vectors are split into balanced contiguous row blocks, one per rank, and
//! stored in cluster memory. Reductions accumulate exactly, so a dot product
//! has the same bits on any number of ranks. Sparse products fetch off-block
//! entries with point-to-point halo messages and accumulate each row in
//! storage order starting from zero, matching [`CsrMatrix::mul_vec`].

pub mod csr;
pub mod exact;
pub mod hessenberg;
pub mod market;

use std::sync::Arc;

pub use csr::CsrMatrix;
pub use exact::{exact_dot, exact_sum, ExactSum};
pub use hessenberg::{hessenberg_lsq, Hessenberg, LsqSolution};
pub use market::{parse_matrix_market, read_matrix_market, write_matrix_market};

use crate::error::{Error, Result};
use crate::memory::{RegionId, Reliability};
use crate::sim::{decode_f64s, encode_f64s, CollectiveHandle, SimCluster, Tag};

/// Balanced block distribution: the first `n % p` ranks own one extra row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    n_global: usize,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn balanced(n_global: usize, n_ranks: usize) -> Self {
        assert!(n_ranks > 0, "layout needs at least one rank");
        let (q, r) = (n_global / n_ranks, n_global % n_ranks);
        let mut offsets = Vec::with_capacity(n_ranks + 1);
        let mut acc = 0;
        offsets.push(0);
        for rank in 0..n_ranks {
            acc += q + usize::from(rank < r);
            offsets.push(acc);
        }
        Layout { n_global, offsets }
    }

    pub fn n_global(&self) -> usize {
        self.n_global
    }

    pub fn n_ranks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self, rank: usize) -> usize {
        self.offsets[rank + 1] - self.offsets[rank]
    }

    pub fn start(&self, rank: usize) -> usize {
        self.offsets[rank]
    }

    pub fn range(&self, rank: usize) -> std::ops::Range<usize> {
        self.offsets[rank]..self.offsets[rank + 1]
    }

    pub fn lens(&self) -> Vec<usize> {
        (0..self.n_ranks()).map(|r| self.len(r)).collect()
    }

    pub fn max_len(&self) -> usize {
        (0..self.n_ranks()).map(|r| self.len(r)).max().unwrap_or(0)
    }

    /// Rank owning global row `i`.
    pub fn owner(&self, i: usize) -> usize {
        debug_assert!(i < self.n_global);
        self.offsets.partition_point(|&o| o <= i) - 1
    }
}

/// Handle to a distributed vector stored in cluster memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DistVector {
    pub id: RegionId,
    pub layout: Arc<Layout>,
    pub kind: Reliability,
}

impl DistVector {
    pub fn alloc(
        cluster: &mut SimCluster,
        kind: Reliability,
        label: &str,
        layout: &Arc<Layout>,
    ) -> Result<Self> {
        if layout.n_ranks() != cluster.n_ranks() {
            return Err(Error::usage("layout rank count differs from cluster"));
        }
        let id = cluster.alloc(kind, label, &layout.lens())?;
        Ok(DistVector {
            id,
            layout: Arc::clone(layout),
            kind,
        })
    }

    pub fn from_global(
        cluster: &mut SimCluster,
        kind: Reliability,
        label: &str,
        layout: &Arc<Layout>,
        values: &[f64],
    ) -> Result<Self> {
        let v = Self::alloc(cluster, kind, label, layout)?;
        v.scatter(cluster, values)?;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.layout.n_global()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assembles the global vector. Observation only; charges no time.
    pub fn gather(&self, cluster: &SimCluster) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.layout.n_ranks() {
            out.extend_from_slice(cluster.mem().block(self.id, r));
        }
        out
    }

    /// Overwrites the vector from a global array. Setup only; charges no time.
    pub fn scatter(&self, cluster: &mut SimCluster, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::usage(format!(
                "scatter of {} values into vector of length {}",
                values.len(),
                self.len()
            )));
        }
        for r in 0..self.layout.n_ranks() {
            cluster
                .mem_mut()
                .block_mut(self.id, r)
                .copy_from_slice(&values[self.layout.range(r)]);
        }
        Ok(())
    }

    pub fn free(self, cluster: &mut SimCluster) -> Result<()> {
        cluster.free(self.id)
    }
}

fn same_layout(x: &DistVector, y: &DistVector) -> Result<()> {
    if x.layout != y.layout {
        return Err(Error::usage(format!(
            "distribution mismatch: lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

fn flops(layout: &Layout, per_row: u64) -> u64 {
    layout.max_len() as u64 * per_row
}

/// Applies `f(src_block, dst_block)` on every rank. `src` may equal `dst`.
fn zip_blocks(
    cluster: &mut SimCluster,
    src: &DistVector,
    dst: &DistVector,
    mut f: impl FnMut(&[f64], &mut [f64]),
) {
    for r in 0..dst.layout.n_ranks() {
        let mut out = cluster.mem_mut().take_block(dst.id, r);
        if src.id == dst.id {
            let copy = out.clone();
            f(&copy, &mut out);
        } else {
            f(cluster.mem().block(src.id, r), &mut out);
        }
        cluster.mem_mut().put_block(dst.id, r, out);
    }
}

/// `dst := src`.
pub fn copy(cluster: &mut SimCluster, src: &DistVector, dst: &DistVector) -> Result<()> {
    same_layout(src, dst)?;
    zip_blocks(cluster, src, dst, |s, d| d.copy_from_slice(s));
    cluster.compute("copy", flops(&dst.layout, 1));
    Ok(())
}

pub fn fill(cluster: &mut SimCluster, x: &DistVector, value: f64) {
    for r in 0..x.layout.n_ranks() {
        cluster.mem_mut().block_mut(x.id, r).fill(value);
    }
    cluster.compute("fill", flops(&x.layout, 1));
}

/// `y := alpha * x + y`.
pub fn axpy(cluster: &mut SimCluster, alpha: f64, x: &DistVector, y: &DistVector) -> Result<()> {
    same_layout(x, y)?;
    zip_blocks(cluster, x, y, |xs, ys| {
        for (yi, xi) in ys.iter_mut().zip(xs) {
            *yi += alpha * xi;
        }
    });
    cluster.compute("axpy", flops(&y.layout, 2));
    Ok(())
}

/// `x := alpha * x`.
pub fn scale(cluster: &mut SimCluster, alpha: f64, x: &DistVector) {
    for r in 0..x.layout.n_ranks() {
        for v in cluster.mem_mut().block_mut(x.id, r) {
            *v *= alpha;
        }
    }
    cluster.compute("scale", flops(&x.layout, 1));
}

/// `y := x * (1/alpha)` computed as a division per entry.
pub fn div_into(cluster: &mut SimCluster, x: &DistVector, alpha: f64, y: &DistVector) -> Result<()> {
    same_layout(x, y)?;
    zip_blocks(cluster, x, y, |xs, ys| {
        for (yi, xi) in ys.iter_mut().zip(xs) {
            *yi = xi / alpha;
        }
    });
    cluster.compute("div", flops(&y.layout, 1));
    Ok(())
}

/// `z := x - y`.
pub fn sub_into(cluster: &mut SimCluster, x: &DistVector, y: &DistVector, z: &DistVector) -> Result<()> {
    same_layout(x, y)?;
    same_layout(x, z)?;
    for r in 0..z.layout.n_ranks() {
        let mut out = cluster.mem_mut().take_block(z.id, r);
        let mem = cluster.mem();
        let xs = if x.id == z.id { out.clone() } else { mem.block(x.id, r).to_vec() };
        let ys = if y.id == z.id { out.clone() } else { mem.block(y.id, r).to_vec() };
        for ((o, a), b) in out.iter_mut().zip(&xs).zip(&ys) {
            *o = a - b;
        }
        cluster.mem_mut().put_block(z.id, r, out);
    }
    cluster.compute("sub", flops(&z.layout, 1));
    Ok(())
}

/// Per-rank exact partial sums of `x[i]*y[i]` for each pair.
fn dot_parts(cluster: &SimCluster, pairs: &[(&DistVector, &DistVector)]) -> Vec<Vec<ExactSum>> {
    let n_ranks = cluster.n_ranks();
    (0..n_ranks)
        .map(|r| {
            pairs
                .iter()
                .map(|(x, y)| {
                    let mut acc = ExactSum::new();
                    let (xs, ys) = (cluster.mem().block(x.id, r), cluster.mem().block(y.id, r));
                    for (a, b) in xs.iter().zip(ys) {
                        acc.add(a * b);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Posts one fused reduction of several dot products.
pub fn idots(cluster: &mut SimCluster, pairs: &[(&DistVector, &DistVector)]) -> Result<CollectiveHandle> {
    for (x, y) in pairs {
        same_layout(x, y)?;
    }
    let parts = dot_parts(cluster, pairs);
    if let Some((x, _)) = pairs.first() {
        cluster.compute("dot", flops(&x.layout, 2 * pairs.len() as u64));
    }
    cluster.iallreduce_exact(&parts)
}

pub fn dots(cluster: &mut SimCluster, pairs: &[(&DistVector, &DistVector)]) -> Result<Vec<f64>> {
    let h = idots(cluster, pairs)?;
    cluster.wait(h)
}

pub fn idot(cluster: &mut SimCluster, x: &DistVector, y: &DistVector) -> Result<CollectiveHandle> {
    idots(cluster, &[(x, y)])
}

pub fn dot(cluster: &mut SimCluster, x: &DistVector, y: &DistVector) -> Result<f64> {
    Ok(dots(cluster, &[(x, y)])?[0])
}

pub fn norm2(cluster: &mut SimCluster, x: &DistVector) -> Result<f64> {
    Ok(dot(cluster, x, x)?.sqrt())
}

/// Global maximum of per-rank values computed by `f` on each block.
pub fn max_over_blocks(
    cluster: &mut SimCluster,
    x: &DistVector,
    f: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let per_rank: Vec<f64> = (0..cluster.n_ranks())
        .map(|r| f(cluster.mem().block(x.id, r)))
        .collect();
    cluster.compute("local_max", flops(&x.layout, 1));
    cluster.allreduce_max(&per_rank)
}

/// Row-block distributed CSR matrix with a precomputed halo pattern.
#[derive(Clone, Debug)]
pub struct DistCsr {
    global: Arc<CsrMatrix>,
    layout: Arc<Layout>,
    /// `needs[r]` lists `(owner, sorted global columns)` rank r reads from other ranks.
    needs: Vec<Vec<(usize, Vec<usize>)>>,
    /// Per rank, per stored entry: index into `own block ++ ghosts`.
    local_cols: Vec<Vec<usize>>,
    max_nnz: usize,
}

impl DistCsr {
    pub fn new(global: Arc<CsrMatrix>, layout: Arc<Layout>) -> Result<Self> {
        if !global.is_square() || global.n_rows() != layout.n_global() {
            return Err(Error::usage(format!(
                "matrix {}x{} does not match layout of length {}",
                global.n_rows(),
                global.n_cols(),
                layout.n_global()
            )));
        }
        let p = layout.n_ranks();
        let mut needs = Vec::with_capacity(p);
        let mut local_cols = Vec::with_capacity(p);
        let mut max_nnz = 0;
        for r in 0..p {
            let range = layout.range(r);
            let mut ghost: std::collections::BTreeSet<usize> = Default::default();
            let mut nnz = 0;
            for i in range.clone() {
                nnz += global.row_nnz(i);
                for (c, _) in global.row(i) {
                    if !range.contains(&c) {
                        ghost.insert(c);
                    }
                }
            }
            max_nnz = max_nnz.max(nnz);
            let mut by_owner: Vec<(usize, Vec<usize>)> = Vec::new();
            for c in ghost {
                let q = layout.owner(c);
                match by_owner.last_mut() {
                    Some((owner, cols)) if *owner == q => cols.push(c),
                    _ => by_owner.push((q, vec![c])),
                }
            }
            let ghost_pos: std::collections::HashMap<usize, usize> = by_owner
                .iter()
                .flat_map(|(_, cols)| cols.iter().copied())
                .enumerate()
                .map(|(k, c)| (c, range.len() + k))
                .collect();
            let mut lc = Vec::with_capacity(nnz);
            for i in range.clone() {
                for (c, _) in global.row(i) {
                    lc.push(if range.contains(&c) { c - range.start } else { ghost_pos[&c] });
                }
            }
            needs.push(by_owner);
            local_cols.push(lc);
        }
        Ok(DistCsr {
            global,
            layout,
            needs,
            local_cols,
            max_nnz,
        })
    }

    pub fn global(&self) -> &CsrMatrix {
        &self.global
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Ranks whose halo rank `r` reads.
    pub fn halo_sources(&self, r: usize) -> Vec<usize> {
        self.needs[r].iter().map(|(q, _)| *q).collect()
    }
}

/// `y := A x` with a halo exchange. `x` and `y` must be distinct.
pub fn spmv(cluster: &mut SimCluster, a: &DistCsr, x: &DistVector, y: &DistVector) -> Result<()> {
    if *x.layout != *a.layout || *y.layout != *a.layout {
        return Err(Error::usage(format!(
            "dimension mismatch: A is {n}x{n}, x has {}, y has {}",
            x.len(),
            y.len(),
            n = a.layout.n_global()
        )));
    }
    if x.id == y.id {
        return Err(Error::usage("spmv output must not alias its input"));
    }
    let p = a.layout.n_ranks();
    for r in 0..p {
        for (q, cols) in &a.needs[r] {
            let start = a.layout.start(*q);
            let block = cluster.mem().block(x.id, *q);
            let vals: Vec<f64> = cols.iter().map(|c| block[c - start]).collect();
            cluster.send(*q, r, Tag::Halo, encode_f64s(&vals))?;
        }
    }
    for r in 0..p {
        let mut ext = cluster.mem().block(x.id, r).to_vec();
        for (q, cols) in &a.needs[r] {
            let vals = decode_f64s(&cluster.recv(*q, r, Tag::Halo)?)?;
            if vals.len() != cols.len() {
                return Err(Error::usage("halo message has the wrong length"));
            }
            ext.extend_from_slice(&vals);
        }
        let mut out = cluster.mem_mut().take_block(y.id, r);
        let mut k = 0;
        for (li, gi) in a.layout.range(r).enumerate() {
            let mut sum = 0.0;
            for (_, v) in a.global.row(gi) {
                sum += v * ext[a.local_cols[r][k]];
                k += 1;
            }
            out[li] = sum;
        }
        cluster.mem_mut().put_block(y.id, r, out);
    }
    cluster.compute("spmv", 2 * a.max_nnz as u64);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ClusterConfig;

    #[test]
    fn balanced_blocks() {
        let l = Layout::balanced(10, 3);
        assert_eq!(l.lens(), vec![4, 3, 3]);
        assert_eq!(l.range(1), 4..7);
        assert_eq!((0..10).map(|i| l.owner(i)).collect::<Vec<_>>(), vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let sparse = Layout::balanced(2, 4);
        assert_eq!(sparse.lens(), vec![1, 1, 0, 0]);
        assert_eq!(sparse.owner(1), 1);
    }

    #[test]
    fn small_dot_and_norm() {
        let mut c = SimCluster::new(ClusterConfig::new(2, 0)).unwrap();
        let l = Arc::new(Layout::balanced(2, 2));
        let x = DistVector::from_global(&mut c, Reliability::Unreliable, "x", &l, &[1.0, 2.0]).unwrap();
        let y = DistVector::from_global(&mut c, Reliability::Unreliable, "y", &l, &[3.0, 4.0]).unwrap();
        assert_eq!(dot(&mut c, &x, &y).unwrap(), 11.0);
        let z = DistVector::from_global(&mut c, Reliability::Unreliable, "z", &l, &[3.0, 4.0]).unwrap();
        assert_eq!(norm2(&mut c, &z).unwrap(), 5.0);
        let w = DistVector::from_global(
            &mut c,
            Reliability::Unreliable,
            "w",
            &Arc::new(Layout::balanced(3, 2)),
            &[0.0; 3],
        )
        .unwrap();
        assert!(matches!(dot(&mut c, &x, &w), Err(Error::Usage(_))));
    }
}
