//! P1 finite-element assembly on tetrahedral meshes.
//!
//! [`assemble`] produces every matrix the forward, adjoint and objective
//! computations need: the volume mass matrix, one unit-coefficient stiffness
//! matrix per subdomain (so `K(D) = Σ_s D_s K_s` is a scalar combination, no
//! reassembly), and mass / Laplace–Beltrami stiffness matrices on the two
//! Dirichlet surfaces in boundary-local indexing.
//!
//! All volume matrices share one sparsity pattern (vertex adjacency), and all
//! surface matrices share another, which makes linear combinations value-wise.

mod solve;

pub use solve::{pcg, solve_spd, PcgOutcome};

use crate::error::{Error, Result};
use crate::mesh::{cross, dot, sub, Marker, Mesh};

/// Compressed sparse row matrix (square).
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub dimension: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub symmetric: bool,
}

impl SparseMatrix {
    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            dimension: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    /// Builds a matrix with the given adjacency pattern and zero values.
    /// `neighbors[i]` must be sorted and contain `i`.
    fn from_pattern(neighbors: &[Vec<usize>]) -> Self {
        let n = neighbors.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in neighbors {
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        SparseMatrix {
            dimension: n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            symmetric: true,
        }
    }

    fn entry_index(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi].binary_search(&col).ok().map(|p| lo + p)
    }

    fn add_at(&mut self, row: usize, col: usize, value: f64) {
        let idx = self
            .entry_index(row, col)
            .expect("assembly target outside sparsity pattern");
        self.values[idx] += value;
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dimension);
        debug_assert_eq!(y.len(), self.dimension);
        for row in 0..self.dimension {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[row] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dimension];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dimension];
        for (row, slot) in d.iter_mut().enumerate() {
            if let Some(idx) = self.entry_index(row, row) {
                *slot = self.values[idx];
            }
        }
        d
    }

    /// x' A y for same-dimension vectors.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for row in 0..self.dimension {
            let mut r = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                r += self.values[k] * y[self.col_idx[k]];
            }
            acc += x[row] * r;
        }
        acc
    }

    /// Maximum relative asymmetry |a_ij - a_ji| / max|a|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for row in 0..self.dimension {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[k];
                let aji = self
                    .entry_index(col, row)
                    .map(|idx| self.values[idx])
                    .unwrap_or(0.0);
                worst = worst.max((self.values[k] - aji).abs());
            }
        }
        worst / scale
    }

    /// Value-wise `self + c * other`; both matrices must share the pattern.
    pub fn add_scaled(&self, c: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.row_ptr, other.row_ptr, "pattern mismatch");
        assert_eq!(self.col_idx, other.col_idx, "pattern mismatch");
        let mut out = self.clone();
        for (v, o) in out.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
        out.symmetric = self.symmetric && other.symmetric;
        out
    }

    /// Extracts the square submatrix on `keep` (sorted global indices).
    pub fn submatrix(&self, keep: &[usize]) -> SparseMatrix {
        let mut pos = vec![usize::MAX; self.dimension];
        for (local, &global) in keep.iter().enumerate() {
            pos[global] = local;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &row in keep {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = pos[self.col_idx[k]];
                if col != usize::MAX {
                    col_idx.push(col);
                    values.push(self.values[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            dimension: keep.len(),
            row_ptr,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }
}

/// Mass matrix treatment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MassLumping {
    #[default]
    Consistent,
    Lumped,
}

/// Everything assembled once per mesh: volume matrices, Dirichlet surface
/// matrices and the Dirichlet/free vertex split.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub mesh_id: u64,
    pub num_vertices: usize,
    /// Sorted subdomain labels present in the mesh; `stiffness[i]` belongs to
    /// `labels[i]`.
    pub labels: Vec<u8>,
    pub mass: SparseMatrix,
    pub stiffness: Vec<SparseMatrix>,
    /// Sorted Dirichlet vertices with their marker; boundary-local indexing
    /// for `g` vectors and the surface matrices follows this order.
    pub dirichlet: Vec<(usize, Marker)>,
    pub surface_mass_sas: SparseMatrix,
    pub surface_mass_vent: SparseMatrix,
    pub surface_stiffness_sas: SparseMatrix,
    pub surface_stiffness_vent: SparseMatrix,
    free: Vec<usize>,
    free_pos: Vec<usize>,
    dirichlet_pos: Vec<usize>,
}

impl AssembledSystem {
    pub fn num_dirichlet(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Sorted non-Dirichlet vertex indices.
    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    /// `K(D) = Σ_s D_s K_s` with `d` ordered like `labels`.
    pub fn combine_stiffness(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.stiffness.len(), "one coefficient per subdomain");
        let mut out = self.stiffness[0].clone();
        for v in out.values.iter_mut() {
            *v *= d[0];
        }
        for (ds, ks) in d.iter().zip(&self.stiffness).skip(1) {
            for (v, k) in out.values.iter_mut().zip(&ks.values) {
                *v += ds * k;
            }
        }
        out
    }

    /// Backward-Euler step matrix `M + dt K(D)`.
    pub fn time_matrix(&self, d: &[f64], dt: f64) -> SparseMatrix {
        self.mass.add_scaled(dt, &self.combine_stiffness(d))
    }

    /// `M_Γ = M_Γr + M_Γb`, the mass matrix of the whole Dirichlet surface.
    pub fn surface_mass_total(&self) -> SparseMatrix {
        self.surface_mass_sas.add_scaled(1.0, &self.surface_mass_vent)
    }

    pub fn restrict_free(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&v| full[v]).collect()
    }

    pub fn restrict_dirichlet(&self, full: &[f64]) -> Vec<f64> {
        self.dirichlet.iter().map(|&(v, _)| full[v]).collect()
    }

    /// Scatters free-local values into a zeroed full-length vector.
    pub fn embed_free(&self, free_vals: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_vertices];
        for (&v, &x) in self.free.iter().zip(free_vals) {
            full[v] = x;
        }
        full
    }

    /// Scatters boundary-local values into a zeroed full-length vector.
    pub fn embed_dirichlet(&self, dir_vals: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_vertices];
        for ((v, _), &x) in self.dirichlet.iter().zip(dir_vals) {
            full[*v] = x;
        }
        full
    }

    /// Local index of a global vertex in the free ordering, if free.
    pub fn free_index(&self, vertex: usize) -> Option<usize> {
        match self.free_pos[vertex] {
            usize::MAX => None,
            p => Some(p),
        }
    }

    /// Local index of a global vertex in the Dirichlet ordering, if Dirichlet.
    pub fn dirichlet_index(&self, vertex: usize) -> Option<usize> {
        match self.dirichlet_pos[vertex] {
            usize::MAX => None,
            p => Some(p),
        }
    }

    /// Extracts the free-free block of a full-size matrix.
    pub fn free_submatrix(&self, a: &SparseMatrix) -> SparseMatrix {
        a.submatrix(&self.free)
    }

    /// Total mesh volume, `1' M 1`.
    pub fn volume(&self) -> f64 {
        let ones = vec![1.0; self.num_vertices];
        self.mass.bilinear(&ones, &ones)
    }
}

/// Assembles all system matrices for a mesh.
pub fn assemble(mesh: &Mesh, lumping: MassLumping) -> Result<AssembledSystem> {
    let nv = mesh.num_vertices();
    let labels = mesh.present_subdomains();
    if labels.is_empty() {
        return Err(Error::Assembly("mesh has no cells".into()));
    }

    // Shared volume pattern: vertex adjacency over tets.
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for tet in &mesh.tets {
        for &a in tet {
            for &b in tet {
                neighbors[a].push(b);
            }
        }
    }
    for row in &mut neighbors {
        row.sort_unstable();
        row.dedup();
    }
    let mut mass = SparseMatrix::from_pattern(&neighbors);
    let mut stiffness: Vec<SparseMatrix> = labels
        .iter()
        .map(|_| SparseMatrix::from_pattern(&neighbors))
        .collect();
    let label_slot = |label: u8| labels.iter().position(|&l| l == label).unwrap();

    let volume_floor = 1e-14 * mesh.total_volume().abs() / mesh.num_tets() as f64;
    for (t, tet) in mesh.tets.iter().enumerate() {
        let p: Vec<[f64; 3]> = tet.iter().map(|&v| mesh.vertices[v]).collect();
        let d1 = sub(p[1], p[0]);
        let d2 = sub(p[2], p[0]);
        let d3 = sub(p[3], p[0]);
        let det = dot(d1, cross(d2, d3));
        let volume = det / 6.0;
        if !(volume.is_finite() && volume > volume_floor) {
            return Err(Error::Assembly(format!(
                "tet {t} is degenerate (volume {volume:.3e})"
            )));
        }
        // P1 basis gradients: rows of the inverse Jacobian.
        let g1 = scale(cross(d2, d3), 1.0 / det);
        let g2 = scale(cross(d3, d1), 1.0 / det);
        let g3 = scale(cross(d1, d2), 1.0 / det);
        let g0 = [
            -g1[0] - g2[0] - g3[0],
            -g1[1] - g2[1] - g3[1],
            -g1[2] - g2[2] - g3[2],
        ];
        let grads = [g0, g1, g2, g3];

        let ks = &mut stiffness[label_slot(mesh.cell_subdomain[t])];
        for i in 0..4 {
            for j in 0..4 {
                ks.add_at(tet[i], tet[j], volume * dot(grads[i], grads[j]));
            }
        }
        match lumping {
            MassLumping::Consistent => {
                for i in 0..4 {
                    for j in 0..4 {
                        let m = if i == j { volume / 10.0 } else { volume / 20.0 };
                        mass.add_at(tet[i], tet[j], m);
                    }
                }
            }
            MassLumping::Lumped => {
                for i in 0..4 {
                    mass.add_at(tet[i], tet[i], volume / 4.0);
                }
            }
        }
    }

    // Dirichlet split.
    let dirichlet = mesh.dirichlet_vertices();
    let mut dirichlet_pos = vec![usize::MAX; nv];
    for (local, &(v, _)) in dirichlet.iter().enumerate() {
        dirichlet_pos[v] = local;
    }
    let mut free = Vec::with_capacity(nv - dirichlet.len());
    let mut free_pos = vec![usize::MAX; nv];
    for v in 0..nv {
        if dirichlet_pos[v] == usize::MAX {
            free_pos[v] = free.len();
            free.push(v);
        }
    }

    // Shared surface pattern in boundary-local indexing.
    let nd = dirichlet.len();
    let mut surf_neighbors: Vec<Vec<usize>> = vec![Vec::new(); nd];
    let mut marked_facets: Vec<(Marker, [usize; 3])> = Vec::new();
    for f in &mesh.boundary_facets {
        if !f.marker.is_dirichlet() {
            continue;
        }
        let local = f.vertices.map(|v| dirichlet_pos[v]);
        debug_assert!(local.iter().all(|&l| l != usize::MAX));
        for &a in &local {
            for &b in &local {
                surf_neighbors[a].push(b);
            }
        }
        marked_facets.push((f.marker, local));
    }
    for row in &mut surf_neighbors {
        row.sort_unstable();
        row.dedup();
    }
    let mut surface_mass_sas = SparseMatrix::from_pattern(&surf_neighbors);
    let mut surface_mass_vent = surface_mass_sas.clone();
    let mut surface_stiffness_sas = surface_mass_sas.clone();
    let mut surface_stiffness_vent = surface_mass_sas.clone();

    for (marker, local) in &marked_facets {
        let world = local.map(|l| mesh.vertices[dirichlet[l].0]);
        let e0 = sub(world[2], world[1]);
        let e1 = sub(world[0], world[2]);
        let e2 = sub(world[1], world[0]);
        let normal = cross(e2, sub(world[2], world[0]));
        let area = 0.5 * dot(normal, normal).sqrt();
        if !(area.is_finite() && area > 0.0) {
            return Err(Error::Assembly("degenerate boundary facet".into()));
        }
        let edges = [e0, e1, e2];
        let (m, k) = match marker {
            Marker::RSas => (&mut surface_mass_sas, &mut surface_stiffness_sas),
            Marker::BVentricle => (&mut surface_mass_vent, &mut surface_stiffness_vent),
            _ => unreachable!(),
        };
        for i in 0..3 {
            for j in 0..3 {
                let mij = if i == j { area / 6.0 } else { area / 12.0 };
                m.add_at(local[i], local[j], mij);
                // Tangential (Laplace–Beltrami) stiffness on the flat triangle.
                k.add_at(local[i], local[j], dot(edges[i], edges[j]) / (4.0 * area));
            }
        }
    }

    Ok(AssembledSystem {
        mesh_id: mesh.id(),
        num_vertices: nv,
        labels,
        mass,
        stiffness,
        dirichlet,
        surface_mass_sas,
        surface_mass_vent,
        surface_stiffness_sas,
        surface_stiffness_vent,
        free,
        free_pos,
        dirichlet_pos,
    })
}

fn scale(v: [f64; 3], c: f64) -> [f64; 3] {
    [v[0] * c, v[1] * c, v[2] * c]
}
