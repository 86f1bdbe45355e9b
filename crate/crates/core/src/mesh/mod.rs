//! Tetrahedral meshes with subdomain labels and marked boundary facets.
//!
//! A [`Mesh`] is the discretization substrate for the transport solver: every
//! tet carries a subdomain label (CSF / grey / white) and every boundary
//! triangle carries a [`Marker`] that decides whether it receives Dirichlet
//! data or a homogeneous Neumann condition.

mod io;
mod phantom;
mod vtk;

pub use io::{read_field, read_mesh, write_field, write_mesh};
pub use phantom::{generate_phantom, PhantomVariant, DEFAULT_SHELL_FRACTIONS};
pub use vtk::export_vtk;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Subdomain label for cerebrospinal fluid.
pub const SUBDOMAIN_CSF: u8 = 1;
/// Subdomain label for grey matter.
pub const SUBDOMAIN_GREY: u8 = 2;
/// Subdomain label for white matter.
pub const SUBDOMAIN_WHITE: u8 = 3;

/// Boundary facet classification.
///
/// `RSas` (outer CSF-facing surface) and `BVentricle` (ventricle wall) are the
/// two Dirichlet surfaces; the Neumann markers identify insulated boundary
/// pieces that carry no unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    RSas,
    BVentricle,
    NeumannGreen,
    NeumannYellow,
}

impl Marker {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, Marker::RSas | Marker::BVentricle)
    }

    pub fn code(self) -> u8 {
        match self {
            Marker::RSas => 1,
            Marker::BVentricle => 2,
            Marker::NeumannGreen => 3,
            Marker::NeumannYellow => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Marker::RSas),
            2 => Some(Marker::BVentricle),
            3 => Some(Marker::NeumannGreen),
            4 => Some(Marker::NeumannYellow),
            _ => None,
        }
    }
}

/// A boundary triangle together with its marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub vertices: [usize; 3],
    pub marker: Marker,
}

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// Tetrahedral mesh with per-cell subdomain labels and marked boundary facets.
///
/// Coordinates are millimetres. Meshes are immutable once constructed; the
/// `id` ties [`VertexField`]s to the mesh they were built on.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    pub cell_subdomain: Vec<u8>,
    pub boundary_facets: Vec<BoundaryFacet>,
    id: u64,
}

/// One scalar per mesh vertex, bound to a specific mesh instance.
#[derive(Clone, Debug)]
pub struct VertexField {
    pub values: Vec<f64>,
    pub mesh_id: u64,
}

impl VertexField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Mesh {
    /// Builds a mesh from raw arrays, assigning a fresh id. Fails on
    /// inconsistent array lengths or out-of-range indices; full topological
    /// checks live in [`Mesh::validate`].
    pub fn new(
        vertices: Vec<[f64; 3]>,
        tets: Vec<[usize; 4]>,
        cell_subdomain: Vec<u8>,
        boundary_facets: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        if tets.len() != cell_subdomain.len() {
            return Err(Error::Mesh(format!(
                "{} tets but {} subdomain labels",
                tets.len(),
                cell_subdomain.len()
            )));
        }
        let nv = vertices.len();
        for tet in &tets {
            if tet.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh("tet vertex index out of range".into()));
            }
        }
        for f in &boundary_facets {
            if f.vertices.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh("facet vertex index out of range".into()));
            }
        }
        Ok(Mesh {
            vertices,
            tets,
            cell_subdomain,
            boundary_facets,
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    /// Signed volume of tet `t` under its stored vertex ordering.
    pub fn tet_signed_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        let p = &self.vertices;
        let u = sub(p[b], p[a]);
        let v = sub(p[c], p[a]);
        let w = sub(p[d], p[a]);
        dot(u, cross(v, w)) / 6.0
    }

    /// Sum of signed tet volumes.
    pub fn total_volume(&self) -> f64 {
        (0..self.num_tets()).map(|t| self.tet_signed_volume(t)).sum()
    }

    /// Sorted list of subdomain labels present in the mesh.
    pub fn present_subdomains(&self) -> Vec<u8> {
        let mut labels: Vec<u8> = self.cell_subdomain.clone();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Sorted Dirichlet vertices: every vertex that lies on a facet marked
    /// `RSas` or `BVentricle`, with `RSas` taking precedence where both touch.
    pub fn dirichlet_vertices(&self) -> Vec<(usize, Marker)> {
        let mut map: HashMap<usize, Marker> = HashMap::new();
        for f in &self.boundary_facets {
            if !f.marker.is_dirichlet() {
                continue;
            }
            for &v in &f.vertices {
                map.entry(v)
                    .and_modify(|m| {
                        if f.marker == Marker::RSas {
                            *m = Marker::RSas;
                        }
                    })
                    .or_insert(f.marker);
            }
        }
        let mut out: Vec<(usize, Marker)> = map.into_iter().collect();
        out.sort_unstable_by_key(|&(v, _)| v);
        out
    }

    /// Mask of vertices incident to at least one tet with the given label.
    pub fn vertex_subdomain_mask(&self, label: u8) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices()];
        for (t, tet) in self.tets.iter().enumerate() {
            if self.cell_subdomain[t] == label {
                for &v in tet {
                    mask[v] = true;
                }
            }
        }
        mask
    }

    /// Checks the structural invariants: positive tet volumes, labels in
    /// {1,2,3}, and the stored boundary facets matching the topological
    /// boundary (faces shared by exactly one tet) with interior faces shared
    /// by exactly two.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.num_tets() {
            if self.tet_signed_volume(t) <= 0.0 {
                return Err(Error::Mesh(format!("tet {t} has non-positive volume")));
            }
        }
        for (t, &label) in self.cell_subdomain.iter().enumerate() {
            if !(SUBDOMAIN_CSF..=SUBDOMAIN_WHITE).contains(&label) {
                return Err(Error::Mesh(format!("tet {t} has unknown subdomain label {label}")));
            }
        }
        let counts = self.face_counts();
        for (face, count) in &counts {
            if *count > 2 {
                return Err(Error::Mesh(format!(
                    "face {face:?} is shared by {count} tets; mesh is non-conforming"
                )));
            }
        }
        let mut marked: HashMap<[usize; 3], usize> = HashMap::new();
        for (i, f) in self.boundary_facets.iter().enumerate() {
            let key = sorted3(f.vertices);
            if marked.insert(key, i).is_some() {
                return Err(Error::Mesh(format!("boundary facet {key:?} listed twice")));
            }
            match counts.get(&key) {
                Some(1) => {}
                Some(n) => {
                    return Err(Error::Mesh(format!(
                        "facet {key:?} marked as boundary but belongs to {n} tets"
                    )))
                }
                None => {
                    return Err(Error::Mesh(format!(
                        "facet {key:?} marked as boundary but is no tet face"
                    )))
                }
            }
        }
        let n_boundary = counts.values().filter(|&&c| c == 1).count();
        if n_boundary != self.boundary_facets.len() {
            return Err(Error::Mesh(format!(
                "{} topological boundary faces but {} marked facets",
                n_boundary,
                self.boundary_facets.len()
            )));
        }
        Ok(())
    }

    /// Constructs a field bound to this mesh; values must be finite and match
    /// the vertex count.
    pub fn field(&self, values: Vec<f64>) -> Result<VertexField> {
        if values.len() != self.num_vertices() {
            return Err(Error::Invalid(format!(
                "field has {} values for a mesh with {} vertices",
                values.len(),
                self.num_vertices()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("field contains non-finite values".into()));
        }
        Ok(VertexField {
            values,
            mesh_id: self.id,
        })
    }

    pub fn constant_field(&self, value: f64) -> VertexField {
        VertexField {
            values: vec![value; self.num_vertices()],
            mesh_id: self.id,
        }
    }

    /// Returns a copy with tets (and labels) reordered; used by assembly
    /// order-independence tests.
    pub fn with_permuted_tets(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_tets() {
            return Err(Error::Mesh("permutation length mismatch".into()));
        }
        let tets = perm.iter().map(|&t| self.tets[t]).collect();
        let labels = perm.iter().map(|&t| self.cell_subdomain[t]).collect();
        Mesh::new(self.vertices.clone(), tets, labels, self.boundary_facets.clone())
    }

    fn face_counts(&self) -> HashMap<[usize; 3], usize> {
        let mut counts = HashMap::with_capacity(self.num_tets() * 2);
        for tet in &self.tets {
            for face in tet_faces(tet) {
                *counts.entry(sorted3(face)).or_insert(0) += 1;
            }
        }
        counts
    }
}

pub(crate) fn tet_faces(tet: &[usize; 4]) -> [[usize; 3]; 4] {
    let [a, b, c, d] = *tet;
    [[b, c, d], [a, c, d], [a, b, d], [a, b, c]]
}

pub(crate) fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
