//! Synthetic box phantoms standing in for patient-specific geometries.
//!
//! A phantom is a structured cube `[0,L]^3` split into `resolution^3` cells,
//! each subdivided into 6 positively oriented tets (Kuhn subdivision, all
//! cells using the same diagonal so shared faces match). Two variants mirror
//! the two study geometries:
//!
//! * `ThreeDomain` — nested shells: CSF on the outside, a grey shell below
//!   it, white core. The whole outer surface is Dirichlet (`RSas`).
//! * `TwoDomain` — no CSF subdomain; a centered cubic cavity is removed and
//!   its wall marked `BVentricle`, the outer surface is `RSas`, with a grey
//!   shell over a white remainder.
//!
//! Subdomain labels are assigned per tet from the Chebyshev distance of the
//! tet centroid to the outer surface, with shell thicknesses given as
//! fractions of the edge length `L`. The defaults make each shell exactly one
//! cell layer at `resolution = 8`, so the grey shell separates CSF from white
//! matter cell-by-cell.

use super::{
    sorted3, tet_faces, BoundaryFacet, Marker, Mesh, SUBDOMAIN_CSF, SUBDOMAIN_GREY,
    SUBDOMAIN_WHITE,
};
use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomVariant {
    TwoDomain,
    ThreeDomain,
}

/// Shell thickness fractions (of the box edge length) giving one resolved
/// cell layer per shell at `resolution = 8`.
///
/// For `ThreeDomain` the entries are (CSF shell, grey shell); for `TwoDomain`
/// they are (cavity half-width, grey shell).
pub const DEFAULT_SHELL_FRACTIONS: [f64; 2] = [0.125, 0.125];

/// Generates a box phantom. `resolution` is cells per axis (>= 4),
/// `box_length` the edge length in mm.
pub fn generate_phantom(
    resolution: usize,
    box_length: f64,
    variant: PhantomVariant,
    shell_fractions: [f64; 2],
) -> Result<Mesh> {
    if resolution < 4 {
        return Err(Error::Mesh(format!(
            "phantom resolution must be at least 4, got {resolution}"
        )));
    }
    if !(box_length.is_finite() && box_length > 0.0) {
        return Err(Error::Mesh("box length must be positive".into()));
    }
    let [f0, f1] = shell_fractions;
    if !(f0 > 0.0 && f1 > 0.0) {
        return Err(Error::Mesh("shell fractions must be positive".into()));
    }
    if f0 + f1 >= 0.5 {
        return Err(Error::Mesh(format!(
            "shell fractions sum to {}, must stay below 0.5",
            f0 + f1
        )));
    }

    let n = resolution;
    let h = box_length / n as f64;
    let eps = 1e-9 * box_length;

    // Lattice vertices, then compaction of the ones actually referenced.
    let np = n + 1;
    let lattice = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let cavity = |i: usize, j: usize, k: usize| -> bool {
        if variant != PhantomVariant::TwoDomain {
            return false;
        }
        let center_dist = |c: usize| ((c as f64 + 0.5) * h - 0.5 * box_length).abs();
        let d = center_dist(i).max(center_dist(j)).max(center_dist(k));
        d <= f0 * box_length + eps
    };

    let mut tets: Vec<[usize; 4]> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut cavity_cells = 0usize;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if cavity(i, j, k) {
                    cavity_cells += 1;
                    if i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1 {
                        return Err(Error::Mesh(
                            "cavity reaches the outer surface; reduce the cavity fraction".into(),
                        ));
                    }
                    continue;
                }
                let corner = |dx: usize, dy: usize, dz: usize| lattice(i + dx, j + dy, k + dz);
                for perm in KUHN_PERMUTATIONS {
                    let mut steps = [[0usize; 3]; 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        steps[s + 1] = steps[s];
                        steps[s + 1][axis] = 1;
                    }
                    let mut tet = steps.map(|[dx, dy, dz]| corner(dx, dy, dz));
                    if permutation_sign(perm) < 0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);

                    // Label from the centroid's Chebyshev depth below the
                    // outer surface.
                    let centroid_axis = |axis: usize, base: usize| {
                        let s: usize = steps.iter().map(|st| st[axis]).sum();
                        (base as f64 + s as f64 / 4.0) * h
                    };
                    let coords = [centroid_axis(0, i), centroid_axis(1, j), centroid_axis(2, k)];
                    let depth = coords
                        .iter()
                        .map(|&c| c.min(box_length - c))
                        .fold(f64::INFINITY, f64::min);
                    let label = match variant {
                        PhantomVariant::ThreeDomain => {
                            if depth <= f0 * box_length + eps {
                                SUBDOMAIN_CSF
                            } else if depth <= (f0 + f1) * box_length + eps {
                                SUBDOMAIN_GREY
                            } else {
                                SUBDOMAIN_WHITE
                            }
                        }
                        PhantomVariant::TwoDomain => {
                            if depth <= f1 * box_length + eps {
                                SUBDOMAIN_GREY
                            } else {
                                SUBDOMAIN_WHITE
                            }
                        }
                    };
                    labels.push(label);
                }
            }
        }
    }

    if variant == PhantomVariant::TwoDomain && cavity_cells == 0 {
        return Err(Error::Mesh(
            "resolution too small to hold the requested cavity".into(),
        ));
    }
    let expected: &[u8] = match variant {
        PhantomVariant::ThreeDomain => &[SUBDOMAIN_CSF, SUBDOMAIN_GREY, SUBDOMAIN_WHITE],
        PhantomVariant::TwoDomain => &[SUBDOMAIN_GREY, SUBDOMAIN_WHITE],
    };
    for &want in expected {
        if !labels.contains(&want) {
            return Err(Error::Mesh(format!(
                "resolution too small to hold the requested shells (subdomain {want} is empty)"
            )));
        }
    }

    // Compact vertex indices (cavity interiors drop out).
    let mut remap = vec![usize::MAX; np * np * np];
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    for tet in &mut tets {
        for v in tet.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = vertices.len();
                let i = *v % np;
                let j = (*v / np) % np;
                let k = *v / (np * np);
                vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
            *v = remap[*v];
        }
    }

    // Topological boundary: faces owned by exactly one tet.
    let mut faces: HashMap<[usize; 3], ([usize; 3], usize)> =
        HashMap::with_capacity(tets.len() * 2);
    for tet in &tets {
        for face in tet_faces(tet) {
            faces.entry(sorted3(face)).or_insert((face, 0)).1 += 1;
        }
    }
    let mut boundary_facets: Vec<BoundaryFacet> = Vec::new();
    let mut keys: Vec<[usize; 3]> = faces
        .iter()
        .filter(|(_, &(_, c))| c == 1)
        .map(|(&k, _)| k)
        .collect();
    keys.sort_unstable();
    for key in keys {
        let face = faces[&key].0;
        let on_outer = (0..3).any(|axis| {
            face.iter()
                .all(|&v| vertices[v][axis].abs() <= eps || (vertices[v][axis] - box_length).abs() <= eps)
        });
        let marker = if on_outer { Marker::RSas } else { Marker::BVentricle };
        boundary_facets.push(BoundaryFacet {
            vertices: face,
            marker,
        });
    }

    let mesh = Mesh::new(vertices, tets, labels, boundary_facets)?;
    debug_assert!(mesh.validate().is_ok());
    Ok(mesh)
}

/// The six axis permutations of the Kuhn subdivision; each walks from the low
/// cube corner to the high corner one axis at a time.
const KUHN_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn permutation_sign(p: [usize; 3]) -> i32 {
    let mut sign = 1;
    if p[0] > p[1] {
        sign = -sign;
    }
    if p[1] > p[2] {
        sign = -sign;
    }
    if p[0] > p[2] {
        sign = -sign;
    }
    sign
}
