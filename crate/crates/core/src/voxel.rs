//! Regular voxel grids with an affine index→world map, the two boundary
//! denoising schemes (Gaussian smoothing and CSF projection), and voxel→mesh
//! sampling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::{Marker, Mesh, VertexField};

/// Scalar grid over `dims` voxels in x-fastest order. `affine` maps voxel
/// indices (centers at integer coordinates) to world mm; `labels`, when
/// present, marks CSF voxels with non-zero values.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub affine: [[f64; 4]; 4],
    pub values: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    inverse: [[f64; 4]; 4],
}

impl VoxelGrid {
    pub fn new(
        dims: [usize; 3],
        affine: [[f64; 4]; 4],
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if n == 0 {
            return Err(Error::Voxel("empty grid".into()));
        }
        if values.len() != n {
            return Err(Error::Voxel(format!("{} values for {} voxels", values.len(), n)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Voxel("grid contains non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Voxel("label grid size mismatch".into()));
            }
        }
        let inverse = invert_affine(&affine)
            .ok_or_else(|| Error::Voxel("affine matrix is not invertible".into()))?;
        Ok(VoxelGrid {
            dims,
            affine,
            values,
            labels,
            inverse,
        })
    }

    /// Axis-aligned grid with `spacing` mm voxels and the first voxel center
    /// at `origin`.
    pub fn axis_aligned(
        dims: [usize; 3],
        origin: [f64; 3],
        spacing: [f64; 3],
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut affine = [[0.0; 4]; 4];
        for a in 0..3 {
            affine[a][a] = spacing[a];
            affine[a][3] = origin[a];
        }
        affine[3][3] = 1.0;
        VoxelGrid::new(dims, affine, values, None)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn world_from_index(&self, idx: [f64; 3]) -> [f64; 3] {
        apply_affine(&self.affine, idx)
    }

    pub fn index_from_world(&self, world: [f64; 3]) -> [f64; 3] {
        apply_affine(&self.inverse, world)
    }

    /// The containing voxel of a world point: nearest center, clamped to the
    /// grid. The flag reports whether clamping moved the point.
    pub fn containing_voxel(&self, world: [f64; 3]) -> ([usize; 3], bool) {
        let idx = self.index_from_world(world);
        let mut out = [0usize; 3];
        let mut clamped = false;
        for a in 0..3 {
            let r = idx[a].round();
            let c = r.clamp(0.0, (self.dims[a] - 1) as f64);
            if (idx[a] - c).abs() > 0.5 + 1e-9 {
                clamped = true;
            }
            out[a] = c as usize;
        }
        (out, clamped)
    }

    /// Voxel spacing along each axis (column norms of the linear part).
    pub fn spacing(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (a, slot) in s.iter_mut().enumerate() {
            *slot = (0..3).map(|r| self.affine[r][a] * self.affine[r][a]).sum::<f64>().sqrt();
        }
        s
    }
}

fn apply_affine(m: &[[f64; 4]; 4], v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, slot) in out.iter_mut().enumerate() {
        *slot = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3];
    }
    out
}

fn invert_affine(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    // Invert the 3x3 linear block, then the translation.
    let a = m;
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let inv = [
        [
            (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det,
            (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det,
            (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det,
        ],
        [
            (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det,
            (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det,
            (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det,
        ],
        [
            (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det,
            (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det,
            (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det,
        ],
    ];
    let mut out = [[0.0; 4]; 4];
    for r in 0..3 {
        out[r][..3].copy_from_slice(&inv[r]);
        out[r][3] = -(inv[r][0] * a[0][3] + inv[r][1] * a[1][3] + inv[r][2] * a[2][3]);
    }
    out[3][3] = 1.0;
    Some(out)
}

/// Separable discrete Gaussian with reflect (mirror) boundary handling.
///
/// `sigma` is in mm and is converted per axis through the voxel spacing; the
/// kernel has radius `ceil(4 sigma)` in voxels and is normalized to unit sum.
/// `sigma = 0` is the identity.
pub fn gaussian_smooth(grid: &VoxelGrid, sigma: f64) -> Result<VoxelGrid> {
    if sigma < 0.0 {
        return Err(Error::Voxel("sigma must be non-negative".into()));
    }
    let mut out = grid.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let spacing = grid.spacing();
    for axis in 0..3 {
        let sigma_vox = sigma / spacing[axis];
        let radius = (4.0 * sigma_vox).ceil() as i64;
        if radius == 0 {
            continue;
        }
        let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
        for o in -radius..=radius {
            kernel.push((-0.5 * (o as f64 / sigma_vox).powi(2)).exp());
        }
        let total: f64 = kernel.iter().sum();
        for k in kernel.iter_mut() {
            *k /= total;
        }
        out = convolve_axis(&out, axis, &kernel, radius);
    }
    Ok(out)
}

fn convolve_axis(grid: &VoxelGrid, axis: usize, kernel: &[f64], radius: i64) -> VoxelGrid {
    let [nx, ny, nz] = grid.dims;
    let n_axis = grid.dims[axis] as i64;
    let mut out = grid.clone();
    // Mirror reflection about the edge samples: -1 -> 0, n -> n-1.
    let reflect = |mut p: i64| -> usize {
        if n_axis == 1 {
            return 0;
        }
        let period = 2 * n_axis;
        p = p.rem_euclid(period);
        if p >= n_axis {
            p = period - 1 - p;
        }
        p as usize
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let base = [i as i64, j as i64, k as i64];
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let mut idx = base;
                    idx[axis] = base[axis] + t as i64 - radius;
                    let wrapped = reflect(idx[axis]);
                    let mut pos = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
                    pos[axis] = wrapped;
                    acc += w * grid.values[grid.index(pos[0], pos[1], pos[2])];
                }
                let target = out.index(i, j, k);
                out.values[target] = acc;
            }
        }
    }
    out
}

/// Interpolation mode for [`sample_to_mesh`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Trilinear,
    Nearest,
}

/// A vertex field sampled from a grid, with the vertices that fell outside
/// the grid (and were clamped) listed.
#[derive(Clone, Debug)]
pub struct SampledField {
    pub field: VertexField,
    pub clamped: Vec<usize>,
}

/// Samples grid values at every mesh vertex.
pub fn sample_to_mesh(grid: &VoxelGrid, mesh: &Mesh, mode: SampleMode) -> Result<SampledField> {
    let mut values = Vec::with_capacity(mesh.num_vertices());
    let mut clamped = Vec::new();
    for (v, p) in mesh.vertices.iter().enumerate() {
        let idx = grid.index_from_world(*p);
        let mut inside = true;
        let mut q = [0.0; 3];
        for a in 0..3 {
            let hi = (grid.dims[a] - 1) as f64;
            q[a] = idx[a].clamp(0.0, hi);
            if (idx[a] - q[a]).abs() > 1e-9 {
                inside = false;
            }
        }
        if !inside {
            clamped.push(v);
        }
        let value = match mode {
            SampleMode::Nearest => {
                let (vox, _) = grid.containing_voxel(*p);
                grid.values[grid.index(vox[0], vox[1], vox[2])]
            }
            SampleMode::Trilinear => trilinear(grid, q),
        };
        values.push(value);
    }
    Ok(SampledField {
        field: mesh.field(values)?,
        clamped,
    })
}

fn trilinear(grid: &VoxelGrid, q: [f64; 3]) -> f64 {
    let mut i0 = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let f = q[a].floor().min((grid.dims[a] - 1) as f64 - 1.0).max(0.0);
        i0[a] = f as usize;
        frac[a] = (q[a] - f).clamp(0.0, 1.0);
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 0 { 1.0 - frac[0] } else { frac[0] })
                    * (if dy == 0 { 1.0 - frac[1] } else { frac[1] })
                    * (if dz == 0 { 1.0 - frac[2] } else { frac[2] });
                let i = (i0[0] + dx).min(grid.dims[0] - 1);
                let j = (i0[1] + dy).min(grid.dims[1] - 1);
                let k = (i0[2] + dz).min(grid.dims[2] - 1);
                acc += w * grid.values[grid.index(i, j, k)];
            }
        }
    }
    acc
}

/// CSF projection of boundary values.
#[derive(Clone, Debug)]
pub struct CsfProjection {
    /// Global vertex indices (the Dirichlet vertices with a selected marker).
    pub vertices: Vec<usize>,
    pub values: Vec<f64>,
    /// Vertices whose 7x7x7 neighborhood held no CSF voxel and fell back to
    /// the nearest CSF voxel value.
    pub fallback: Vec<usize>,
}

/// For each boundary vertex with one of the requested markers, averages the
/// signal over CSF-labelled voxels in the 7x7x7 neighborhood of its
/// containing voxel (clipped at grid edges). Empty neighborhoods take the
/// value of the nearest CSF voxel and are flagged.
pub fn csf_project(
    signal: &VoxelGrid,
    csf_mask: &VoxelGrid,
    mesh: &Mesh,
    markers: &[Marker],
) -> Result<CsfProjection> {
    let labels = csf_mask
        .labels
        .as_ref()
        .ok_or_else(|| Error::Voxel("CSF mask grid carries no labels".into()))?;
    if csf_mask.dims != signal.dims {
        return Err(Error::Voxel("signal and mask grids differ in shape".into()));
    }
    if !labels.iter().any(|&l| l != 0) {
        return Err(Error::Voxel("mask contains no CSF voxels".into()));
    }

    let csf_voxels: Vec<[i64; 3]> = (0..signal.len())
        .filter(|&v| labels[v] != 0)
        .map(|v| {
            let i = v % signal.dims[0];
            let j = (v / signal.dims[0]) % signal.dims[1];
            let k = v / (signal.dims[0] * signal.dims[1]);
            [i as i64, j as i64, k as i64]
        })
        .collect();

    let mut vertices = Vec::new();
    let mut values = Vec::new();
    let mut fallback = Vec::new();
    for (v, marker) in mesh.dirichlet_vertices() {
        if !markers.contains(&marker) {
            continue;
        }
        let (center, _) = signal.containing_voxel(mesh.vertices[v]);
        let c = [center[0] as i64, center[1] as i64, center[2] as i64];
        let mut acc = 0.0;
        let mut count = 0usize;
        for dk in -3i64..=3 {
            for dj in -3i64..=3 {
                for di in -3i64..=3 {
                    let (i, j, k) = (c[0] + di, c[1] + dj, c[2] + dk);
                    if i < 0
                        || j < 0
                        || k < 0
                        || i >= signal.dims[0] as i64
                        || j >= signal.dims[1] as i64
                        || k >= signal.dims[2] as i64
                    {
                        continue;
                    }
                    let idx = signal.index(i as usize, j as usize, k as usize);
                    if labels[idx] != 0 {
                        acc += signal.values[idx];
                        count += 1;
                    }
                }
            }
        }
        let value = if count > 0 {
            acc / count as f64
        } else {
            fallback.push(v);
            let nearest = csf_voxels
                .iter()
                .min_by(|p, q| {
                    let dp = dist2(p, &c);
                    let dq = dist2(q, &c);
                    dp.cmp(&dq)
                })
                .expect("mask has CSF voxels");
            signal.values[signal.index(nearest[0] as usize, nearest[1] as usize, nearest[2] as usize)]
        };
        vertices.push(v);
        values.push(value);
    }
    Ok(CsfProjection {
        vertices,
        values,
        fallback,
    })
}

fn dist2(a: &[i64; 3], b: &[i64; 3]) -> i64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

const VOXEL_MAGIC: &str = "ADCVOX 1";

/// Writes the grid (and, when labels are present, a companion `.mask` file in
/// the same format).
pub fn write_voxel_grid(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_voxel_payload(path, grid.dims, &grid.affine, grid.values.iter().copied())?;
    if let Some(labels) = &grid.labels {
        write_voxel_payload(
            &mask_path(path),
            grid.dims,
            &grid.affine,
            labels.iter().map(|&l| l as f64),
        )?;
    }
    Ok(())
}

fn write_voxel_payload(
    path: &Path,
    dims: [usize; 3],
    affine: &[[f64; 4]; 4],
    values: impl Iterator<Item = f64>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let r = (|| -> std::io::Result<()> {
        writeln!(w, "{VOXEL_MAGIC}")?;
        writeln!(w, "{} {} {}", dims[0], dims[1], dims[2])?;
        for row in affine {
            writeln!(w, "{:.16e} {:.16e} {:.16e} {:.16e}", row[0], row[1], row[2], row[3])?;
        }
        for v in values {
            writeln!(w, "{v:.16e}")?;
        }
        w.flush()
    })();
    r.map_err(|e| Error::io(path, e))
}

/// Reads a grid; a companion `.mask` file, when present, populates the labels.
pub fn read_voxel_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let (dims, affine, values) = read_voxel_payload(path)?;
    let mask = mask_path(path);
    let labels = if mask.exists() {
        let (mdims, _, mvalues) = read_voxel_payload(&mask)?;
        if mdims != dims {
            return Err(Error::Voxel("mask grid shape differs from the data grid".into()));
        }
        Some(mvalues.iter().map(|&v| if v != 0.0 { 1u8 } else { 0u8 }).collect())
    } else {
        None
    };
    VoxelGrid::new(dims, affine, values, labels)
}

fn read_voxel_payload(path: &Path) -> Result<([usize; 3], [[f64; 4]; 4], Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0usize;
    let next = |reader: &mut BufReader<File>, line: &mut String, line_no: &mut usize| -> Result<String> {
        line.clear();
        *line_no += 1;
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, *line_no, "unexpected end of file"));
        }
        Ok(line.trim().to_string())
    };
    let header = next(&mut reader, &mut line, &mut line_no)?;
    if header != VOXEL_MAGIC {
        return Err(Error::parse(path, line_no, "malformed header, expected 'ADCVOX 1'"));
    }
    let dims_line = next(&mut reader, &mut line, &mut line_no)?;
    let dims_vec: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, line_no, "malformed dimension")))
        .collect::<Result<_>>()?;
    if dims_vec.len() != 3 {
        return Err(Error::parse(path, line_no, "expected three dimensions"));
    }
    let dims = [dims_vec[0], dims_vec[1], dims_vec[2]];
    let mut affine = [[0.0; 4]; 4];
    for row in affine.iter_mut() {
        let text = next(&mut reader, &mut line, &mut line_no)?;
        let mut it = text.split_whitespace();
        for slot in row.iter_mut() {
            let tok = it
                .next()
                .ok_or_else(|| Error::parse(path, line_no, "missing affine entry"))?;
            *slot = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, "malformed affine entry"))?;
        }
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let text = next(&mut reader, &mut line, &mut line_no)?;
        values.push(
            text.parse()
                .map_err(|_| Error::parse(path, line_no, "malformed scalar"))?,
        );
    }
    Ok((dims, affine, values))
}

fn mask_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".mask");
    PathBuf::from(os)
}
