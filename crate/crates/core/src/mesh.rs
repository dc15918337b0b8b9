//! Structured hexahedral box meshes with Q1 (trilinear) elements.
//!
//! Global nodes are numbered with `z` fastest and `x` slowest so the dof
//! bandwidth is governed by the cross-section, which is the small dimension
//! of a beam. Node `i` owns dofs `3i, 3i + 1, 3i + 2`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("box extent must be positive, got {0:?}")]
    BadExtent([f64; 3]),
    #[error("box divisions must be at least 1, got {0:?}")]
    BadDivisions([usize; 3]),
    #[error("dof index {0} out of range (dof count {1})")]
    DofOutOfRange(usize, usize),
    #[error("empty magic-point set")]
    EmptyMagicSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Dirichlet,
    NeumannPressure,
    Homogeneous,
}

impl BoundaryTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Some(Self::Dirichlet),
            "neumann" | "pressure" | "neumannpressure" | "n" => Some(Self::NeumannPressure),
            "homogeneous" | "free" | "h" => Some(Self::Homogeneous),
            _ => None,
        }
    }
}

/// Tags for the six box faces, ordered `x-, x+, y-, y+, z-, z+`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceTags(pub [BoundaryTag; 6]);

impl FaceTags {
    /// Clamped at `x = 0`, pressure on `z = 0`, free elsewhere.
    pub fn beam() -> Self {
        use BoundaryTag::*;
        Self([Dirichlet, Homogeneous, Homogeneous, Homogeneous, NeumannPressure, Homogeneous])
    }
}

impl Default for FaceTags {
    fn default() -> Self {
        Self::beam()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFacet {
    pub element: usize,
    /// Local face index, `0..6` in the order `ξ-, ξ+, η-, η+, ζ-, ζ+`.
    pub face: usize,
    pub tag: BoundaryTag,
}

/// Local node of the reference cube with coordinates `(±1, ±1, ±1)`;
/// lexicographic order `a = ix + 2 iy + 4 iz`.
pub const REF_NODES: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// Local nodes on each face, `ξ-, ξ+, η-, η+, ζ-, ζ+`.
pub const FACE_NODES: [[usize; 4]; 6] = [
    [0, 2, 4, 6],
    [1, 3, 5, 7],
    [0, 1, 4, 5],
    [2, 3, 6, 7],
    [0, 1, 2, 3],
    [4, 5, 6, 7],
];

#[derive(Clone, Debug)]
pub struct Mesh {
    pub node_coords: Vec<[f64; 3]>,
    pub hex_elements: Vec<[usize; 8]>,
    pub boundary_facets: Vec<BoundaryFacet>,
    pub extent: [f64; 3],
    pub divisions: [usize; 3],
}

impl Mesh {
    #[inline]
    pub fn node_count(&self) -> usize {
        self.node_coords.len()
    }

    #[inline]
    pub fn element_count(&self) -> usize {
        self.hex_elements.len()
    }

    #[inline]
    pub fn dof_count(&self) -> usize {
        3 * self.node_count()
    }

    /// Global dofs of an element, node-major.
    pub fn element_dofs(&self, e: usize) -> [usize; 24] {
        let mut d = [0; 24];
        for (a, &n) in self.hex_elements[e].iter().enumerate() {
            for c in 0..3 {
                d[3 * a + c] = 3 * n + c;
            }
        }
        d
    }

    pub fn facets_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFacet> {
        self.boundary_facets.iter().filter(move |f| f.tag == tag)
    }

    /// Sorted dofs of every node touching a Dirichlet facet.
    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        let mut nodes = BTreeSet::new();
        for f in self.facets_with_tag(BoundaryTag::Dirichlet) {
            for &a in &FACE_NODES[f.face] {
                nodes.insert(self.hex_elements[f.element][a]);
            }
        }
        nodes.into_iter().flat_map(|n| [3 * n, 3 * n + 1, 3 * n + 2]).collect()
    }

    /// Lower/upper half bandwidth of the dof connectivity graph.
    pub fn dof_bandwidth(&self) -> usize {
        self.hex_elements
            .iter()
            .map(|el| {
                let lo = el.iter().min().unwrap();
                let hi = el.iter().max().unwrap();
                3 * (hi - lo) + 2
            })
            .max()
            .unwrap_or(0)
    }

    /// Elements incident to each node.
    pub fn node_elements(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for (e, el) in self.hex_elements.iter().enumerate() {
            for &n in el {
                adj[n].push(e);
            }
        }
        adj
    }

    /// Node index closest to a physical point.
    pub fn nearest_node(&self, p: [f64; 3]) -> usize {
        let d2 = |x: &[f64; 3]| (0..3).map(|c| (x[c] - p[c]).powi(2)).sum::<f64>();
        (0..self.node_count())
            .min_by(|&a, &b| d2(&self.node_coords[a]).partial_cmp(&d2(&self.node_coords[b])).unwrap())
            .unwrap()
    }

    /// Plain-text listing: header line, then `node i x y z` and
    /// `elem e n0 .. n7` and `facet e face tag` records.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# mesh nodes={} elements={} dofs={} facets={}",
            self.node_count(),
            self.element_count(),
            self.dof_count(),
            self.boundary_facets.len()
        );
        for (i, p) in self.node_coords.iter().enumerate() {
            let _ = writeln!(s, "node {i} {:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
        }
        for (e, el) in self.hex_elements.iter().enumerate() {
            let _ = write!(s, "elem {e}");
            for n in el {
                let _ = write!(s, " {n}");
            }
            s.push('\n');
        }
        for f in &self.boundary_facets {
            let _ = writeln!(s, "facet {} {} {:?}", f.element, f.face, f.tag);
        }
        s
    }
}

/// Structured box `[0, ex] x [0, ey] x [0, ez]` with beam face tags.
pub fn build_box_mesh(extent: [f64; 3], divisions: [usize; 3]) -> Result<Mesh, MeshError> {
    build_box_mesh_tagged(extent, divisions, FaceTags::beam())
}

pub fn build_box_mesh_tagged(
    extent: [f64; 3],
    divisions: [usize; 3],
    tags: FaceTags,
) -> Result<Mesh, MeshError> {
    if extent.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(MeshError::BadExtent(extent));
    }
    if divisions.iter().any(|&d| d == 0) {
        return Err(MeshError::BadDivisions(divisions));
    }
    let [nx, ny, nz] = divisions;
    let node = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;

    let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                node_coords.push([
                    extent[0] * i as f64 / nx as f64,
                    extent[1] * j as f64 / ny as f64,
                    extent[2] * k as f64 / nz as f64,
                ]);
            }
        }
    }

    let mut hex_elements = Vec::with_capacity(nx * ny * nz);
    let mut boundary_facets = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let e = hex_elements.len();
                let mut el = [0; 8];
                for (a, r) in REF_NODES.iter().enumerate() {
                    let di = (r[0] > 0.0) as usize;
                    let dj = (r[1] > 0.0) as usize;
                    let dk = (r[2] > 0.0) as usize;
                    el[a] = node(i + di, j + dj, k + dk);
                }
                hex_elements.push(el);
                let on_face = [i == 0, i + 1 == nx, j == 0, j + 1 == ny, k == 0, k + 1 == nz];
                for (face, &on) in on_face.iter().enumerate() {
                    if on {
                        boundary_facets.push(BoundaryFacet {
                            element: e,
                            face,
                            tag: tags.0[face],
                        });
                    }
                }
            }
        }
    }

    Ok(Mesh {
        node_coords,
        hex_elements,
        boundary_facets,
        extent,
        divisions,
    })
}

/// Values and reference gradients of the eight trilinear shape functions.
pub fn shape_eval(xi: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    debug_assert!(
        xi.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)),
        "point {xi:?} outside the reference cube"
    );
    let mut n = [0.0; 8];
    let mut dn = [[0.0; 3]; 8];
    for (a, r) in REF_NODES.iter().enumerate() {
        let fx = 0.5 * (1.0 + r[0] * xi[0]);
        let fy = 0.5 * (1.0 + r[1] * xi[1]);
        let fz = 0.5 * (1.0 + r[2] * xi[2]);
        n[a] = fx * fy * fz;
        dn[a] = [0.5 * r[0] * fy * fz, 0.5 * r[1] * fx * fz, 0.5 * r[2] * fx * fy];
    }
    (n, dn)
}

/// 2-point Gauss–Legendre abscissa; weights are all one.
pub const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// 2x2x2 tensor Gauss points of the reference cube.
pub fn volume_gauss_points() -> [[f64; 3]; 8] {
    let mut p = [[0.0; 3]; 8];
    let mut q = 0;
    for &z in &GAUSS_2 {
        for &y in &GAUSS_2 {
            for &x in &GAUSS_2 {
                p[q] = [x, y, z];
                q += 1;
            }
        }
    }
    p
}

/// 2x2 Gauss points on a reference face, embedded in the cube.
pub fn face_gauss_points(face: usize) -> [[f64; 3]; 4] {
    let axis = face / 2;
    let side = if face % 2 == 0 { -1.0 } else { 1.0 };
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut p = [[0.0; 3]; 4];
    let mut q = 0;
    for &s in &GAUSS_2 {
        for &r in &GAUSS_2 {
            p[q][axis] = side;
            p[q][a1] = r;
            p[q][a2] = s;
            q += 1;
        }
    }
    p
}

/// Outward reference normal direction of a local face.
pub fn face_axis(face: usize) -> (usize, f64) {
    (face / 2, if face % 2 == 0 { -1.0 } else { 1.0 })
}

/// Reference-to-physical Jacobian `∂X/∂ξ` (row = physical component).
pub fn map_jacobian(coords: &[[f64; 3]; 8], dn: &[[f64; 3]; 8]) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for a in 0..8 {
        for r in 0..3 {
            for c in 0..3 {
                j[r][c] += coords[a][r] * dn[a][c];
            }
        }
    }
    j
}

pub fn element_coords(mesh: &Mesh, e: usize) -> [[f64; 3]; 8] {
    let mut c = [[0.0; 3]; 8];
    for (a, &n) in mesh.hex_elements[e].iter().enumerate() {
        c[a] = mesh.node_coords[n];
    }
    c
}

/// Elements and dofs needed to evaluate selected residual rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedMesh {
    pub element_subset: Vec<usize>,
    pub active_dofs: Vec<usize>,
    pub magic_dof_rows: Vec<usize>,
}

/// Every element sharing a node with a magic dof, plus all dofs of those
/// elements.
pub fn extract_reduced_mesh(mesh: &Mesh, magic_dofs: &[usize]) -> Result<ReducedMesh, MeshError> {
    if magic_dofs.is_empty() {
        return Err(MeshError::EmptyMagicSet);
    }
    let ndof = mesh.dof_count();
    if let Some(&bad) = magic_dofs.iter().find(|&&d| d >= ndof) {
        return Err(MeshError::DofOutOfRange(bad, ndof));
    }
    let adj = mesh.node_elements();
    let mut elements = BTreeSet::new();
    for &d in magic_dofs {
        elements.extend(adj[d / 3].iter().copied());
    }
    let mut dofs = BTreeSet::new();
    for &e in &elements {
        dofs.extend(mesh.element_dofs(e));
    }
    Ok(ReducedMesh {
        element_subset: elements.into_iter().collect(),
        active_dofs: dofs.into_iter().collect(),
        magic_dof_rows: magic_dofs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_cube_counts() {
        let m = build_box_mesh([1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!(m.element_count(), 1);
        assert_eq!(m.node_count(), 8);
        assert_eq!(m.dof_count(), 24);
        assert_eq!(m.boundary_facets.len(), 6);
    }

    #[test]
    fn default_beam_dimension() {
        let m = build_box_mesh([1e-2, 1e-3, 1e-3], [40, 4, 4]).unwrap();
        assert_eq!(m.element_count(), 640);
        assert_eq!(m.node_count(), 1025);
        assert_eq!(m.dof_count(), 3075);
    }

    #[test]
    fn coarse_beam_dimension() {
        let m = build_box_mesh([1e-2, 1e-3, 1e-3], [10, 2, 2]).unwrap();
        assert_eq!(m.element_count(), 40);
        assert_eq!(m.node_count(), 11 * 3 * 3);
        assert_eq!(m.dof_count(), 297);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_box_mesh([1.0, 0.0, 1.0], [1, 1, 1]).is_err());
        assert!(build_box_mesh([1.0, -1.0, 1.0], [1, 1, 1]).is_err());
        assert!(build_box_mesh([1.0; 3], [1, 0, 1]).is_err());
    }

    #[test]
    fn shape_nodal_and_centroid() {
        let (n, _) = shape_eval([-1.0, -1.0, -1.0]);
        assert_eq!(n[0], 1.0);
        assert!(n[1..].iter().all(|&v| v == 0.0));
        let (n, _) = shape_eval([0.0; 3]);
        assert!(n.iter().all(|&v| v == 0.125));
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let (n, dn) = shape_eval([x, y, z]);
            prop_assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for c in 0..3 {
                prop_assert!(dn.iter().map(|g| g[c]).sum::<f64>().abs() < 1e-14);
            }
        }

        #[test]
        fn reduced_mesh_is_monotone(seed in 0usize..200, extra in 1usize..20) {
            let m = build_box_mesh([3.0, 1.0, 1.0], [3, 2, 2]).unwrap();
            let nd = m.dof_count();
            let base: Vec<usize> = (0..3).map(|i| (seed * 7 + i * 13) % nd).collect();
            let mut bigger = base.clone();
            bigger.extend((0..extra).map(|i| (seed * 11 + i * 29) % nd));
            let a = extract_reduced_mesh(&m, &base).unwrap();
            let b = extract_reduced_mesh(&m, &bigger).unwrap();
            prop_assert!(a.element_subset.iter().all(|e| b.element_subset.contains(e)));
        }
    }

    #[test]
    fn volume_by_quadrature() {
        let extent = [1e-2, 1e-3, 2e-3];
        let m = build_box_mesh(extent, [5, 3, 2]).unwrap();
        let mut vol = 0.0;
        for e in 0..m.element_count() {
            let c = element_coords(&m, e);
            for q in volume_gauss_points() {
                let (_, dn) = shape_eval(q);
                let j = map_jacobian(&c, &dn);
                let det = crate::materials::det3(&j);
                assert!(det > 0.0);
                vol += det;
            }
        }
        let exact = extent[0] * extent[1] * extent[2];
        assert!((vol - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn facet_areas_by_tag() {
        let extent = [2.0, 0.5, 0.25];
        let m = build_box_mesh(extent, [4, 2, 3]).unwrap();
        let mut area = std::collections::HashMap::new();
        for f in &m.boundary_facets {
            let c = element_coords(&m, f.element);
            let mut a = 0.0;
            for q in face_gauss_points(f.face) {
                let (_, dn) = shape_eval(q);
                a += face_area_factor(&map_jacobian(&c, &dn), f.face);
            }
            *area.entry(f.tag).or_insert(0.0) += a;
        }
        let [ex, ey, ez] = extent;
        let dir = ey * ez;
        let neu = ex * ey;
        let hom = ey * ez + 2.0 * ex * ez + ex * ey;
        for (tag, want) in [
            (BoundaryTag::Dirichlet, dir),
            (BoundaryTag::NeumannPressure, neu),
            (BoundaryTag::Homogeneous, hom),
        ] {
            let got = area[&tag];
            assert!((got - want).abs() <= 1e-12 * want, "{tag:?}: {got} vs {want}");
        }
    }

    #[test]
    fn reduced_mesh_single_interior_node() {
        let m = build_box_mesh([3.0, 1.0, 1.0], [3, 1, 1]).unwrap();
        // node (i=1, j=0, k=0) sits between elements 0 and 1
        let n = m.nearest_node([1.0, 0.0, 0.0]);
        let r = extract_reduced_mesh(&m, &[3 * n + 2]).unwrap();
        assert_eq!(r.element_subset, vec![0, 1]);
        assert_eq!(r.active_dofs.len(), 12 * 3);
    }

    #[test]
    fn reduced_mesh_saturates() {
        let m = build_box_mesh([3.0, 1.0, 1.0], [3, 2, 1]).unwrap();
        let all: Vec<usize> = (0..m.node_count()).map(|n| 3 * n).collect();
        let r = extract_reduced_mesh(&m, &all).unwrap();
        assert_eq!(r.element_subset.len(), m.element_count());
        assert_eq!(r.active_dofs.len(), m.dof_count());
        assert!(extract_reduced_mesh(&m, &[]).is_err());
        assert!(extract_reduced_mesh(&m, &[m.dof_count()]).is_err());
    }

    #[test]
    fn dirichlet_dofs_on_clamped_face() {
        let m = build_box_mesh([1.0; 3], [2, 2, 2]).unwrap();
        let d = m.dirichlet_dofs();
        assert_eq!(d.len(), 9 * 3);
        for dof in d {
            assert_eq!(m.node_coords[dof / 3][0], 0.0);
        }
    }
}

/// Surface Jacobian `|∂X/∂s × ∂X/∂t|` of a reference face at a point where
/// the map Jacobian is `j`.
pub fn face_area_factor(j: &[[f64; 3]; 3], face: usize) -> f64 {
    let n = face_normal_scaled(j, face);
    (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Outward area-weighted normal `dA N` per unit reference face area.
pub fn face_normal_scaled(j: &[[f64; 3]; 3], face: usize) -> [f64; 3] {
    let (axis, side) = face_axis(face);
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let t1 = [j[0][a1], j[1][a1], j[2][a1]];
    let t2 = [j[0][a2], j[1][a2], j[2][a2]];
    let mut n = [
        t1[1] * t2[2] - t1[2] * t2[1],
        t1[2] * t2[0] - t1[0] * t2[2],
        t1[0] * t2[1] - t1[1] * t2[0],
    ];
    // orient along the outward reference normal
    let g = [j[0][axis], j[1][axis], j[2][axis]];
    let s = n[0] * g[0] + n[1] * g[1] + n[2] * g[2];
    if s * side < 0.0 {
        n.iter_mut().for_each(|v| *v = -*v);
    }
    n
}
