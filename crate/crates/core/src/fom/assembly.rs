//! Element kernels and global assembly of the time-discrete residual and
//! its Jacobian.

use std::cell::Cell;

use crate::ad::Dual;
use crate::linalg::BandMatrix;
use crate::materials::{cofactor, Material, MaterialError};
use crate::mesh::{
    element_coords, face_gauss_points, face_normal_scaled, map_jacobian, shape_eval, volume_gauss_points,
    BoundaryTag, Mesh,
};

thread_local! {
    static ASSEMBLY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of full-order element loops run on this thread.
pub fn assembly_calls() -> u64 {
    ASSEMBLY_CALLS.with(|c| c.get())
}

fn bump_assembly_counter() {
    ASSEMBLY_CALLS.with(|c| c.set(c.get() + 1));
}

pub const NE: usize = 24;

#[derive(Clone, Debug)]
struct VolumePoint {
    n: [f64; 8],
    dndx: [[f64; 3]; 8],
    wdet: f64,
}

#[derive(Clone, Debug)]
struct FacePoint {
    n: [f64; 8],
    dndx: [[f64; 3]; 8],
    /// Outward reference normal times the area element.
    nda: [f64; 3],
}

#[derive(Clone, Debug)]
struct FaceGeo {
    tag: BoundaryTag,
    pts: [FacePoint; 4],
}

/// Reference-configuration quadrature data, computed once per mesh.
#[derive(Clone, Debug)]
pub struct Geometry {
    volume: Vec<[VolumePoint; 8]>,
    mass: Vec<[[f64; 8]; 8]>,
    faces: Vec<Vec<FaceGeo>>,
}

fn physical_gradients(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8], [[f64; 3]; 3]) {
    let (n, dn) = shape_eval(xi);
    let jm = map_jacobian(coords, &dn);
    let inv = crate::materials::inverse3(&jm).expect("degenerate element map");
    let mut dndx = [[0.0; 3]; 8];
    for a in 0..8 {
        for c in 0..3 {
            dndx[a][c] = (0..3).map(|r| dn[a][r] * inv[r][c]).sum();
        }
    }
    (n, dndx, jm)
}

impl Geometry {
    pub fn new(mesh: &Mesh) -> Self {
        let gps = volume_gauss_points();
        let mut volume = Vec::with_capacity(mesh.element_count());
        let mut mass = Vec::with_capacity(mesh.element_count());
        let mut faces = vec![Vec::new(); mesh.element_count()];
        for e in 0..mesh.element_count() {
            let coords = element_coords(mesh, e);
            let pts: [VolumePoint; 8] = std::array::from_fn(|q| {
                let (n, dndx, jm) = physical_gradients(&coords, gps[q]);
                let det = crate::materials::det3(&jm);
                assert!(det > 0.0, "element {e} has non-positive map Jacobian");
                VolumePoint { n, dndx, wdet: det }
            });
            let mut m = [[0.0; 8]; 8];
            for p in &pts {
                for a in 0..8 {
                    for b in 0..8 {
                        m[a][b] += p.wdet * p.n[a] * p.n[b];
                    }
                }
            }
            volume.push(pts);
            mass.push(m);
        }
        for f in &mesh.boundary_facets {
            let coords = element_coords(mesh, f.element);
            let fps = face_gauss_points(f.face);
            let pts: [FacePoint; 4] = std::array::from_fn(|q| {
                let (n, dndx, jm) = physical_gradients(&coords, fps[q]);
                FacePoint {
                    n,
                    dndx,
                    nda: face_normal_scaled(&jm, f.face),
                }
            });
            faces[f.element].push(FaceGeo { tag: f.tag, pts });
        }
        Self { volume, mass, faces }
    }

    pub fn element_mass(&self, e: usize) -> &[[f64; 8]; 8] {
        &self.mass[e]
    }
}

/// Coefficients that fix the time-discrete residual at one step.
#[derive(Clone, Copy, Debug)]
pub struct StepCoefficients {
    pub material: Material,
    /// Follower pressure `g(t; μ)` (Pa).
    pub pressure: f64,
    /// `ρ₀ / Δt²`.
    pub mass_coeff: f64,
    pub alpha: f64,
    /// `β / Δt`.
    pub beta_dt: f64,
}

pub struct ElementOutput {
    pub r: [f64; NE],
    /// Row-major `24 x 24` block, present when requested.
    pub k: Option<Box<[f64; NE * NE]>>,
}

/// Element residual `r_e` (and `K_e = ∂r_e/∂u_e`) from local displacement
/// `u` and the inertial combination `w = u - 2 u¹ + u²`, with `u1` kept
/// for the Robin damping term.
pub fn element_kernel(
    geo: &Geometry,
    e: usize,
    coeff: &StepCoefficients,
    u: &[f64; NE],
    w: &[f64; NE],
    u1: &[f64; NE],
    with_jacobian: bool,
) -> Result<ElementOutput, MaterialError> {
    let mut r = [0.0; NE];
    let mut k: Option<Box<[f64; NE * NE]>> = with_jacobian.then(|| Box::new([0.0; NE * NE]));

    for p in &geo.volume[e] {
        let mut f = crate::materials::IDENTITY;
        for a in 0..8 {
            for i in 0..3 {
                let ua = u[3 * a + i];
                if ua != 0.0 {
                    for jj in 0..3 {
                        f[i][jj] += ua * p.dndx[a][jj];
                    }
                }
            }
        }
        if let Some(km) = k.as_deref_mut() {
            let (pk, tan) = coeff.material.pk1_with_tangent(&f)?;
            for a in 0..8 {
                let ga = &p.dndx[a];
                for i in 0..3 {
                    r[3 * a + i] += p.wdet * (pk[i][0] * ga[0] + pk[i][1] * ga[1] + pk[i][2] * ga[2]);
                }
                // t[i][k][l] = Σ_J A[i][J][k][l] ∂N_a/∂X_J
                let mut t = [[[0.0; 3]; 3]; 3];
                for i in 0..3 {
                    for kk in 0..3 {
                        for l in 0..3 {
                            t[i][kk][l] = tan[i][0][kk][l] * ga[0] + tan[i][1][kk][l] * ga[1] + tan[i][2][kk][l] * ga[2];
                        }
                    }
                }
                for b in 0..8 {
                    let gb = &p.dndx[b];
                    for i in 0..3 {
                        let row = (3 * a + i) * NE + 3 * b;
                        for kk in 0..3 {
                            km[row + kk] += p.wdet * (t[i][kk][0] * gb[0] + t[i][kk][1] * gb[1] + t[i][kk][2] * gb[2]);
                        }
                    }
                }
            }
        } else {
            let pk = coeff.material.pk1_generic(&f)?;
            for a in 0..8 {
                let ga = &p.dndx[a];
                for i in 0..3 {
                    r[3 * a + i] += p.wdet * (pk[i][0] * ga[0] + pk[i][1] * ga[1] + pk[i][2] * ga[2]);
                }
            }
        }
    }

    if coeff.mass_coeff != 0.0 {
        let m = &geo.mass[e];
        for a in 0..8 {
            for b in 0..8 {
                let mab = coeff.mass_coeff * m[a][b];
                for i in 0..3 {
                    r[3 * a + i] += mab * w[3 * b + i];
                }
                if let Some(km) = k.as_deref_mut() {
                    for i in 0..3 {
                        km[(3 * a + i) * NE + 3 * b + i] += mab;
                    }
                }
            }
        }
    }

    for face in &geo.faces[e] {
        match face.tag {
            BoundaryTag::NeumannPressure if coeff.pressure != 0.0 => {
                pressure_face(face, coeff.pressure, u, &mut r, k.as_deref_mut());
            }
            BoundaryTag::Homogeneous if coeff.alpha != 0.0 || coeff.beta_dt != 0.0 => {
                robin_face(face, coeff, u, u1, &mut r, k.as_deref_mut());
            }
            _ => {}
        }
    }
    Ok(ElementOutput { r, k })
}

/// `+ g ∫ N_a cof(F) N dA`, the negative of the follower-pressure load.
fn pressure_face(face: &FaceGeo, g: f64, u: &[f64; NE], r: &mut [f64; NE], k: Option<&mut [f64; NE * NE]>) {
    match k {
        None => {
            for p in &face.pts {
                let mut f = crate::materials::IDENTITY;
                for a in 0..8 {
                    for i in 0..3 {
                        for jj in 0..3 {
                            f[i][jj] += u[3 * a + i] * p.dndx[a][jj];
                        }
                    }
                }
                let c = cofactor(&f);
                for i in 0..3 {
                    let cn = c[i][0] * p.nda[0] + c[i][1] * p.nda[1] + c[i][2] * p.nda[2];
                    for a in 0..8 {
                        r[3 * a + i] += g * p.n[a] * cn;
                    }
                }
            }
        }
        Some(km) => {
            for p in &face.pts {
                let mut f = [[Dual::<NE>::constant(0.0); 3]; 3];
                for i in 0..3 {
                    for jj in 0..3 {
                        let mut v = Dual::constant(if i == jj { 1.0 } else { 0.0 });
                        for a in 0..8 {
                            v.v += u[3 * a + i] * p.dndx[a][jj];
                            v.d[3 * a + i] = p.dndx[a][jj];
                        }
                        f[i][jj] = v;
                    }
                }
                let c = cofactor(&f);
                for i in 0..3 {
                    let cn = c[i][0] * p.nda[0] + c[i][1] * p.nda[1] + c[i][2] * p.nda[2];
                    for a in 0..8 {
                        let s = g * p.n[a];
                        if s == 0.0 {
                            continue;
                        }
                        let row = 3 * a + i;
                        r[row] += s * cn.v;
                        for (col, d) in cn.d.iter().enumerate() {
                            km[row * NE + col] += s * d;
                        }
                    }
                }
            }
        }
    }
}

fn robin_face(
    face: &FaceGeo,
    coeff: &StepCoefficients,
    u: &[f64; NE],
    u1: &[f64; NE],
    r: &mut [f64; NE],
    mut k: Option<&mut [f64; NE * NE]>,
) {
    let c_now = coeff.alpha + coeff.beta_dt;
    for p in &face.pts {
        let da = (p.nda[0] * p.nda[0] + p.nda[1] * p.nda[1] + p.nda[2] * p.nda[2]).sqrt();
        for a in 0..8 {
            for b in 0..8 {
                let m = da * p.n[a] * p.n[b];
                if m == 0.0 {
                    continue;
                }
                for i in 0..3 {
                    r[3 * a + i] += m * (c_now * u[3 * b + i] - coeff.beta_dt * u1[3 * b + i]);
                    if let Some(km) = k.as_deref_mut() {
                        km[(3 * a + i) * NE + 3 * b + i] += m * c_now;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn gather(dofs: &[usize; NE], v: &[f64]) -> [f64; NE] {
    std::array::from_fn(|p| v[dofs[p]])
}

/// Runs the element kernel over `elements` and hands each element result to
/// `visit`. Counts as one full-order assembly.
#[allow(clippy::too_many_arguments)]
pub fn element_loop<V>(
    mesh: &Mesh,
    geo: &Geometry,
    elements: &[usize],
    coeff: &StepCoefficients,
    u: &[f64],
    u1: &[f64],
    u2: &[f64],
    with_jacobian: bool,
    mut visit: V,
) -> Result<(), MaterialError>
where
    V: FnMut(usize, &[usize; NE], &ElementOutput),
{
    bump_assembly_counter();
    for &e in elements {
        let dofs = mesh.element_dofs(e);
        let ue = gather(&dofs, u);
        let u1e = gather(&dofs, u1);
        let u2e = gather(&dofs, u2);
        let we: [f64; NE] = std::array::from_fn(|p| ue[p] - 2.0 * u1e[p] + u2e[p]);
        let out = element_kernel(geo, e, coeff, &ue, &we, &u1e, with_jacobian)?;
        visit(e, &dofs, &out);
    }
    Ok(())
}

/// Full residual with Dirichlet rows zeroed, and optionally the banded
/// Jacobian with Dirichlet rows and columns replaced by identity.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    mesh: &Mesh,
    geo: &Geometry,
    dirichlet: &[usize],
    bandwidth: usize,
    coeff: &StepCoefficients,
    u: &[f64],
    u1: &[f64],
    u2: &[f64],
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<BandMatrix>), MaterialError> {
    let n = mesh.dof_count();
    let mut r = vec![0.0; n];
    let mut jac = with_jacobian.then(|| BandMatrix::zeros(n, bandwidth, bandwidth));
    let all: Vec<usize> = (0..mesh.element_count()).collect();
    element_loop(mesh, geo, &all, coeff, u, u1, u2, with_jacobian, |_, dofs, out| {
        for p in 0..NE {
            r[dofs[p]] += out.r[p];
        }
        if let (Some(j), Some(k)) = (jac.as_mut(), out.k.as_deref()) {
            for p in 0..NE {
                for q in 0..NE {
                    let v = k[p * NE + q];
                    if v != 0.0 {
                        j.add(dofs[p], dofs[q], v);
                    }
                }
            }
        }
    })?;
    for &d in dirichlet {
        r[d] = 0.0;
        if let Some(j) = jac.as_mut() {
            j.constrain(d);
        }
    }
    Ok((r, jac))
}
