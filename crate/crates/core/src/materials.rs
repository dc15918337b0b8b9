//! Strain measures and hyperelastic laws: nearly incompressible neo-Hookean,
//! and the transversely isotropic Guccione law with a volumetric penalty and
//! fiber-aligned active stress.
//!
//! Stresses are written once against [`Scalar`], so the same code yields
//! values (`f64`) and exact tangents (`Dual<9>`).

use thiserror::Error;

use crate::ad::{Dual, Scalar};

pub type Mat3<T> = [[T; 3]; 3];
/// `A[i][J][k][L] = ∂P_iJ / ∂F_kL`.
pub type Tangent = [[[[f64; 3]; 3]; 3]; 3];

/// Exponent cap for the Guccione energy.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("inverted element: det F = {0:e}")]
    Inverted(f64),
    #[error("Guccione exponent Q = {0:e} exceeds the overflow guard")]
    Divergent(f64),
    #[error("invalid material parameters: {0}")]
    BadParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationState {
    pub f: Mat3<f64>,
    pub j: f64,
    pub c: Mat3<f64>,
    pub e: Mat3<f64>,
}

pub fn deformation_gradient(grad_u: &Mat3<f64>) -> Result<DeformationState, MaterialError> {
    let mut f = *grad_u;
    for (i, row) in f.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    state_from_f(&f)
}

pub fn state_from_f(f: &Mat3<f64>) -> Result<DeformationState, MaterialError> {
    let j = det3(f);
    if !(j > 0.0) {
        return Err(MaterialError::Inverted(j));
    }
    let c = mat_tmul(f, f);
    let mut e = c;
    for (i, row) in e.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = 0.5 * (*v - if i == k { 1.0 } else { 0.0 });
        }
    }
    Ok(DeformationState { f: *f, j, c, e })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeoHookeanParams {
    pub g: f64,
    pub k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuccioneParams {
    pub c_scale: f64,
    pub b_f: f64,
    pub b_s: f64,
    pub b_n: f64,
    pub b_fs: f64,
    pub b_fn: f64,
    pub b_sn: f64,
    pub k: f64,
    /// Rows are `f0`, `s0`, `n0`.
    pub fiber_frame: Mat3<f64>,
}

impl GuccioneParams {
    /// Reference coefficients for passive myocardium with the identity frame.
    pub fn reference() -> Self {
        Self {
            c_scale: 2e3,
            b_f: 8.0,
            b_s: 2.0,
            b_n: 2.0,
            b_fs: 4.0,
            b_fn: 4.0,
            b_sn: 2.0,
            k: 5e4,
            fiber_frame: IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.c_scale > 0.0) || !(self.k > 0.0) {
            return Err(MaterialError::BadParams("C and K must be positive".into()));
        }
        let b = [self.b_f, self.b_s, self.b_n, self.b_fs, self.b_fn, self.b_sn];
        if b.iter().any(|&v| !(v >= 0.0)) {
            return Err(MaterialError::BadParams("b coefficients must be non-negative".into()));
        }
        let r = &self.fiber_frame;
        for a in 0..3 {
            for c in 0..3 {
                let d: f64 = (0..3).map(|i| r[a][i] * r[c][i]).sum();
                let want = if a == c { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-12 {
                    return Err(MaterialError::BadParams("fiber frame not orthonormal".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    NeoHookean(NeoHookeanParams),
    /// Guccione law with active tension `ta` (Pa) along `f0`.
    Guccione { params: GuccioneParams, ta: f64 },
}

impl Material {
    pub fn validate(&self) -> Result<(), MaterialError> {
        match self {
            Material::NeoHookean(p) => {
                if p.g > 0.0 && p.k > 0.0 {
                    Ok(())
                } else {
                    Err(MaterialError::BadParams(format!("G = {}, K = {}", p.g, p.k)))
                }
            }
            Material::Guccione { params, .. } => params.validate(),
        }
    }

    /// First Piola–Kirchhoff stress for any scalar type.
    pub fn pk1_generic<T: Scalar>(&self, f: &Mat3<T>) -> Result<Mat3<T>, MaterialError> {
        match self {
            Material::NeoHookean(p) => neo_hookean_pk1_generic(f, p),
            Material::Guccione { params, ta } => guccione_pk1_generic(f, params, *ta),
        }
    }

    pub fn pk1(&self, state: &DeformationState) -> Result<Mat3<f64>, MaterialError> {
        self.pk1_generic(&state.f)
    }

    /// Stored energy (active term excluded, it has no potential).
    pub fn energy(&self, f: &Mat3<f64>) -> Result<f64, MaterialError> {
        match self {
            Material::NeoHookean(p) => neo_hookean_energy(f, p),
            Material::Guccione { params, .. } => guccione_energy(f, params),
        }
    }

    /// Stress and its exact derivative with respect to `F`.
    pub fn pk1_with_tangent(&self, f: &Mat3<f64>) -> Result<(Mat3<f64>, Tangent), MaterialError> {
        let mut fd = [[Dual::<9>::constant(0.0); 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                fd[k][l] = Dual::variable(f[k][l], 3 * k + l);
            }
        }
        let p = self.pk1_generic(&fd)?;
        let mut val = [[0.0; 3]; 3];
        let mut a = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for jj in 0..3 {
                val[i][jj] = p[i][jj].v;
                for k in 0..3 {
                    for l in 0..3 {
                        a[i][jj][k][l] = p[i][jj].d[3 * k + l];
                    }
                }
            }
        }
        Ok((val, a))
    }

    pub fn pk1_tangent(&self, state: &DeformationState) -> Result<Tangent, MaterialError> {
        Ok(self.pk1_with_tangent(&state.f)?.1)
    }
}

pub fn neo_hookean_pk1(state: &DeformationState, p: &NeoHookeanParams) -> Result<Mat3<f64>, MaterialError> {
    neo_hookean_pk1_generic(&state.f, p)
}

pub fn guccione_pk1(state: &DeformationState, p: &GuccioneParams, ta: f64) -> Result<Mat3<f64>, MaterialError> {
    guccione_pk1_generic(&state.f, p, ta)
}

pub fn neo_hookean_energy(f: &Mat3<f64>, p: &NeoHookeanParams) -> Result<f64, MaterialError> {
    let j = det3(f);
    if !(j > 0.0) {
        return Err(MaterialError::Inverted(j));
    }
    let trc: f64 = f.iter().flatten().map(|v| v * v).sum();
    let i1 = j.powf(-2.0 / 3.0) * trc;
    Ok(0.5 * p.g * (i1 - 3.0) + volumetric_energy(j, p.k))
}

pub fn guccione_energy(f: &Mat3<f64>, p: &GuccioneParams) -> Result<f64, MaterialError> {
    let st = state_from_f(f)?;
    let eb = rotate_to_frame(&st.e, &p.fiber_frame);
    let q = guccione_q(&eb, p);
    if q.value() > MAX_EXPONENT {
        return Err(MaterialError::Divergent(q.value()));
    }
    Ok(0.5 * p.c_scale * (q.exp() - 1.0) + volumetric_energy(st.j, p.k))
}

fn volumetric_energy(j: f64, k: f64) -> f64 {
    0.25 * k * ((j - 1.0).powi(2) + j.ln().powi(2))
}

fn neo_hookean_pk1_generic<T: Scalar>(f: &Mat3<T>, p: &NeoHookeanParams) -> Result<Mat3<T>, MaterialError> {
    let j = det3(f);
    if !(j.value() > 0.0) {
        return Err(MaterialError::Inverted(j.value()));
    }
    let cof = cofactor(f);
    let mut trc = T::zero();
    for row in f {
        for &v in row {
            trc += v * v;
        }
    }
    let jm23 = j.powf(-2.0 / 3.0);
    // cof = J F^{-T}
    let iso_f = jm23 * p.g;
    let iso_c = iso_f * trc / j * (-1.0 / 3.0);
    let vol = (j - 1.0 + j.ln() / j) * (0.5 * p.k);
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            out[i][k] = iso_f * f[i][k] + (iso_c + vol) * cof[i][k];
        }
    }
    Ok(out)
}

fn guccione_q<T: Scalar>(eb: &Mat3<T>, p: &GuccioneParams) -> T {
    let sq = |x: T| x * x;
    sq(eb[0][0]) * p.b_f
        + sq(eb[1][1]) * p.b_s
        + sq(eb[2][2]) * p.b_n
        + (sq(eb[0][1]) + sq(eb[1][0])) * p.b_fs
        + (sq(eb[0][2]) + sq(eb[2][0])) * p.b_fn
        + (sq(eb[1][2]) + sq(eb[2][1])) * p.b_sn
}

/// `R E Rᵀ` with `R` holding the frame vectors as rows.
fn rotate_to_frame<T: Scalar>(e: &Mat3<T>, r: &Mat3<f64>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = T::zero();
            for i in 0..3 {
                for k in 0..3 {
                    s += e[i][k] * (r[a][i] * r[b][k]);
                }
            }
            out[a][b] = s;
        }
    }
    out
}

fn guccione_pk1_generic<T: Scalar>(f: &Mat3<T>, p: &GuccioneParams, ta: f64) -> Result<Mat3<T>, MaterialError> {
    let j = det3(f);
    if !(j.value() > 0.0) {
        return Err(MaterialError::Inverted(j.value()));
    }
    let c = mat_tmul(f, f);
    let mut e = c;
    for (i, row) in e.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == k { 1.0 } else { 0.0 }) * 0.5;
        }
    }
    let r = &p.fiber_frame;
    let eb = rotate_to_frame(&e, r);
    let q = guccione_q(&eb, p);
    if q.value() > MAX_EXPONENT {
        return Err(MaterialError::Divergent(q.value()));
    }
    let b = [[p.b_f, p.b_fs, p.b_fn], [p.b_fs, p.b_s, p.b_sn], [p.b_fn, p.b_sn, p.b_n]];
    let scale = q.exp() * p.c_scale;
    // S in the fiber frame, then back to the reference frame: S = Rᵀ S̄ R
    let mut sb = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for bb in 0..3 {
            sb[a][bb] = scale * eb[a][bb] * b[a][bb];
        }
    }
    let mut s = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut acc = T::zero();
            for a in 0..3 {
                for bb in 0..3 {
                    acc += sb[a][bb] * (r[a][i] * r[bb][k]);
                }
            }
            s[i][k] = acc;
        }
    }
    let cof = cofactor(f);
    let vol = (j - 1.0 + j.ln() / j) * (0.5 * p.k);
    let f0 = r[0];
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        let mut ff0 = T::zero();
        for k in 0..3 {
            ff0 += f[i][k] * f0[k];
        }
        for k in 0..3 {
            let mut fs = T::zero();
            for m in 0..3 {
                fs += f[i][m] * s[m][k];
            }
            out[i][k] = fs + vol * cof[i][k] + ff0 * (ta * f0[k]);
        }
    }
    Ok(out)
}

pub const IDENTITY: Mat3<f64> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn det3<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix, `cof(F) = det(F) F^{-T}`.
#[inline]
pub fn cofactor<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

pub fn inverse3(m: &Mat3<f64>) -> Option<Mat3<f64>> {
    let d = det3(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let c = cofactor(m);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            inv[i][k] = c[k][i] / d;
        }
    }
    Some(inv)
}

/// `Aᵀ B`.
#[inline]
pub fn mat_tmul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut s = T::zero();
            for m in 0..3 {
                s += a[m][i] * b[m][k];
            }
            out[i][k] = s;
        }
    }
    out
}

/// Central-difference gradient of a scalar function of `F`.
pub fn fd_gradient<E>(f: &Mat3<f64>, h: f64, energy: E) -> Result<Mat3<f64>, MaterialError>
where
    E: Fn(&Mat3<f64>) -> Result<f64, MaterialError>,
{
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut fp = *f;
            let mut fm = *f;
            fp[i][k] += h;
            fm[i][k] -= h;
            g[i][k] = (energy(&fp)? - energy(&fm)?) / (2.0 * h);
        }
    }
    Ok(g)
}
