//! Material parameterization and the analytic reflectance model.
//!
//! All directions live in the local shading frame: `z` is the surface normal
//! and `x` the tangent along which anisotropic roughness stretches.
//!
//! With `wi`, `wo` the two directions, `h = normalize(wi + wo)`, `c_i = wi.z`,
//! `c_o = wo.z` and `k = h·wi` the model evaluates
//!
//! ```text
//! f = f_cc + A_cc(c_i) A_cc(c_o) (f_spec + S_sh (f_diff + f_sheen))
//!
//! r       = clamp(roughness, 0.03, 1)        alpha = r^2
//! aspect  = sqrt(1 - 0.9 anisotropy)         ax = alpha / aspect, ay = alpha * aspect
//! D(h)    = 1 / (pi ax ay (hx^2/ax^2 + hy^2/ay^2 + hz^2)^2)
//! L(w)    = (sqrt(1 + (ax^2 wx^2 + ay^2 wy^2) / wz^2) - 1) / 2
//! G2      = 1 / (1 + L(wi) + L(wo))                      (height-correlated Smith)
//! F0      = lerp(0.08 specular_level, base_color, metallic)
//! F90     = lerp(min(1, 50 * 0.08 specular_level), min(1, 50 mean(base_color)), metallic)
//! F(k)    = F0 + (F90 - F0)(1 - k)^5                     (Fresnel-Schlick)
//! f_spec  = D G2 F / (4 c_i c_o)
//! Fd(c)   = f0 + (min(1, 50 f0) - f0)(1 - c)^5,  f0 = 0.08 specular_level
//! f_diff  = (1 - metallic) base_color / pi (1 - Fd(c_i))(1 - Fd(c_o))
//! f_sheen = (1 - metallic) sheen_weight lerp(1, base_color, sheen_tint) 4 (1 - k)^5 / pi
//!           (1 - Fd(c_i))(1 - Fd(c_o))
//! S_sh    = 1 - 0.12 sheen_weight
//! f_cc    = clearcoat_weight Dc Gc Fc / (4 c_i c_o)  isotropic GGX with
//!           alpha_c = clamp(clearcoat_roughness, 0.03, 1)^2, Fc(k) = 0.04 + 0.96 (1 - k)^5
//! A_cc(c) = 1 - clearcoat_weight (0.04 + 0.96 (1 - c)^5)
//! ```
//!
//! Because Schlick is affine in `(F0, F90)`, the specular lobe equals the
//! metallic-weighted blend of a dielectric lobe and a metal lobe, so the
//! model is a convex blend of two energy-conserving sub-models.
//!
//! Every factor is symmetric in `wi` and `wo`, so the model is reciprocal.
//! The sheen lobe's directional albedo never exceeds `4 * 0.0275`, which the
//! constant `S_sh` attenuation of the diffuse-side lobes absorbs.

use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{saturate, Vec3};

pub const PARAM_COUNT: usize = 8;

/// Number of values in the flat material record.
pub const MATERIAL_VALUE_COUNT: usize = 13;

/// Learned parameter names, index order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "roughness",
    "metallic",
    "specular_level",
    "anisotropy",
    "clearcoat_weight",
    "clearcoat_roughness",
    "sheen_weight",
    "sheen_tint",
];

/// Names of the flat material record, index order.
pub const FIELD_NAMES: [&str; MATERIAL_VALUE_COUNT] = [
    "roughness",
    "metallic",
    "specular_level",
    "anisotropy",
    "clearcoat_weight",
    "clearcoat_roughness",
    "sheen_weight",
    "sheen_tint",
    "base_color_r",
    "base_color_g",
    "base_color_b",
    "ior",
    "opacity",
];

pub const MIN_IOR: f64 = 1.0;
pub const MAX_IOR: f64 = 3.0;

pub const MIN_ROUGHNESS: f64 = 0.03;

const DOMAIN_TOLERANCE: f64 = 1e-6;

/// The eight learned reflectance parameters, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaterialParams {
    pub roughness: f64,
    pub metallic: f64,
    pub specular_level: f64,
    pub anisotropy: f64,
    pub clearcoat_weight: f64,
    pub clearcoat_roughness: f64,
    pub sheen_weight: f64,
    pub sheen_tint: f64,
}

impl MaterialParams {
    pub fn splat(v: f64) -> Self {
        Self::from_array_unchecked([v; PARAM_COUNT])
    }

    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.roughness,
            self.metallic,
            self.specular_level,
            self.anisotropy,
            self.clearcoat_weight,
            self.clearcoat_roughness,
            self.sheen_weight,
            self.sheen_tint,
        ]
    }

    /// Builds parameters from index-ordered values, rejecting anything outside `[0, 1]`.
    pub fn from_array(values: [f64; PARAM_COUNT]) -> Result<Self> {
        for (name, v) in PARAM_NAMES.iter().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    what: name,
                    value: v,
                });
            }
        }
        Ok(Self::from_array_unchecked(values))
    }

    pub(crate) fn from_array_unchecked(v: [f64; PARAM_COUNT]) -> Self {
        MaterialParams {
            roughness: v[0],
            metallic: v[1],
            specular_level: v[2],
            anisotropy: v[3],
            clearcoat_weight: v[4],
            clearcoat_roughness: v[5],
            sheen_weight: v[6],
            sheen_tint: v[7],
        }
    }

    /// Clamps each field into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self::from_array_unchecked(self.to_array().map(saturate))
    }
}

/// A complete material: learned parameters plus the retrieved appearance fields.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaterialFull {
    pub params: MaterialParams,
    /// Linear RGB, each channel in `[0, 1]`.
    pub base_color: [f64; 3],
    pub ior: f64,
    pub opacity: f64,
}

impl Default for MaterialFull {
    fn default() -> Self {
        MaterialFull::with_neutral_appearance(MaterialParams::splat(0.5))
    }
}

impl MaterialFull {
    pub const NEUTRAL_BASE_COLOR: [f64; 3] = [0.5, 0.5, 0.5];
    pub const NEUTRAL_IOR: f64 = 1.5;

    /// Grey base color, IOR 1.5, fully opaque.
    pub fn with_neutral_appearance(params: MaterialParams) -> Self {
        MaterialFull {
            params,
            base_color: Self::NEUTRAL_BASE_COLOR,
            ior: Self::NEUTRAL_IOR,
            opacity: 1.0,
        }
    }

    /// The flat record in [`FIELD_NAMES`] order.
    pub fn to_values(&self) -> [f64; MATERIAL_VALUE_COUNT] {
        let p = self.params.to_array();
        let mut out = [0.0; MATERIAL_VALUE_COUNT];
        out[..PARAM_COUNT].copy_from_slice(&p);
        out[8..11].copy_from_slice(&self.base_color);
        out[11] = self.ior;
        out[12] = self.opacity;
        out
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != MATERIAL_VALUE_COUNT {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: MATERIAL_VALUE_COUNT,
            });
        }
        let mut p = [0.0; PARAM_COUNT];
        p.copy_from_slice(&values[..PARAM_COUNT]);
        let m = MaterialFull {
            params: MaterialParams::from_array(p)?,
            base_color: [values[8], values[9], values[10]],
            ior: values[11],
            opacity: values[12],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        MaterialParams::from_array(self.params.to_array())?;
        for (i, c) in self.base_color.iter().enumerate() {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::OutOfRange {
                    what: FIELD_NAMES[8 + i],
                    value: *c,
                });
            }
        }
        if !(MIN_IOR..=MAX_IOR).contains(&self.ior) {
            return Err(Error::OutOfRange {
                what: "ior",
                value: self.ior,
            });
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::OutOfRange {
                what: "opacity",
                value: self.opacity,
            });
        }
        Ok(())
    }

    /// Clamps every field into its legal range.
    pub fn clamped(&self) -> Self {
        MaterialFull {
            params: self.params.clamped(),
            base_color: self.base_color.map(saturate),
            ior: if self.ior.is_nan() {
                MIN_IOR
            } else {
                self.ior.clamp(MIN_IOR, MAX_IOR)
            },
            opacity: saturate(self.opacity),
        }
    }
}

/// Unit direction in the local shading frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    /// Accepts vectors whose Euclidean norm is within 1e-6 of 1.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = Vec3::new(x, y, z);
        if !v.is_finite() || (v.length() - 1.0).abs() > DOMAIN_TOLERANCE {
            return Err(Error::Domain("direction is not unit length"));
        }
        Ok(Direction(v))
    }

    /// Normalizes `v`; fails only on zero or non-finite input.
    pub fn from_vec(v: Vec3) -> Result<Self> {
        let len = v.length();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Domain("direction has zero length"));
        }
        Ok(Direction(v * (1.0 / len)))
    }

    /// Direction at polar angle `theta` from the normal and azimuth `phi`.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let s = libm::sin(theta);
        Direction(Vec3::new(
            s * libm::cos(phi),
            s * libm::sin(phi),
            libm::cos(theta),
        ))
    }

    pub fn normal() -> Self {
        Direction(Vec3::new(0.0, 0.0, 1.0))
    }

    pub fn vec(&self) -> Vec3 {
        self.0
    }

    pub fn cos_theta(&self) -> f64 {
        self.0.z
    }
}

fn schlick_weight(cos: f64) -> f64 {
    let m = saturate(1.0 - cos);
    let m2 = m * m;
    m2 * m2 * m
}

/// Anisotropic GGX distribution with height-correlated Smith masking.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ggx {
    ax: f64,
    ay: f64,
}

impl Ggx {
    pub(crate) fn new(ax: f64, ay: f64) -> Self {
        Ggx { ax, ay }
    }

    pub(crate) fn d(&self, h: Vec3) -> f64 {
        let t = (h.x / self.ax) * (h.x / self.ax) + (h.y / self.ay) * (h.y / self.ay) + h.z * h.z;
        1.0 / (PI * self.ax * self.ay * t * t)
    }

    pub(crate) fn lambda(&self, w: Vec3) -> f64 {
        let a2 = (self.ax * w.x) * (self.ax * w.x) + (self.ay * w.y) * (self.ay * w.y);
        (libm::sqrt(1.0 + a2 / (w.z * w.z)) - 1.0) * 0.5
    }

    pub(crate) fn g1(&self, w: Vec3) -> f64 {
        1.0 / (1.0 + self.lambda(w))
    }

    pub(crate) fn g2(&self, wi: Vec3, wo: Vec3) -> f64 {
        1.0 / (1.0 + self.lambda(wi) + self.lambda(wo))
    }

    /// Visible-normal sample for view direction `wi` (upper hemisphere).
    pub(crate) fn sample_visible_normal(&self, wi: Vec3, u1: f64, u2: f64) -> Vec3 {
        let vh = Vec3::new(self.ax * wi.x, self.ay * wi.y, wi.z).normalized();
        let lensq = vh.x * vh.x + vh.y * vh.y;
        let t1 = if lensq > 0.0 {
            Vec3::new(-vh.y, vh.x, 0.0) * (1.0 / libm::sqrt(lensq))
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let t2 = vh.cross(t1);
        let r = libm::sqrt(u1);
        let phi = 2.0 * PI * u2;
        let p1 = r * libm::cos(phi);
        let mut p2 = r * libm::sin(phi);
        let s = 0.5 * (1.0 + vh.z);
        p2 = (1.0 - s) * libm::sqrt((1.0 - p1 * p1).max(0.0)) + s * p2;
        let nh = t1 * p1 + t2 * p2 + vh * libm::sqrt((1.0 - p1 * p1 - p2 * p2).max(0.0));
        Vec3::new(self.ax * nh.x, self.ay * nh.y, nh.z.max(0.0)).normalized()
    }

    /// Density of `wo = reflect(wi, h)` under visible-normal sampling.
    pub(crate) fn reflected_pdf(&self, wi: Vec3, h: Vec3) -> f64 {
        self.g1(wi) * self.d(h) / (4.0 * wi.z)
    }
}

/// Material-dependent constants of the reflectance model, prepared once.
#[derive(Debug, Clone, Copy)]
pub struct ShadingModel {
    base: Vec3,
    metallic: f64,
    spec: Ggx,
    f0: Vec3,
    f90: f64,
    diffuse_f0: f64,
    diffuse_f90: f64,
    sheen_weight: f64,
    sheen_color: Vec3,
    clearcoat_weight: f64,
    clearcoat: Ggx,
}

const SHEEN_SCALE: f64 = 4.0;
const SHEEN_ATTENUATION: f64 = 0.12;
const CLEARCOAT_F0: f64 = 0.04;

pub(crate) fn roughness_to_alpha(roughness: f64) -> f64 {
    let r = if roughness.is_nan() {
        MIN_ROUGHNESS
    } else {
        roughness.clamp(MIN_ROUGHNESS, 1.0)
    };
    r * r
}

impl ShadingModel {
    pub fn new(m: &MaterialFull) -> Self {
        let p = &m.params;
        let base = Vec3::from(m.base_color);
        let alpha = roughness_to_alpha(p.roughness);
        let aspect = libm::sqrt(1.0 - 0.9 * saturate(p.anisotropy));
        let dielectric = 0.08 * p.specular_level;
        let f0 = Vec3::splat(dielectric).lerp(base, p.metallic);
        let f90_metal = saturate(50.0 * (base.x + base.y + base.z) / 3.0);
        let f90 =
            saturate(50.0 * dielectric) + (f90_metal - saturate(50.0 * dielectric)) * p.metallic;
        let alpha_c = roughness_to_alpha(p.clearcoat_roughness);
        ShadingModel {
            base,
            metallic: p.metallic,
            spec: Ggx::new(alpha / aspect, alpha * aspect),
            f0,
            f90,
            diffuse_f0: dielectric,
            diffuse_f90: saturate(50.0 * dielectric),
            sheen_weight: p.sheen_weight,
            sheen_color: Vec3::ONE.lerp(base, p.sheen_tint),
            clearcoat_weight: p.clearcoat_weight,
            clearcoat: Ggx::new(alpha_c, alpha_c),
        }
    }

    fn diffuse_fresnel(&self, cos: f64) -> f64 {
        self.diffuse_f0 + (self.diffuse_f90 - self.diffuse_f0) * schlick_weight(cos)
    }

    fn clearcoat_transmission(&self, cos: f64) -> f64 {
        1.0 - self.clearcoat_weight * (CLEARCOAT_F0 + (1.0 - CLEARCOAT_F0) * schlick_weight(cos))
    }

    /// Evaluates the model for upper-hemisphere unit vectors, unchecked.
    pub fn eval(&self, wi: Vec3, wo: Vec3) -> Vec3 {
        let ci = wi.z;
        let co = wo.z;
        let h = (wi + wo).normalized();
        let k = saturate(h.dot(wi));
        let fk = schlick_weight(k);
        let inv_4cc = 1.0 / (4.0 * ci * co);

        let fresnel = self.f0 + (Vec3::splat(self.f90) - self.f0) * fk;
        let spec = fresnel * (self.spec.d(h) * self.spec.g2(wi, wo) * inv_4cc);

        let transmitted = (1.0 - self.metallic)
            * (1.0 - self.diffuse_fresnel(ci))
            * (1.0 - self.diffuse_fresnel(co))
            / PI;
        let diffuse = self.base * transmitted;
        let sheen = self.sheen_color * (transmitted * self.sheen_weight * SHEEN_SCALE * fk);
        let base_layer = spec + (diffuse + sheen) * (1.0 - SHEEN_ATTENUATION * self.sheen_weight);

        if self.clearcoat_weight <= 0.0 {
            return base_layer;
        }
        let fc = CLEARCOAT_F0 + (1.0 - CLEARCOAT_F0) * fk;
        let coat =
            self.clearcoat_weight * self.clearcoat.d(h) * self.clearcoat.g2(wi, wo) * fc * inv_4cc;
        base_layer * (self.clearcoat_transmission(ci) * self.clearcoat_transmission(co))
            + Vec3::splat(coat)
    }
}

fn check_domain(w: &Direction) -> Result<()> {
    let v = w.vec();
    if !(v.z > 0.0) {
        return Err(Error::Domain("direction below or on the horizon"));
    }
    if (v.length() - 1.0).abs() > DOMAIN_TOLERANCE {
        return Err(Error::Domain("direction is not unit length"));
    }
    Ok(())
}

/// Reflectance ratio (per steradian) for incident `wi` and outgoing `wo`.
pub fn eval_brdf(material: &MaterialFull, wi: &Direction, wo: &Direction) -> Result<[f64; 3]> {
    check_domain(wi)?;
    check_domain(wo)?;
    Ok(ShadingModel::new(material)
        .eval(wi.vec(), wo.vec())
        .to_array())
}

fn cosine_sample(u1: f64, u2: f64) -> Vec3 {
    let r = libm::sqrt(u1);
    let phi = 2.0 * PI * u2;
    Vec3::new(
        r * libm::cos(phi),
        r * libm::sin(phi),
        libm::sqrt((1.0 - u1).max(0.0)),
    )
}

fn reflect(wi: Vec3, h: Vec3) -> Vec3 {
    h * (2.0 * wi.dot(h)) - wi
}

/// Monte Carlo estimate of the hemispherical reflectance for incident `wi`.
///
/// Samples a one-sample mixture of cosine-weighted directions and
/// visible-normal reflections of the specular and clearcoat lobes; each
/// sample is weighted by the mixture density, so the estimator stays
/// unbiased while near-specular lobes converge.
pub fn directional_albedo(
    material: &MaterialFull,
    wi: &Direction,
    sample_count: usize,
    seed: u64,
) -> Result<[f64; 3]> {
    check_domain(wi)?;
    if sample_count == 0 {
        return Err(Error::OutOfRange {
            what: "sample_count",
            value: 0.0,
        });
    }
    let model = ShadingModel::new(material);
    let wi = wi.vec();
    let use_coat = model.clearcoat_weight > 0.0;
    let strategies = if use_coat { 3.0 } else { 2.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = Vec3::ZERO;
    for _ in 0..sample_count {
        let pick: f64 = rng.random();
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let wo = if pick * strategies < 1.0 {
            cosine_sample(u1, u2)
        } else if pick * strategies < 2.0 {
            reflect(wi, model.spec.sample_visible_normal(wi, u1, u2))
        } else {
            reflect(wi, model.clearcoat.sample_visible_normal(wi, u1, u2))
        };
        if !(wo.z > 0.0) {
            continue;
        }
        let h = (wi + wo).normalized();
        let mut pdf = wo.z / PI + model.spec.reflected_pdf(wi, h);
        if use_coat {
            pdf += model.clearcoat.reflected_pdf(wi, h);
        }
        pdf /= strategies;
        if !(pdf > 0.0) {
            continue;
        }
        sum = sum + model.eval(wi, wo) * (wo.z / pdf);
    }
    Ok((sum * (1.0 / sample_count as f64)).to_array())
}

/// Uniform random material: learned fields, base color and opacity on `[0, 1]`,
/// IOR on `[1.0, 2.5]`.
pub fn sample_random_material(seed: u64) -> MaterialFull {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0; PARAM_COUNT];
    for v in &mut p {
        *v = rng.random::<f64>();
    }
    let base_color = [
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
    ];
    let ior = 1.0 + 1.5 * rng.random::<f64>();
    let opacity = rng.random::<f64>();
    MaterialFull {
        params: MaterialParams::from_array_unchecked(p),
        base_color,
        ior,
        opacity,
    }
}

/// Componentwise linear interpolation of every field.
pub fn lerp_material(a: &MaterialFull, b: &MaterialFull, t: f64) -> Result<MaterialFull> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
        });
    }
    let va = a.to_values();
    let vb = b.to_values();
    let mut out = [0.0; MATERIAL_VALUE_COUNT];
    for i in 0..MATERIAL_VALUE_COUNT {
        out[i] = if t == 0.0 {
            va[i]
        } else if t == 1.0 {
            vb[i]
        } else {
            va[i] + (vb[i] - va[i]) * t
        };
    }
    let mut p = [0.0; PARAM_COUNT];
    p.copy_from_slice(&out[..PARAM_COUNT]);
    Ok(MaterialFull {
        params: MaterialParams::from_array_unchecked(p),
        base_color: [out[8], out[9], out[10]],
        ior: out[11],
        opacity: out[12],
    }
    .clamped())
}
