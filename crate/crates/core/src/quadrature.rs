//! Deterministic quadrature for the three integral shapes the model needs:
//! radial integrals over the torus (`⟨ℓ_D⟩`, the interference functional
//! `𝓘(z, k)`, pair-correlation integrals) and semi-infinite Laplace-type
//! integrals `∫₀^∞ e^{-zc} f(z) dz`.
//!
//! Torus integrands here depend on `x` only through `‖x‖`. Over the
//! fundamental square `[-a, a]²` (`a = side/2`) the integral splits into the
//! inscribed disc, `2π∫₀^a g(ρ)ρ dρ`, and the four corners, which the
//! substitution `ρ = a / cos φ` turns into a smooth integral over `φ ∈ [0, π/4]`.
//! Both pieces go through adaptive Gauss–Kronrod (7/15).

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use crate::error::{domain_err, Error, Result};
use crate::geometry::TorusDomain;
use crate::math;
use crate::pathloss::PathLoss;

/// Tolerances shared by every quadrature routine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum bisection depth of any subinterval.
    pub max_refinement: u32,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings { abs_tol: 1e-9, rel_tol: 1e-8, max_refinement: 20 }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(domain_err!("quadrature tolerances must be > 0"));
        }
        if self.max_refinement < 1 {
            return Err(domain_err!("max_refinement must be >= 1"));
        }
        Ok(())
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// A quadrature result with its declared absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    fn add(self, other: Estimate) -> Estimate {
        Estimate { value: self.value + other.value, error: self.error + other.error }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// 7-point Gauss weights, at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    Estimate { value: kronrod * h, error: ((kronrod - gauss) * h).abs() }
}

struct Panel {
    a: f64,
    b: f64,
    est: Estimate,
    depth: u32,
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`, with
/// optional interior breakpoints where `f` is not smooth.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    settings: &QuadratureSettings,
) -> Result<Estimate> {
    settings.validate()?;
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(domain_err!("invalid integration interval [{a}, {b}]"));
    }
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    cuts.push(a);
    cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut panels: Vec<Panel> = cuts
        .windows(2)
        .map(|w| Panel { a: w[0], b: w[1], est: gk15(&mut f, w[0], w[1]), depth: 0 })
        .collect();
    loop {
        let total = panels.iter().fold(Estimate { value: 0.0, error: 0.0 }, |acc, p| acc.add(p.est));
        if total.error <= settings.target(total.value) {
            return Ok(total);
        }
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| p.depth < settings.max_refinement)
            .max_by(|x, y| x.1.est.error.partial_cmp(&y.1.est.error).unwrap());
        let Some((idx, _)) = worst else {
            return Err(Error::NumericalFailure {
                message: alloc::format!(
                    "adaptive quadrature on [{a}, {b}] exhausted refinement depth with error {:e}",
                    total.error
                ),
                partial: total.value,
            });
        };
        let p = panels.swap_remove(idx);
        let mid = 0.5 * (p.a + p.b);
        let depth = p.depth + 1;
        panels.push(Panel { a: p.a, b: mid, est: gk15(&mut f, p.a, mid), depth });
        panels.push(Panel { a: mid, b: p.b, est: gk15(&mut f, mid, p.b), depth });
    }
}

/// `∫_{[-side/2, side/2]²} g(‖x‖) dx` for a radial integrand `g`.
///
/// `breakpoints` are radii where `g` is not smooth.
pub fn radial_torus_integral<G: Fn(f64) -> f64>(
    side: f64,
    g: G,
    breakpoints: &[f64],
    settings: &QuadratureSettings,
) -> Result<Estimate> {
    let a = 0.5 * side;
    // split the tolerance between the two pieces
    let half = QuadratureSettings { abs_tol: 0.5 * settings.abs_tol, ..*settings };
    let disc = integrate(|rho| 2.0 * PI * rho * g(rho), 0.0, a, breakpoints, &half)?;
    let corner_cuts: Vec<f64> = breakpoints
        .iter()
        .filter(|&&rho| rho > a && rho < a * core::f64::consts::SQRT_2)
        .map(|&rho| math::acos(a / rho))
        .collect();
    let corners = integrate(
        |phi| {
            let sec = 1.0 / math::cos(phi);
            let rho = a * sec;
            // ρ·(2π − 8φ)·dρ/dφ with dρ/dφ = a·sec·tan
            g(rho) * rho * (2.0 * PI - 8.0 * phi) * a * sec * math::tan(phi)
        },
        0.0,
        FRAC_PI_4,
        &corner_cuts,
        &half,
    )?;
    Ok(disc.add(corners))
}

/// `⟨ℓ_D⟩ = ∫_D ℓ(‖x‖) dx` over the torus.
pub fn pathloss_integral(dom: &TorusDomain, pl: &PathLoss, settings: &QuadratureSettings) -> Result<Estimate> {
    radial_torus_integral(dom.side(), |rho| pl.eval(rho), pl.breakpoints(), settings)
}

/// `𝓘(z, k) = ∫_D (1 − e^{−z·k·ℓ(‖x‖)}) dx`.
pub fn interference_functional(
    dom: &TorusDomain,
    pl: &PathLoss,
    z: f64,
    k: u32,
    settings: &QuadratureSettings,
) -> Result<Estimate> {
    if !(z >= 0.0) {
        return Err(domain_err!("interference functional needs z >= 0, got {z}"));
    }
    if z == 0.0 || k == 0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let zk = z * k as f64;
    if !zk.is_finite() {
        return Ok(Estimate { value: dom.area(), error: 0.0 });
    }
    radial_torus_integral(dom.side(), |rho| -math::expm1(-zk * pl.eval(rho)), pl.breakpoints(), settings)
}

/// `∫₀^∞ e^{−zc} f(z) dz` for `f` bounded by 1 and `c > 0`, computed with the
/// substitution `u = z / (1 + z)` and adaptive Simpson on `(0, 1)`.
pub fn laplace_integral<F: Fn(f64) -> f64>(f: F, c: f64, settings: &QuadratureSettings) -> Result<Estimate> {
    settings.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(domain_err!("laplace integral needs c > 0, got {c}"));
    }
    let h = |u: f64| -> f64 {
        if u >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - u;
        let z = u / one_minus;
        let decay = math::exp(-c * z);
        if decay == 0.0 {
            0.0
        } else {
            decay * f(z) / (one_minus * one_minus)
        }
    };
    adaptive_simpson(h, 0.0, 1.0, settings)
}

fn adaptive_simpson<H: Fn(f64) -> f64>(h: H, a: f64, b: f64, settings: &QuadratureSettings) -> Result<Estimate> {
    struct Seg {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        depth: u32,
    }
    let simpson = |fa: f64, fm: f64, fb: f64, width: f64| width / 6.0 * (fa + 4.0 * fm + fb);

    // a coarse pass fixes the scale used by the relative tolerance
    let mut coarse = 0.0;
    let n0 = 64;
    for i in 0..n0 {
        let x0 = a + (b - a) * i as f64 / n0 as f64;
        let x1 = a + (b - a) * (i + 1) as f64 / n0 as f64;
        coarse += simpson(h(x0), h(0.5 * (x0 + x1)), h(x1), x1 - x0);
    }
    let tol = settings.target(coarse);
    let max_depth = settings.max_refinement + 6; // on top of the 64 starting segments

    let mut value = 0.0;
    let mut error = 0.0;
    let mut stack: Vec<(Seg, f64)> = Vec::new();
    for i in 0..n0 {
        let x0 = a + (b - a) * i as f64 / n0 as f64;
        let x1 = a + (b - a) * (i + 1) as f64 / n0 as f64;
        let (fa, fm, fb) = (h(x0), h(0.5 * (x0 + x1)), h(x1));
        let whole = simpson(fa, fm, fb, x1 - x0);
        stack.push((Seg { a: x0, b: x1, fa, fm, fb, whole, depth: 6 }, tol / n0 as f64));
    }
    while let Some((s, eps)) = stack.pop() {
        let m = 0.5 * (s.a + s.b);
        let (lm, rm) = (0.5 * (s.a + m), 0.5 * (m + s.b));
        let (flm, frm) = (h(lm), h(rm));
        let left = simpson(s.fa, flm, s.fm, m - s.a);
        let right = simpson(s.fm, frm, s.fb, s.b - m);
        let delta = left + right - s.whole;
        if delta.abs() <= 15.0 * eps || s.depth >= max_depth {
            value += left + right + delta / 15.0;
            error += delta.abs() / 15.0;
            continue;
        }
        let depth = s.depth + 1;
        stack.push((Seg { a: s.a, b: m, fa: s.fa, fm: flm, fb: s.fm, whole: left, depth }, 0.5 * eps));
        stack.push((Seg { a: m, b: s.b, fa: s.fm, fm: frm, fb: s.fb, whole: right, depth }, 0.5 * eps));
    }
    if error > tol.max(settings.target(value)) {
        return Err(Error::NumericalFailure {
            message: alloc::format!("adaptive Simpson exhausted refinement depth with error {error:e}"),
            partial: value,
        });
    }
    Ok(Estimate { value, error })
}

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// A fixed rule for `∫₀^∞ e^{−zc} F(z) dz` with `0 <= F <= 1`, built on
/// `z = e^t` with composite 8-point Gauss–Legendre panels in `t`.
///
/// The fixed-point solvers evaluate the same Laplace integral thousands of
/// times with different `F`; a fixed node set lets them tabulate the costly
/// parts of `F` once. The logarithmic grid resolves integrands whose mass sits
/// anywhere between `z ~ e^{t_min}` and `z ~ 60/c`.
#[derive(Debug, Clone)]
pub struct LaplaceRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `∫₀^{z_min} dz` contribution, with `F ≈ F(0) = 1` there.
    head: f64,
}

impl LaplaceRule {
    pub const T_MIN: f64 = -42.0;

    /// `panel_width` is the panel size in `t = ln z`.
    pub fn new(c: f64, panel_width: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || !(panel_width > 0.0) {
            return Err(domain_err!("laplace rule needs c > 0 and a positive panel width"));
        }
        let t_max = math::ln(60.0 / c);
        let t_min = Self::T_MIN.min(t_max - 1.0);
        let panels = ((t_max - t_min) / panel_width).ceil() as usize;
        let width = (t_max - t_min) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 8);
        let mut weights = Vec::with_capacity(panels * 8);
        for p in 0..panels {
            let mid = t_min + (p as f64 + 0.5) * width;
            for (x, w) in GL8_X.iter().zip(GL8_W.iter()) {
                for t in [mid - 0.5 * width * x, mid + 0.5 * width * x] {
                    let z = math::exp(t);
                    nodes.push(z);
                    weights.push(0.5 * width * w * z * math::exp(-c * z));
                }
            }
        }
        Ok(LaplaceRule { nodes, weights, head: math::exp(t_min) })
    }

    /// The `z` abscissae; callers tabulate `F` on these.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Integrates given `F` evaluated at [`Self::nodes`].
    pub fn integrate_tabulated<I: Iterator<Item = f64>>(&self, values: I) -> f64 {
        self.head + self.weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.integrate_tabulated(self.nodes.iter().map(|&z| f(z)))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// A fixed rule for `∫_D g(‖x‖) dx` over the torus: composite 8-point
/// Gauss–Legendre panels on the disc radius and on the corner angle.
///
/// Panel edges include the path-loss breakpoints. Fixed-point loops that
/// re-integrate a changing radial integrand use this so the map they iterate
/// is smooth in its parameters.
#[derive(Debug, Clone)]
pub struct RadialRule {
    radii: Vec<f64>,
    weights: Vec<f64>,
}

impl RadialRule {
    /// `panel_width` is the target panel size in `ρ` on the disc; the corner
    /// angle uses panels of the same count per unit of `a`.
    pub fn new(side: f64, breakpoints: &[f64], panel_width: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || !(panel_width > 0.0) {
            return Err(domain_err!("radial rule needs a positive side and panel width"));
        }
        let a = 0.5 * side;
        let mut radii = Vec::new();
        let mut weights = Vec::new();
        let mut disc_cuts: Vec<f64> = breakpoints.iter().copied().filter(|&r| r > 0.0 && r < a).collect();
        disc_cuts.push(0.0);
        disc_cuts.push(a);
        let mut corner_cuts: Vec<f64> = breakpoints
            .iter()
            .filter(|&&r| r > a && r < a * core::f64::consts::SQRT_2)
            .map(|&r| math::acos(a / r))
            .collect();
        corner_cuts.push(0.0);
        corner_cuts.push(FRAC_PI_4);
        let push_panels = |cuts: &mut Vec<f64>, width: f64, f: &mut dyn FnMut(f64, f64)| {
            cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            cuts.dedup();
            for w in cuts.windows(2) {
                let n = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
                let h = (w[1] - w[0]) / n as f64;
                for p in 0..n {
                    let mid = w[0] + (p as f64 + 0.5) * h;
                    for (x, gw) in GL8_X.iter().zip(GL8_W.iter()) {
                        f(mid - 0.5 * h * x, 0.5 * h * gw);
                        f(mid + 0.5 * h * x, 0.5 * h * gw);
                    }
                }
            }
        };
        push_panels(&mut disc_cuts, panel_width, &mut |rho, w| {
            radii.push(rho);
            weights.push(w * 2.0 * PI * rho);
        });
        push_panels(&mut corner_cuts, panel_width / a, &mut |phi, w| {
            let sec = 1.0 / math::cos(phi);
            radii.push(a * sec);
            weights.push(w * (2.0 * PI - 8.0 * phi) * a * a * sec * sec * math::tan(phi));
        });
        Ok(RadialRule { radii, weights })
    }

    /// The `ρ` abscissae.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn integrate_tabulated<I: Iterator<Item = f64>>(&self, values: I) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.integrate_tabulated(self.radii.iter().map(|&r| g(r)))
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}
