//! Height-field terrain profiles along the direction of travel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;

/// Sanity bound on terrain steepness, `tan(0.3)`.
pub const MAX_SLOPE: f64 = 0.309_336_249_609_623_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerrainKind {
    Flat,
    /// Ramp up to a plateau.
    Ramp,
    /// Seeded dips on flat ground.
    Cobblestone,
    /// Smooth wave.
    Wave,
    /// Ramp up, cobblestone plateau, ramp down.
    Composite,
}

impl TerrainKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "flat" => Self::Flat,
            "ramp" => Self::Ramp,
            "cobblestone" => Self::Cobblestone,
            "wave" => Self::Wave,
            "composite" => Self::Composite,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Ramp => "ramp",
            Self::Cobblestone => "cobblestone",
            Self::Wave => "wave",
            Self::Composite => "composite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainParams {
    pub kind: TerrainKind,
    /// Where the first feature begins (m).
    pub start: f64,
    /// Ramp inclination (rad).
    pub slope: f64,
    /// Ramp height gain (m).
    pub rise: f64,
    /// Length over which the slope blends in and out (m).
    pub blend: f64,
    /// Cobblestone section length (m).
    pub plateau: f64,
    pub bump_height: f64,
    pub bump_spacing: f64,
    /// Wave height is `amplitude · (1 − cos)`, so peak to trough is twice this.
    pub amplitude: f64,
    pub wavelength: f64,
    pub cycles: f64,
    pub seed: u64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        let slope: f64 = 0.22;
        let amplitude = 0.1;
        Self {
            kind: TerrainKind::Flat,
            start: 0.8,
            slope,
            rise: 0.2,
            blend: 0.2,
            plateau: 1.2,
            bump_height: 0.004,
            bump_spacing: 0.15,
            amplitude,
            // Peak slope `a·2π/λ` equal to `tan(slope)`.
            wavelength: 2.0 * std::f64::consts::PI * amplitude / slope.tan(),
            cycles: 2.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dip {
    center: f64,
    half_width: f64,
    depth: f64,
}

/// Terrain height `h(x)` built from a slope profile that is linear between
/// knots, an optional wave and optional cobblestone dips.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainProfile {
    pub params: TerrainParams,
    /// `(x, dh/dx)` knots; slope is constant outside.
    knots: Vec<(f64, f64)>,
    /// Height at each knot.
    knot_h: Vec<f64>,
    wave: Option<(f64, f64, f64, f64)>,
    dips: Vec<Dip>,
    dip_start: f64,
}

pub fn make_terrain(params: &TerrainParams) -> Result<TerrainProfile, SimError> {
    let p = params;
    let bad = |m: String| Err(SimError::Config(m));
    if !(p.blend > 0.0) {
        return bad("terrain.blend must be > 0".into());
    }
    if !(p.slope.abs() < 0.3) {
        return bad(format!("terrain.slope = {} exceeds 0.3 rad", p.slope));
    }
    if matches!(p.kind, TerrainKind::Ramp | TerrainKind::Composite) && p.rise / p.slope.tan() < p.blend {
        return bad("terrain.rise is too small for the slope blend length".into());
    }
    if matches!(p.kind, TerrainKind::Cobblestone | TerrainKind::Composite)
        && (p.bump_spacing <= 0.0 || p.bump_height < 0.0 || p.plateau < 0.0)
    {
        return bad("terrain cobblestone parameters must be positive".into());
    }
    if p.kind == TerrainKind::Wave && !(p.wavelength > 0.0 && p.amplitude >= 0.0 && p.cycles >= 0.0) {
        return bad("terrain wave parameters must be positive".into());
    }
    let s = p.slope.tan();
    let b = p.blend;
    let ramp_len = p.rise / s + b;
    let ramp = |x0: f64, sign: f64| -> Vec<(f64, f64)> {
        let run = ramp_len - 2.0 * b;
        vec![
            (x0, 0.0),
            (x0 + b, sign * s),
            (x0 + b + run, sign * s),
            (x0 + ramp_len, 0.0),
        ]
    };
    let mut knots = vec![(p.start, 0.0)];
    let mut dips_at = None;
    let mut wave = None;
    match p.kind {
        TerrainKind::Flat => {}
        TerrainKind::Ramp => knots = ramp(p.start, 1.0),
        TerrainKind::Cobblestone => dips_at = Some((p.start, p.plateau)),
        TerrainKind::Wave => {
            wave = Some((p.start, p.amplitude, p.wavelength, p.cycles));
        }
        TerrainKind::Composite => {
            knots = ramp(p.start, 1.0);
            let top = p.start + ramp_len;
            knots.extend(ramp(top + p.plateau, -1.0));
            dips_at = Some((top, p.plateau));
        }
    }
    let mut knot_h = vec![0.0; knots.len()];
    for i in 1..knots.len() {
        let (x0, s0) = knots[i - 1];
        let (x1, s1) = knots[i];
        knot_h[i] = knot_h[i - 1] + 0.5 * (s0 + s1) * (x1 - x0);
    }
    let mut dips = Vec::new();
    let mut dip_start = 0.0;
    if let Some((x0, len)) = dips_at {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let n = (len / p.bump_spacing).floor() as usize;
        dip_start = x0;
        for k in 0..n {
            dips.push(Dip {
                center: x0 + (k as f64 + 0.5) * p.bump_spacing,
                half_width: 0.5 * p.bump_spacing,
                depth: rng.random_range(0.0..=1.0) * p.bump_height,
            });
        }
    }
    let profile = TerrainProfile {
        params: params.clone(),
        knots,
        knot_h,
        wave,
        dips,
        dip_start,
    };
    let steepest = profile.max_abs_slope();
    if steepest > MAX_SLOPE {
        return bad(format!(
            "terrain is too steep: max |dh/dx| = {steepest:.3} exceeds tan(0.3)"
        ));
    }
    Ok(profile)
}

impl TerrainProfile {
    pub fn flat() -> Self {
        make_terrain(&TerrainParams::default()).expect("flat terrain is valid")
    }

    fn base(&self, x: f64) -> (f64, f64, f64) {
        let k = &self.knots;
        if x <= k[0].0 {
            return (self.knot_h[0] + k[0].1 * (x - k[0].0), k[0].1, 0.0);
        }
        let last = k.len() - 1;
        if x >= k[last].0 {
            return (self.knot_h[last] + k[last].1 * (x - k[last].0), k[last].1, 0.0);
        }
        let i = k.partition_point(|(xi, _)| *xi <= x) - 1;
        let (x0, s0) = k[i];
        let (x1, s1) = k[i + 1];
        let curv = if x1 > x0 { (s1 - s0) / (x1 - x0) } else { 0.0 };
        let d = x - x0;
        (self.knot_h[i] + s0 * d + 0.5 * curv * d * d, s0 + curv * d, curv)
    }

    fn wave_terms(&self, x: f64) -> (f64, f64, f64) {
        let Some((x0, a, lambda, cycles)) = self.wave else {
            return (0.0, 0.0, 0.0);
        };
        let u = x - x0;
        if u <= 0.0 || u >= cycles * lambda {
            return (0.0, 0.0, 0.0);
        }
        let k = 2.0 * std::f64::consts::PI / lambda;
        (a * (1.0 - (k * u).cos()), a * k * (k * u).sin(), a * k * k * (k * u).cos())
    }

    fn dip_terms(&self, x: f64) -> (f64, f64, f64) {
        if self.dips.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let w = 2.0 * self.dips[0].half_width;
        let idx = ((x - self.dip_start) / w).floor();
        if idx < 0.0 || idx as usize >= self.dips.len() {
            return (0.0, 0.0, 0.0);
        }
        let d = &self.dips[idx as usize];
        let u = (x - d.center) / d.half_width;
        let pi = std::f64::consts::PI;
        // Raised-cosine dip: −depth·(1 + cos πu)/2.
        let h = -0.5 * d.depth * (1.0 + (pi * u).cos());
        let dh = 0.5 * d.depth * pi / d.half_width * (pi * u).sin();
        let ddh = 0.5 * d.depth * (pi / d.half_width).powi(2) * (pi * u).cos();
        (h, dh, ddh)
    }

    /// `(h, dh/dx, d²h/dx²)`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let a = self.base(x);
        let b = self.wave_terms(x);
        let c = self.dip_terms(x);
        (a.0 + b.0 + c.0, a.1 + b.1 + c.1, a.2 + b.2 + c.2)
    }

    pub fn height(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    /// Upward unit normal `(−h', 0, 1)/‖·‖` as `(x, z)`.
    pub fn normal(&self, x: f64) -> (f64, f64) {
        let s = self.slope(x);
        let n = (1.0 + s * s).sqrt();
        (-s / n, 1.0 / n)
    }

    /// Extent of the features, for plotting.
    pub fn feature_span(&self) -> (f64, f64) {
        let mut lo = self.knots[0].0;
        let mut hi = self.knots[self.knots.len() - 1].0;
        if let Some((x0, _, l, c)) = self.wave {
            lo = lo.min(x0);
            hi = hi.max(x0 + l * c);
        }
        if let Some(d) = self.dips.last() {
            lo = lo.min(self.dip_start);
            hi = hi.max(d.center + d.half_width);
        }
        (lo, hi)
    }

    pub fn max_abs_slope(&self) -> f64 {
        let (lo, hi) = self.feature_span();
        let n = (((hi - lo) / 1e-3).ceil() as usize).max(1);
        (0..=n)
            .map(|i| self.slope(lo + (hi - lo) * i as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Closest terrain point to `(cx, cz)` within horizontal reach `reach`,
    /// as `(x, h)`.
    pub fn closest_point(&self, cx: f64, cz: f64, reach: f64) -> (f64, f64) {
        let dist2 = |x: f64| {
            let h = self.height(x);
            (x - cx).powi(2) + (h - cz).powi(2)
        };
        let n = 24;
        let step = 2.0 * reach / n as f64;
        let mut best = cx;
        let mut best_d = dist2(cx);
        for i in 0..=n {
            let x = cx - reach + step * i as f64;
            let d = dist2(x);
            if d < best_d {
                best_d = d;
                best = x;
            }
        }
        // Newton refinement of (x − cx) + (h − cz)h' = 0.
        let mut x = best;
        for _ in 0..8 {
            let (h, dh, ddh) = self.eval(x);
            let g = (x - cx) + (h - cz) * dh;
            let gd = 1.0 + dh * dh + (h - cz) * ddh;
            if gd <= 0.0 {
                break;
            }
            let nx = (x - g / gd).clamp(best - step, best + step);
            if (nx - x).abs() < 1e-13 {
                x = nx;
                break;
            }
            x = nx;
        }
        if dist2(x) > best_d {
            x = best;
        }
        (x, self.height(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(kind: TerrainKind) -> TerrainProfile {
        make_terrain(&TerrainParams {
            kind,
            ..TerrainParams::default()
        })
        .unwrap()
    }

    #[test]
    fn flat_is_zero() {
        let t = with(TerrainKind::Flat);
        for x in [-3.0, 0.0, 1.7, 40.0] {
            assert_eq!(t.eval(x), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn composite_reaches_rise_and_returns() {
        let t = with(TerrainKind::Composite);
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64 * 1e-3).collect();
        let hmax = xs.iter().map(|x| t.height(*x)).fold(f64::MIN, f64::max);
        let hmin = xs.iter().map(|x| t.height(*x)).fold(f64::MAX, f64::min);
        // Dips tile the plateau, so the grid only approaches the crest height.
        assert!((hmax - hmin - 0.2).abs() < 1e-6, "{hmax} {hmin}");
        assert!(t.height(9.0).abs() < 1e-12);
        let steepest = xs.iter().map(|x| t.slope(*x)).fold(0.0, f64::max);
        assert!((steepest.atan() - 0.22).abs() < 1e-12);
    }

    #[test]
    fn wave_peak_slope() {
        let t = with(TerrainKind::Wave);
        assert!((t.max_abs_slope() - 0.22f64.tan()).abs() < 0.02 * 0.22f64.tan());
    }

    #[test]
    fn continuity() {
        for kind in [TerrainKind::Composite, TerrainKind::Wave, TerrainKind::Cobblestone] {
            let t = with(kind);
            let (lo, hi) = t.feature_span();
            let mut x = lo - 0.1;
            while x < hi + 0.1 {
                let d = (t.height(x + 1e-7) - t.height(x)).abs();
                assert!(d < 1e-7, "{kind:?} jump at {x}");
                x += 1e-3;
            }
        }
    }

    #[test]
    fn closest_point_on_ramp() {
        let t = with(TerrainKind::Ramp);
        let s: f64 = 0.22;
        // Point 0.1 above the middle of the ramp along the normal.
        let x0 = 1.3;
        let h0 = t.height(x0);
        let c = (x0 - 0.1 * s.sin(), h0 + 0.1 * s.cos());
        let (x, h) = t.closest_point(c.0, c.1, 0.15);
        assert!((x - x0).abs() < 1e-9 && (h - h0).abs() < 1e-9);
    }

    #[test]
    fn rejects_steep_cobbles() {
        let e = make_terrain(&TerrainParams {
            kind: TerrainKind::Cobblestone,
            bump_height: 0.03,
            ..TerrainParams::default()
        });
        assert!(e.is_err());
    }
}
