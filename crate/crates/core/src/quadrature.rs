//! Globally adaptive 21-point Gauss-Kronrod quadrature for vector-valued
//! integrands on `[a, b]` and `[a, inf)`.
//!
//! All components share one subdivision. The interval with the largest error
//! (max-norm over components) is bisected until the summed error drops below
//! `max(abs_tol, rel_tol * |I|_inf)`. A semi-infinite tail is mapped onto
//! `u in (0, 1]` with `x = a / u`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_087_116_130,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    pub value: Vec<f64>,
    /// Summed max-norm error estimate over all intervals.
    pub abs_error: f64,
    pub evaluations: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Map {
    Linear,
    /// `x = scale / u`, `dx = scale / u^2 du`.
    Reciprocal { scale: f64 },
}

struct Piece {
    lo: f64,
    hi: f64,
    map: Map,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

struct Engine<'a, F> {
    f: &'a mut F,
    dim: usize,
    evaluations: usize,
    buf: Vec<f64>,
}

impl<F> Engine<'_, F>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, u: f64, map: Map, out: &mut [f64]) -> Result<()> {
        self.evaluations += 1;
        match map {
            Map::Linear => (self.f)(u, out),
            Map::Reciprocal { scale } => {
                (self.f)(scale / u, out)?;
                let jac = scale / (u * u);
                out.iter_mut().for_each(|v| *v *= jac);
                Ok(())
            }
        }
    }

    fn rule(&mut self, lo: f64, hi: f64, map: Map) -> Result<Piece> {
        let dim = self.dim;
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut kronrod = vec![0.0; dim];
        let mut gauss = vec![0.0; dim];
        let mut buf = std::mem::take(&mut self.buf);
        buf.resize(dim, 0.0);

        self.eval(center, map, &mut buf)?;
        for c in 0..dim {
            kronrod[c] += WGK[10] * buf[c];
        }
        for k in 0..10 {
            let dx = half * XGK[k];
            for x in [center - dx, center + dx] {
                self.eval(x, map, &mut buf)?;
                for c in 0..dim {
                    kronrod[c] += WGK[k] * buf[c];
                    if k % 2 == 1 {
                        gauss[c] += WG[k / 2] * buf[c];
                    }
                }
            }
        }
        self.buf = buf;

        let mut error: f64 = 0.0;
        for c in 0..dim {
            kronrod[c] *= half;
            gauss[c] *= half;
            let e = (kronrod[c] - gauss[c]).abs();
            if !e.is_finite() || !kronrod[c].is_finite() {
                return Err(Error::Domain(format!("non-finite integrand near x = {center}")));
            }
            error = error.max(e.max(50.0 * f64::EPSILON * kronrod[c].abs()));
        }
        Ok(Piece {
            lo,
            hi,
            map,
            value: kronrod,
            error,
        })
    }
}

/// Integrates `f` over `[points[0], points[last]]` (plus `[points[last], inf)`
/// when `tail` is set), using every entry of `points` as a mandatory split.
///
/// `f(x, out)` must write `dim` components into `out`.
pub fn integrate<F>(mut f: F, dim: usize, points: &[f64], tail: bool, tol: Tolerance) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    let mut pts: Vec<f64> = points.iter().copied().filter(|p| p.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() < 2 && !(tail && pts.len() == 1) {
        return Err(Error::Domain("integration needs at least two distinct points".into()));
    }
    if tail && !(pts[pts.len() - 1] > 0.0) {
        return Err(Error::Domain("semi-infinite tail must start at a positive abscissa".into()));
    }

    let mut engine = Engine {
        f: &mut f,
        dim,
        evaluations: 0,
        buf: Vec::new(),
    };
    let mut heap = BinaryHeap::new();
    for w in pts.windows(2) {
        heap.push(engine.rule(w[0], w[1], Map::Linear)?);
    }
    if tail {
        let scale = pts[pts.len() - 1];
        heap.push(engine.rule(0.0, 1.0, Map::Reciprocal { scale })?);
    }

    let totals = |heap: &BinaryHeap<Piece>| {
        let mut value = vec![0.0; dim];
        let mut error = 0.0;
        for p in heap.iter() {
            for c in 0..dim {
                value[c] += p.value[c];
            }
            error += p.error;
        }
        (value, error)
    };
    let target = |value: &[f64]| {
        let norm = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        tol.abs.max(tol.rel * norm)
    };

    let (mut value, mut error) = totals(&heap);
    loop {
        if error <= target(&value) {
            // Re-sum from scratch so incremental drift cannot fake convergence.
            let (v, e) = totals(&heap);
            value = v;
            error = e;
            if error <= target(&value) {
                break;
            }
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::Quadrature {
                achieved: error,
                requested: target(&value),
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature {
                achieved: error,
                requested: target(&value),
                intervals: heap.len() + 1,
            });
        }
        let left = engine.rule(worst.lo, mid, worst.map)?;
        let right = engine.rule(mid, worst.hi, worst.map)?;
        for c in 0..dim {
            value[c] += left.value[c] + right.value[c] - worst.value[c];
        }
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }

    Ok(Integral {
        value,
        abs_error: error,
        evaluations: engine.evaluations,
        intervals: heap.len(),
    })
}
