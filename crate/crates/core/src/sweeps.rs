//! Design-space tools over either the exact oracle or a trained model:
//! single-parameter sweeps, phase readout at a probe wavelength,
//! resonance location, and inverting the geometry-resonance map to hit
//! a target wavelength.

use crate::data::{
    canonical_wavelengths, is_extrapolated, normalize_geometry, oracle_spectrum, DataError,
    GeometrySample, MetalKind, Spectrum, SPECTRUM_POINTS, WAVELENGTH_MAX_NM, WAVELENGTH_MIN_NM,
};
use crate::model::{predict, ModelError, ModelParams};
use crate::numeric::DenseMatrix;
use num_complex::Complex64;
use std::fmt;
use std::str::FromStr;

#[derive(Debug)]
pub enum SweepError {
    BadSpec { detail: String },
    OutOfWindow { lambda: f64 },
    EmptySweep,
    Data(DataError),
    Model(ModelError),
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepError::BadSpec { detail } => write!(f, "bad sweep spec: {detail}"),
            SweepError::OutOfWindow { lambda } => write!(
                f,
                "wavelength {lambda} nm outside the [{WAVELENGTH_MIN_NM}, {WAVELENGTH_MAX_NM}] window"
            ),
            SweepError::EmptySweep => write!(f, "sweep produced no rows"),
            SweepError::Data(e) => write!(f, "data: {e}"),
            SweepError::Model(e) => write!(f, "model: {e}"),
        }
    }
}

impl std::error::Error for SweepError {}

impl From<DataError> for SweepError {
    fn from(e: DataError) -> Self {
        SweepError::Data(e)
    }
}

impl From<ModelError> for SweepError {
    fn from(e: ModelError) -> Self {
        SweepError::Model(e)
    }
}

/// Which geometry parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaryParam {
    H,
    P,
    R,
    T,
}

impl fmt::Display for VaryParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VaryParam::H => "H",
            VaryParam::P => "P",
            VaryParam::R => "R",
            VaryParam::T => "T",
        })
    }
}

impl FromStr for VaryParam {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        match s.to_ascii_uppercase().as_str() {
            "H" => Ok(VaryParam::H),
            "P" => Ok(VaryParam::P),
            "R" => Ok(VaryParam::R),
            "T" => Ok(VaryParam::T),
            _ => Err(SweepError::BadSpec {
                detail: format!("unknown parameter '{s}' (expected H, P, R or T)"),
            }),
        }
    }
}

/// The three geometry parameters a sweep holds still. The varied one
/// must stay unset.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FixedParams {
    pub h: Option<f64>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub t: Option<f64>,
}

impl FixedParams {
    fn get(&self, which: VaryParam) -> Option<f64> {
        match which {
            VaryParam::H => self.h,
            VaryParam::P => self.p,
            VaryParam::R => self.r,
            VaryParam::T => self.t,
        }
    }
}

/// What to evaluate: the closed-form oracle or a trained model.
#[derive(Debug, Clone)]
pub enum SweepBackend {
    Oracle(MetalKind),
    Model(Box<ModelParams>),
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub backend: SweepBackend,
    pub vary: VaryParam,
    pub fixed: FixedParams,
    /// (start, stop, step) in nm, endpoints inclusive where the step lands.
    pub range: (f64, f64, f64),
    /// Optional probe wavelength for phase readout.
    pub probe: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let (start, stop, step) = self.range;
        // NaN fails the is_finite arm, so the comparisons can stay simple
        if step <= 0.0 || !step.is_finite() {
            return Err(SweepError::BadSpec {
                detail: format!("step = {step}, must be positive"),
            });
        }
        if start >= stop || !start.is_finite() || !stop.is_finite() {
            return Err(SweepError::BadSpec {
                detail: format!("range {start}..{stop} must satisfy start < stop"),
            });
        }
        if self.fixed.get(self.vary).is_some() {
            return Err(SweepError::BadSpec {
                detail: format!("{} is both varied and fixed", self.vary),
            });
        }
        for which in [VaryParam::H, VaryParam::P, VaryParam::R, VaryParam::T] {
            if which != self.vary && self.fixed.get(which).is_none() {
                return Err(SweepError::BadSpec {
                    detail: format!("{which} must be fixed when sweeping {}", self.vary),
                });
            }
        }
        if let Some(probe) = self.probe {
            if !(WAVELENGTH_MIN_NM..=WAVELENGTH_MAX_NM).contains(&probe) {
                return Err(SweepError::OutOfWindow { lambda: probe });
            }
        }
        Ok(())
    }

    /// The geometry at one sweep position.
    pub fn geometry_at(&self, value: f64) -> Result<GeometrySample, SweepError> {
        let v = |which: VaryParam| {
            if which == self.vary {
                value
            } else {
                self.fixed.get(which).expect("validated")
            }
        };
        Ok(GeometrySample::new(
            v(VaryParam::H),
            v(VaryParam::P),
            v(VaryParam::R),
            v(VaryParam::T),
        )?)
    }
}

/// Inclusive sweep grid: start, start + step, ... up to stop (a small
/// tolerance keeps binary-inexact steps from dropping the endpoint).
pub fn sweep_values(range: (f64, f64, f64)) -> Vec<f64> {
    let (start, stop, step) = range;
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// One evaluated sweep position. `extrapolated` marks model-backend
/// rows whose geometry falls outside the normalizer's fitted range.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub spectrum: Spectrum,
    pub extrapolated: bool,
}

/// Evaluates the sweep. Oracle rows are exact; model rows share one
/// batched forward pass and carry the extrapolation flag.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    let values = sweep_values(spec.range);
    match &spec.backend {
        SweepBackend::Oracle(metal) => values
            .into_iter()
            .map(|v| {
                let g = spec.geometry_at(v)?;
                Ok(SweepRow {
                    value: v,
                    spectrum: oracle_spectrum(*metal, &g)?,
                    extrapolated: false,
                })
            })
            .collect(),
        SweepBackend::Model(params) => {
            let geometries: Vec<GeometrySample> = values
                .iter()
                .map(|&v| spec.geometry_at(v))
                .collect::<Result<_, _>>()?;
            let mut x = DenseMatrix::new(geometries.len(), 4);
            for (i, g) in geometries.iter().enumerate() {
                x.row_mut(i)
                    .copy_from_slice(&normalize_geometry(g, &params.norm_stats));
            }
            let (re, im) = predict(params, &x)?;
            values
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    Ok(SweepRow {
                        value: v,
                        spectrum: Spectrum::new(re.row(i).to_vec(), im.row(i).to_vec())?,
                        extrapolated: is_extrapolated(&geometries[i], &params.norm_stats),
                    })
                })
                .collect()
        }
    }
}

/// Linear interpolation of (re, im) between the two bracketing
/// canonical wavelengths.
pub fn interp_s11(spectrum: &Spectrum, lambda: f64) -> Result<Complex64, SweepError> {
    if !(WAVELENGTH_MIN_NM..=WAVELENGTH_MAX_NM).contains(&lambda) {
        return Err(SweepError::OutOfWindow { lambda });
    }
    let step = (WAVELENGTH_MAX_NM - WAVELENGTH_MIN_NM) / (SPECTRUM_POINTS - 1) as f64;
    let pos = (lambda - WAVELENGTH_MIN_NM) / step;
    let k = (pos.floor() as usize).min(SPECTRUM_POINTS - 2);
    let frac = pos - k as f64;
    Ok(spectrum.at(k) * (1.0 - frac) + spectrum.at(k + 1) * frac)
}

/// Reflection phase at a wavelength, in (-pi, pi]. Interpolates re and
/// im linearly (not the unwrapped angle), then takes atan2.
pub fn phase_at(spectrum: &Spectrum, lambda: f64) -> Result<f64, SweepError> {
    let s = interp_s11(spectrum, lambda)?;
    let phase = s.im.atan2(s.re);
    // atan2 covers [-pi, pi]; fold the closed end onto +pi
    Ok(if phase == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        phase
    })
}

/// The canonical wavelength minimizing |S11|; ties go to the shorter
/// wavelength.
pub fn find_resonance(spectrum: &Spectrum) -> f64 {
    let lambdas = canonical_wavelengths();
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..SPECTRUM_POINTS {
        let mag = spectrum.at(k).norm();
        if mag < best {
            best = mag;
            best_k = k;
        }
    }
    lambdas[best_k]
}

/// Sweeps `spec` and picks the parameter value whose resonance lands
/// closest to `target`. Resonances are grid-snapped, so whole bands of
/// values tie on distance; ties break toward the deeper interpolated
/// dip at the target itself, then toward the smaller parameter value.
pub fn design_for_target(spec: &SweepSpec, target: f64) -> Result<f64, SweepError> {
    if !(WAVELENGTH_MIN_NM..=WAVELENGTH_MAX_NM).contains(&target) {
        return Err(SweepError::OutOfWindow { lambda: target });
    }
    let rows = run_sweep(spec)?;
    let mut best: Option<(f64, f64, f64)> = None;
    for row in &rows {
        let dist = (find_resonance(&row.spectrum) - target).abs();
        let dip = interp_s11(&row.spectrum, target)?.norm();
        let better = match best {
            None => true,
            Some((bd, bdip, _)) => dist < bd || (dist == bd && dip < bdip),
        };
        if better {
            best = Some((dist, dip, row.value));
        }
    }
    best.map(|(_, _, v)| v).ok_or(SweepError::EmptySweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{base_resonance, generate_grid, oracle_s11};
    use crate::model::{init_params, ModelConfig};

    fn oracle_r_spec(h: f64, p: f64, t: f64, range: (f64, f64, f64)) -> SweepSpec {
        SweepSpec {
            backend: SweepBackend::Oracle(MetalKind::Al),
            vary: VaryParam::R,
            fixed: FixedParams {
                h: Some(h),
                p: Some(p),
                t: Some(t),
                r: None,
            },
            range,
            probe: None,
        }
    }

    #[test]
    fn sweep_value_counts_match_the_published_ranges() {
        let v = sweep_values((30.0, 100.0, 5.0));
        assert_eq!(v.len(), 15);
        assert_eq!(v[0], 30.0);
        assert_eq!(*v.last().unwrap(), 100.0);
        let v = sweep_values((100.0, 150.0, 5.0));
        assert_eq!(v.len(), 11);
        assert_eq!(*v.last().unwrap(), 150.0);
        // binary-inexact step still keeps its endpoint
        let v = sweep_values((0.0, 1.0, 0.1));
        assert_eq!(v.len(), 11);
        // step larger than the span: single value
        assert_eq!(sweep_values((30.0, 32.0, 5.0)), vec![30.0]);
        assert_eq!(sweep_values((30.0, 150.0, 0.25)).len(), 481);
    }

    #[test]
    fn spec_validation_catches_contradictions() {
        let mut spec = oracle_r_spec(30.0, 300.0, 80.0, (30.0, 100.0, 5.0));
        assert!(spec.validate().is_ok());
        spec.range = (30.0, 100.0, 0.0);
        assert!(spec.validate().is_err());
        spec.range = (100.0, 30.0, 5.0);
        assert!(spec.validate().is_err());
        spec.range = (30.0, 100.0, 5.0);
        spec.fixed.r = Some(50.0);
        assert!(matches!(spec.validate(), Err(SweepError::BadSpec { .. })));
        spec.fixed.r = None;
        spec.fixed.p = None;
        assert!(spec.validate().is_err());
        spec.fixed.p = Some(300.0);
        spec.probe = Some(499.0);
        assert!(matches!(
            spec.validate(),
            Err(SweepError::OutOfWindow { .. })
        ));
        spec.probe = Some(788.0);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn single_value_sweep_matches_direct_oracle_call() {
        let spec = oracle_r_spec(50.0, 300.0, 80.0, (90.0, 91.0, 5.0));
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].value, 90.0);
        let g = GeometrySample::new(50.0, 300.0, 90.0, 80.0).unwrap();
        assert_eq!(
            rows[0].spectrum,
            oracle_spectrum(MetalKind::Al, &g).unwrap()
        );
        assert!(!rows[0].extrapolated);
    }

    #[test]
    fn oracle_sweep_rows_are_bit_equal_to_direct_evaluation() {
        let spec = oracle_r_spec(30.0, 300.0, 80.0, (30.0, 100.0, 5.0));
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 15);
        for row in &rows {
            let g = spec.geometry_at(row.value).unwrap();
            assert_eq!(row.spectrum, oracle_spectrum(MetalKind::Al, &g).unwrap());
        }
    }

    #[test]
    fn resonance_center_drifts_two_nm_per_nm_of_radius() {
        let spec = oracle_r_spec(50.0, 300.0, 80.0, (30.0, 150.0, 1.0));
        let rows = run_sweep(&spec).unwrap();
        for pair in rows.windows(2) {
            let c0 = MetalKind::Al.modes(&spec.geometry_at(pair[0].value).unwrap())[0].center;
            let c1 = MetalKind::Al.modes(&spec.geometry_at(pair[1].value).unwrap())[0].center;
            assert!((c1 - c0 - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn find_resonance_snaps_the_worked_example_to_the_grid() {
        let g = GeometrySample::new(50.0, 300.0, 90.0, 80.0).unwrap();
        let s = oracle_spectrum(MetalKind::Al, &g).unwrap();
        let found = find_resonance(&s);
        let expected = 500.0 + 24.0 * (350.0 / 63.0);
        assert!((found - expected).abs() < 1e-12, "{found}");
        assert!((found - base_resonance(&g)).abs() <= 0.5 * 350.0 / 63.0 + 1e-9);
    }

    #[test]
    fn constant_magnitude_ties_break_to_the_shortest_wavelength() {
        let s = Spectrum::new(vec![0.3; SPECTRUM_POINTS], vec![0.1; SPECTRUM_POINTS]).unwrap();
        assert_eq!(find_resonance(&s), 500.0);
    }

    #[test]
    fn resonances_are_within_one_grid_step_across_the_whole_grid() {
        let step = 350.0 / 63.0;
        for metal in [MetalKind::Al, MetalKind::Au] {
            let ds = generate_grid(metal, 0);
            for (g, s) in &ds.samples {
                let center = metal.modes(g)[0].center;
                if !(510.0..=840.0).contains(&center) {
                    continue;
                }
                let found = find_resonance(s);
                assert!(
                    (found - center).abs() <= step + 1e-9,
                    "{metal} {g:?}: found {found}, center {center}"
                );
            }
        }
    }

    #[test]
    fn resonance_is_monotone_along_a_radius_sweep() {
        let spec = oracle_r_spec(50.0, 300.0, 80.0, (30.0, 150.0, 5.0));
        let rows = run_sweep(&spec).unwrap();
        let res: Vec<f64> = rows.iter().map(|r| find_resonance(&r.spectrum)).collect();
        for pair in res.windows(2) {
            assert!(pair[1] >= pair[0], "resonance went backwards: {pair:?}");
        }
    }

    #[test]
    fn phase_matches_the_worked_example() {
        let s = Spectrum::new(vec![0.425; SPECTRUM_POINTS], vec![0.575; SPECTRUM_POINTS]).unwrap();
        let phase = phase_at(&s, 694.0).unwrap();
        assert!((phase - 0.9342881110069455).abs() < 1e-12);
        assert!((phase - 0.934).abs() < 1e-3);
    }

    #[test]
    fn unit_reflection_has_zero_phase() {
        let s = Spectrum::new(vec![1.0; SPECTRUM_POINTS], vec![0.0; SPECTRUM_POINTS]).unwrap();
        assert_eq!(phase_at(&s, 650.0).unwrap(), 0.0);
    }

    #[test]
    fn conjugated_spectrum_negates_phase() {
        let g = GeometrySample::new(50.0, 300.0, 90.0, 80.0).unwrap();
        let s = oracle_spectrum(MetalKind::Au, &g).unwrap();
        let conj = Spectrum::new(s.re().to_vec(), s.im().iter().map(|v| -v).collect()).unwrap();
        for lambda in [500.0, 600.0, 649.0, 700.0, 850.0] {
            let a = phase_at(&s, lambda).unwrap();
            let b = phase_at(&conj, lambda).unwrap();
            if a.abs() < std::f64::consts::PI - 1e-9 {
                assert!((a + b).abs() < 1e-12, "phase {a} vs conjugate {b}");
            }
        }
    }

    #[test]
    fn phase_is_continuous_between_grid_points() {
        // gold stays in the right half plane (re >= 1 - K = 0.05), so
        // the principal branch has no cut to cross
        let g = GeometrySample::new(50.0, 300.0, 90.0, 80.0).unwrap();
        let s = oracle_spectrum(MetalKind::Au, &g).unwrap();
        let canon = canonical_wavelengths();
        let max_adjacent = (0..SPECTRUM_POINTS - 1)
            .map(|k| {
                let a = phase_at(&s, canon[k]).unwrap();
                let b = phase_at(&s, canon[k + 1]).unwrap();
                (a - b).abs()
            })
            .fold(0.0, f64::max);
        let mut prev = phase_at(&s, 500.0).unwrap();
        let mut lambda = 500.25;
        while lambda <= 850.0 {
            let cur = phase_at(&s, lambda).unwrap();
            assert!(
                (cur - prev).abs() <= max_adjacent + 1e-9,
                "jump at {lambda}: {prev} -> {cur}"
            );
            prev = cur;
            lambda += 0.25;
        }
    }

    #[test]
    fn phase_rejects_wavelengths_outside_the_window() {
        let s = Spectrum::new(vec![1.0; SPECTRUM_POINTS], vec![0.0; SPECTRUM_POINTS]).unwrap();
        assert!(matches!(
            phase_at(&s, 499.9),
            Err(SweepError::OutOfWindow { .. })
        ));
        assert!(matches!(
            phase_at(&s, 851.0),
            Err(SweepError::OutOfWindow { .. })
        ));
        assert!(phase_at(&s, 500.0).is_ok());
        assert!(phase_at(&s, 850.0).is_ok());
    }

    #[test]
    fn interpolation_recovers_oracle_values_between_grid_points() {
        let g = GeometrySample::new(50.0, 300.0, 90.0, 80.0).unwrap();
        let s = oracle_spectrum(MetalKind::Al, &g).unwrap();
        // at a canonical point the interpolation collapses to that sample
        let canon = canonical_wavelengths();
        for &k in &[0usize, 13, 31, 63] {
            let z = interp_s11(&s, canon[k]).unwrap();
            assert!((z - s.at(k)).norm() < 1e-12);
        }
        // between points it tracks the smooth oracle closely
        let z = interp_s11(&s, 640.0).unwrap();
        let exact = oracle_s11(MetalKind::Al, &g, 640.0).unwrap();
        assert!((z - exact).norm() < 5e-3);
    }

    #[test]
    fn design_hits_the_650_target_with_quarter_nm_radius_steps() {
        let spec = oracle_r_spec(20.0, 375.0, 80.0, (30.0, 150.0, 0.25));
        let picked = design_for_target(&spec, 650.0).unwrap();
        assert!(
            (picked - 73.25).abs() < 0.25 + 1e-9,
            "picked R = {picked}, wanted 73.25"
        );
    }

    #[test]
    fn design_returns_an_endpoint_whose_resonance_is_the_target() {
        let spec = oracle_r_spec(50.0, 300.0, 80.0, (30.0, 90.0, 10.0));
        let g = spec.geometry_at(90.0).unwrap();
        let target = find_resonance(&oracle_spectrum(MetalKind::Al, &g).unwrap());
        assert_eq!(design_for_target(&spec, target).unwrap(), 90.0);
    }

    #[test]
    fn design_is_idempotent_around_its_answer() {
        let spec = oracle_r_spec(20.0, 375.0, 80.0, (30.0, 150.0, 0.25));
        let first = design_for_target(&spec, 650.0).unwrap();
        let again = SweepSpec {
            range: (first - 5.0, first + 5.0, 0.25),
            ..spec.clone()
        };
        assert_eq!(design_for_target(&again, 650.0).unwrap(), first);
    }

    #[test]
    fn design_rejects_targets_outside_the_window() {
        let spec = oracle_r_spec(20.0, 375.0, 80.0, (30.0, 150.0, 5.0));
        assert!(matches!(
            design_for_target(&spec, 451.0),
            Err(SweepError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn model_backend_flags_extrapolated_rows() {
        let mut params = init_params(
            &ModelConfig {
                input_dim: 4,
                trunk_width: 8,
                hidden_width: 16,
                num_blocks: 1,
                spectrum_points: SPECTRUM_POINTS,
            },
            3,
        )
        .unwrap();
        params.norm_stats = vec![(20.0, 100.0), (200.0, 400.0), (30.0, 150.0), (60.0, 100.0)];
        let spec = SweepSpec {
            backend: SweepBackend::Model(Box::new(params)),
            vary: VaryParam::R,
            fixed: FixedParams {
                h: Some(50.0),
                p: Some(300.0),
                t: Some(80.0),
                r: None,
            },
            range: (140.0, 160.0, 5.0),
            probe: None,
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 5);
        let flags: Vec<bool> = rows.iter().map(|r| r.extrapolated).collect();
        assert_eq!(flags, [false, false, false, true, true]);
    }
}
