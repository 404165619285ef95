//! Synthetic data: a coupled-mode reflection oracle, the 9^4 geometry
//! grid, the seeded train/test split, input normalization and the CSV
//! on-disk format with its JSON sidecar.
//!
//! The oracle is single-port temporal coupled-mode theory: each metal
//! contributes one or two Lorentzian modes whose center follows the
//! geometry through lambda0 = 300 + 2 R + 0.5 P - 0.4 H + 0.3 T (nm),
//! and S11(lambda) = 1 - sum_j K_j / (1 + i (lambda - c_j) / Gamma_j).

use crate::numeric::Rng;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Points in every stored spectrum.
pub const SPECTRUM_POINTS: usize = 64;
pub const WAVELENGTH_MIN_NM: f64 = 500.0;
pub const WAVELENGTH_MAX_NM: f64 = 850.0;
/// Full factorial grid: 9 levels per geometry parameter.
pub const GRID_SIZE: usize = 6561;
/// Samples reserved for the held-out test split.
pub const TEST_SPLIT_SIZE: usize = 609;
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug)]
pub enum DataError {
    OutOfWindow {
        lambda: f64,
    },
    BadGeometry {
        detail: String,
    },
    BadMetal {
        token: String,
    },
    DegenerateDimension {
        dim: &'static str,
    },
    WrongSampleCount {
        expected: usize,
        got: usize,
    },
    MalformedHeader {
        line: usize,
        detail: String,
    },
    RowArity {
        line: usize,
        expected: usize,
        got: usize,
    },
    BadNumber {
        line: usize,
        field: usize,
        detail: String,
    },
    SpectrumLength {
        got: usize,
    },
    BadSidecar {
        detail: String,
    },
    Io(std::io::Error),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::OutOfWindow { lambda } => write!(
                f,
                "wavelength {lambda} nm outside the [{WAVELENGTH_MIN_NM}, {WAVELENGTH_MAX_NM}] window"
            ),
            DataError::BadGeometry { detail } => write!(f, "bad geometry: {detail}"),
            DataError::BadMetal { token } => {
                write!(f, "unknown metal '{token}' (expected al, au or ag)")
            }
            DataError::DegenerateDimension { dim } => {
                write!(f, "normalizer: dimension {dim} has zero range")
            }
            DataError::WrongSampleCount { expected, got } => {
                write!(f, "dataset has {got} samples, expected {expected}")
            }
            DataError::MalformedHeader { line, detail } => {
                write!(f, "line {line}: malformed header: {detail}")
            }
            DataError::RowArity { line, expected, got } => {
                write!(f, "line {line}: expected {expected} fields, got {got}")
            }
            DataError::BadNumber { line, field, detail } => {
                write!(f, "line {line}, field {field}: {detail}")
            }
            DataError::SpectrumLength { got } => {
                write!(f, "spectrum must have {SPECTRUM_POINTS} points per part, got {got}")
            }
            DataError::BadSidecar { detail } => write!(f, "bad sidecar: {detail}"),
            DataError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetalKind {
    Al,
    Au,
    Ag,
}

impl fmt::Display for MetalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetalKind::Al => "al",
            MetalKind::Au => "au",
            MetalKind::Ag => "ag",
        })
    }
}

impl FromStr for MetalKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.to_ascii_lowercase().as_str() {
            "al" => Ok(MetalKind::Al),
            "au" => Ok(MetalKind::Au),
            "ag" => Ok(MetalKind::Ag),
            _ => Err(DataError::BadMetal { token: s.into() }),
        }
    }
}

/// Unit-cell geometry in nm: disk height H, lattice pitch P, disk
/// radius R, spacer thickness T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySample {
    pub h: f64,
    pub p: f64,
    pub r: f64,
    pub t: f64,
}

impl GeometrySample {
    pub fn new(h: f64, p: f64, r: f64, t: f64) -> Result<Self, DataError> {
        let g = GeometrySample { h, p, r, t };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [("H", self.h), ("P", self.p), ("R", self.r), ("T", self.t)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(DataError::BadGeometry {
                    detail: format!("{name} = {v}, must be finite and positive"),
                });
            }
        }
        Ok(())
    }

    /// Disk fits inside the unit cell. The grid deliberately includes
    /// implausible corners; this flag records them without rejecting.
    pub fn is_plausible(&self) -> bool {
        self.r < self.p / 2.0
    }

    /// Fixed input order H, P, R, T.
    pub fn as_array(&self) -> [f64; 4] {
        [self.h, self.p, self.r, self.t]
    }
}

/// 64-point complex reflection spectrum on the canonical wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self, DataError> {
        if re.len() != SPECTRUM_POINTS || im.len() != SPECTRUM_POINTS {
            return Err(DataError::SpectrumLength {
                got: re.len().max(im.len()),
            });
        }
        Ok(Spectrum { re, im })
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn at(&self, k: usize) -> Complex64 {
        Complex64::new(self.re[k], self.im[k])
    }
}

/// The canonical wavelength grid: lambda_k = 500 + k (350 / 63) nm.
pub fn canonical_wavelengths() -> Vec<f64> {
    let step = (WAVELENGTH_MAX_NM - WAVELENGTH_MIN_NM) / (SPECTRUM_POINTS - 1) as f64;
    (0..SPECTRUM_POINTS)
        .map(|k| WAVELENGTH_MIN_NM + k as f64 * step)
        .collect()
}

/// One Lorentzian resonance: center (nm), coupling strength, width (nm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub center: f64,
    pub coupling: f64,
    pub width: f64,
}

/// Geometry-controlled base resonance in nm.
pub fn base_resonance(g: &GeometrySample) -> f64 {
    300.0 + 2.0 * g.r + 0.5 * g.p - 0.4 * g.h + 0.3 * g.t
}

impl MetalKind {
    /// Mode table for a geometry. Al and Au carry one mode, Ag two.
    pub fn modes(&self, g: &GeometrySample) -> Vec<Mode> {
        let l0 = base_resonance(g);
        match self {
            MetalKind::Al => vec![Mode {
                center: l0,
                coupling: 1.15,
                width: 60.0,
            }],
            MetalKind::Au => vec![Mode {
                center: l0 + 15.0,
                coupling: 0.95,
                width: 45.0,
            }],
            MetalKind::Ag => vec![
                Mode {
                    center: l0 - 10.0,
                    coupling: 1.05,
                    width: 30.0,
                },
                Mode {
                    center: 0.6 * l0 + 180.0,
                    coupling: 0.45,
                    width: 18.0,
                },
            ],
        }
    }
}

/// S11(lambda) = 1 - sum_j K_j / (1 + i (lambda - c_j) / Gamma_j).
/// No window check; callers outside tests go through [`oracle_s11`].
pub fn s11_from_modes(modes: &[Mode], lambda: f64) -> Complex64 {
    let mut s = Complex64::new(1.0, 0.0);
    for m in modes {
        let x = (lambda - m.center) / m.width;
        let denom = 1.0 + x * x;
        // K / (1 + i x) = K (1 - i x) / (1 + x^2)
        s -= Complex64::new(m.coupling / denom, -m.coupling * x / denom);
    }
    s
}

/// Oracle reflection coefficient for a metal/geometry at one wavelength
/// inside the [500, 850] nm window.
pub fn oracle_s11(
    metal: MetalKind,
    g: &GeometrySample,
    lambda: f64,
) -> Result<Complex64, DataError> {
    g.validate()?;
    if !(WAVELENGTH_MIN_NM..=WAVELENGTH_MAX_NM).contains(&lambda) {
        return Err(DataError::OutOfWindow { lambda });
    }
    Ok(s11_from_modes(&metal.modes(g), lambda))
}

/// Oracle spectrum on the canonical wavelength grid.
pub fn oracle_spectrum(metal: MetalKind, g: &GeometrySample) -> Result<Spectrum, DataError> {
    g.validate()?;
    let modes = metal.modes(g);
    let mut re = Vec::with_capacity(SPECTRUM_POINTS);
    let mut im = Vec::with_capacity(SPECTRUM_POINTS);
    for lambda in canonical_wavelengths() {
        let s = s11_from_modes(&modes, lambda);
        re.push(s.re);
        im.push(s.im);
    }
    Spectrum::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub generator_version: u32,
}

/// A full labeled dataset for one metal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metal: MetalKind,
    pub samples: Vec<(GeometrySample, Spectrum)>,
    pub provenance: Provenance,
}

/// The 9 grid levels of each parameter: H 20..100 by 10, P 200..400 by
/// 25, R 30..150 by 15, T 60..100 by 5.
pub fn grid_levels() -> [Vec<f64>; 4] {
    let axis =
        |start: f64, step: f64| -> Vec<f64> { (0..9).map(|i| start + step * i as f64).collect() };
    [
        axis(20.0, 10.0),
        axis(200.0, 25.0),
        axis(30.0, 15.0),
        axis(60.0, 5.0),
    ]
}

/// Full factorial dataset in lexicographic order (H outermost, T
/// innermost), 6561 samples, each labeled with its oracle spectrum.
/// Generation is deterministic; `seed` is provenance for later splits.
pub fn generate_grid(metal: MetalKind, seed: u64) -> Dataset {
    let [hs, ps, rs, ts] = grid_levels();
    let mut samples = Vec::with_capacity(GRID_SIZE);
    for &h in &hs {
        for &p in &ps {
            for &r in &rs {
                for &t in &ts {
                    let g = GeometrySample { h, p, r, t };
                    let spec = oracle_spectrum(metal, &g).expect("grid geometry is valid");
                    samples.push((g, spec));
                }
            }
        }
    }
    Dataset {
        metal,
        samples,
        provenance: Provenance {
            seed,
            generator_version: GENERATOR_VERSION,
        },
    }
}

/// Seeded Fisher-Yates split: the first [`TEST_SPLIT_SIZE`] samples of
/// the shuffled order become the test set, the rest the training pool,
/// both kept in shuffled order. Returns (pool, test).
#[allow(clippy::type_complexity)]
pub fn split(
    dataset: &Dataset,
    seed: u64,
) -> Result<
    (
        Vec<(GeometrySample, Spectrum)>,
        Vec<(GeometrySample, Spectrum)>,
    ),
    DataError,
> {
    if dataset.samples.len() != GRID_SIZE {
        return Err(DataError::WrongSampleCount {
            expected: GRID_SIZE,
            got: dataset.samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let test = order[..TEST_SPLIT_SIZE]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let pool = order[TEST_SPLIT_SIZE..]
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    Ok((pool, test))
}

/// Per-dimension (min, max) over the training pool, input order H, P, R, T.
pub fn fit_normalizer(pool: &[(GeometrySample, Spectrum)]) -> Result<Vec<(f64, f64)>, DataError> {
    if pool.is_empty() {
        return Err(DataError::WrongSampleCount {
            expected: 1,
            got: 0,
        });
    }
    let names = ["H", "P", "R", "T"];
    let mut stats = vec![(f64::INFINITY, f64::NEG_INFINITY); 4];
    for (g, _) in pool {
        for (d, v) in g.as_array().into_iter().enumerate() {
            stats[d].0 = stats[d].0.min(v);
            stats[d].1 = stats[d].1.max(v);
        }
    }
    for (d, &(lo, hi)) in stats.iter().enumerate() {
        // samples are validated finite, so <= is a full degeneracy check
        if hi <= lo {
            return Err(DataError::DegenerateDimension { dim: names[d] });
        }
    }
    Ok(stats)
}

/// Min-max normalization of one geometry; training-pool values map into
/// [0, 1], anything outside extrapolates past that range.
pub fn normalize_geometry(g: &GeometrySample, stats: &[(f64, f64)]) -> [f64; 4] {
    let raw = g.as_array();
    let mut out = [0.0; 4];
    for d in 0..4 {
        let (lo, hi) = stats[d];
        out[d] = (raw[d] - lo) / (hi - lo);
    }
    out
}

/// True when some coordinate falls outside the normalizer's fitted range.
pub fn is_extrapolated(g: &GeometrySample, stats: &[(f64, f64)]) -> bool {
    g.as_array()
        .into_iter()
        .zip(stats)
        .any(|(v, &(lo, hi))| v < lo || v > hi)
}

/// Full-precision float field: 17 significant digits, exact f64 round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_header() -> String {
    let mut cols = vec![
        "metal".to_string(),
        "H".into(),
        "P".into(),
        "R".into(),
        "T".into(),
    ];
    for k in 0..SPECTRUM_POINTS {
        cols.push(format!("re_{k}"));
    }
    for k in 0..SPECTRUM_POINTS {
        cols.push(format!("im_{k}"));
    }
    cols.join(",")
}

/// Canonical CSV bytes: header plus one row per sample, floats in
/// [`fmt_f64`] form. Identical datasets serialize to identical bytes.
pub fn serialize_dataset_csv(dataset: &Dataset) -> Vec<u8> {
    let mut out = String::with_capacity(dataset.samples.len() * 3400);
    out.push_str(&csv_header());
    out.push('\n');
    for (g, s) in &dataset.samples {
        out.push_str(&dataset.metal.to_string());
        for v in g.as_array() {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        for &v in s.re() {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        for &v in s.im() {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// "sha256:<hex>" over the canonical CSV bytes.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_dataset_csv(dataset));
    format!("sha256:{:x}", hasher.finalize())
}

/// Sidecar path: the dataset path with ".meta.json" appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AxisDoc {
    start: f64,
    step: f64,
    levels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModeDoc {
    center_scale: f64,
    center_offset_nm: f64,
    coupling: f64,
    width_nm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarFile {
    generator_version: u32,
    seed: u64,
    metal: MetalKind,
    sample_count: usize,
    implausible_samples: usize,
    parameter_ranges: [AxisDoc; 4],
    wavelengths_nm: AxisDoc,
    base_resonance_nm: BaseResonanceDoc,
    modes: Vec<ModeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaseResonanceDoc {
    offset: f64,
    r_coeff: f64,
    p_coeff: f64,
    h_coeff: f64,
    t_coeff: f64,
}

fn sidecar_for(dataset: &Dataset) -> SidecarFile {
    // the mode table expressed as center = scale * lambda0 + offset
    let modes = match dataset.metal {
        MetalKind::Al => vec![ModeDoc {
            center_scale: 1.0,
            center_offset_nm: 0.0,
            coupling: 1.15,
            width_nm: 60.0,
        }],
        MetalKind::Au => vec![ModeDoc {
            center_scale: 1.0,
            center_offset_nm: 15.0,
            coupling: 0.95,
            width_nm: 45.0,
        }],
        MetalKind::Ag => vec![
            ModeDoc {
                center_scale: 1.0,
                center_offset_nm: -10.0,
                coupling: 1.05,
                width_nm: 30.0,
            },
            ModeDoc {
                center_scale: 0.6,
                center_offset_nm: 180.0,
                coupling: 0.45,
                width_nm: 18.0,
            },
        ],
    };
    SidecarFile {
        generator_version: dataset.provenance.generator_version,
        seed: dataset.provenance.seed,
        metal: dataset.metal,
        sample_count: dataset.samples.len(),
        implausible_samples: dataset
            .samples
            .iter()
            .filter(|(g, _)| !g.is_plausible())
            .count(),
        parameter_ranges: [
            AxisDoc {
                start: 20.0,
                step: 10.0,
                levels: 9,
            },
            AxisDoc {
                start: 200.0,
                step: 25.0,
                levels: 9,
            },
            AxisDoc {
                start: 30.0,
                step: 15.0,
                levels: 9,
            },
            AxisDoc {
                start: 60.0,
                step: 5.0,
                levels: 9,
            },
        ],
        wavelengths_nm: AxisDoc {
            start: WAVELENGTH_MIN_NM,
            step: (WAVELENGTH_MAX_NM - WAVELENGTH_MIN_NM) / (SPECTRUM_POINTS - 1) as f64,
            levels: SPECTRUM_POINTS,
        },
        base_resonance_nm: BaseResonanceDoc {
            offset: 300.0,
            r_coeff: 2.0,
            p_coeff: 0.5,
            h_coeff: -0.4,
            t_coeff: 0.3,
        },
        modes,
    }
}

/// Writes the CSV plus its metadata sidecar.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, serialize_dataset_csv(dataset))?;
    let sidecar = serde_json::to_vec_pretty(&sidecar_for(dataset))
        .expect("sidecar serialization cannot fail");
    fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

/// Reads a dataset CSV (and provenance from the sidecar when present).
/// Errors carry 1-based line numbers.
pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    parse_dataset_csv(&text, path)
}

fn parse_dataset_csv(text: &str, path: &Path) -> Result<Dataset, DataError> {
    let expected_fields = 5 + 2 * SPECTRUM_POINTS;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::MalformedHeader {
        line: 1,
        detail: "empty file".into(),
    })?;
    if header != csv_header() {
        return Err(DataError::MalformedHeader {
            line: 1,
            detail: format!("expected '{}...'", &csv_header()[..20]),
        });
    }
    let mut metal: Option<MetalKind> = None;
    let mut samples = Vec::with_capacity(GRID_SIZE);
    for (idx, row) in lines {
        let line = idx + 1; // enumerate is 0-based, file lines are 1-based
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != expected_fields {
            return Err(DataError::RowArity {
                line,
                expected: expected_fields,
                got: fields.len(),
            });
        }
        let row_metal = MetalKind::from_str(fields[0])?;
        match metal {
            None => metal = Some(row_metal),
            Some(m) if m != row_metal => {
                return Err(DataError::BadMetal {
                    token: format!("{row_metal} on line {line}, dataset started with {m}"),
                })
            }
            _ => {}
        }
        let mut nums = Vec::with_capacity(expected_fields - 1);
        for (j, raw) in fields[1..].iter().enumerate() {
            let v: f64 = raw.parse().map_err(|e| DataError::BadNumber {
                line,
                field: j + 2,
                detail: format!("'{raw}': {e}"),
            })?;
            nums.push(v);
        }
        let g = GeometrySample {
            h: nums[0],
            p: nums[1],
            r: nums[2],
            t: nums[3],
        };
        g.validate()?;
        let re = nums[4..4 + SPECTRUM_POINTS].to_vec();
        let im = nums[4 + SPECTRUM_POINTS..].to_vec();
        samples.push((g, Spectrum::new(re, im)?));
    }
    if samples.len() != GRID_SIZE {
        return Err(DataError::WrongSampleCount {
            expected: GRID_SIZE,
            got: samples.len(),
        });
    }
    let metal = metal.expect("nonempty dataset has a metal");
    let provenance = match fs::read(sidecar_path(path)) {
        Ok(bytes) => {
            let sc: SidecarFile =
                serde_json::from_slice(&bytes).map_err(|e| DataError::BadSidecar {
                    detail: e.to_string(),
                })?;
            Provenance {
                seed: sc.seed,
                generator_version: sc.generator_version,
            }
        }
        Err(_) => Provenance {
            seed: 0,
            generator_version: GENERATOR_VERSION,
        },
    };
    Ok(Dataset {
        metal,
        samples,
        provenance,
    })
}
