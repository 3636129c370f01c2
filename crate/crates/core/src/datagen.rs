//! Synthetic configuration generators.
//!
//! Every row draws from its own ChaCha stream (`seed`, stream = row index), so
//! a dataset is fully determined by its seed and parameters regardless of the
//! order rows are produced in.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cv::CvKind;
use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::geometry::{atom, SimBox};

/// Rows whose Mg–partner distance falls below this are redrawn (nm).
pub const SINGULAR_DISTANCE: f64 = 1e-4;
/// Structured rows with any pair of atoms closer than this are redrawn (nm).
pub const OVERLAP_DISTANCE: f64 = 1e-3;

const MAX_REDRAWS: usize = 10_000;

/// Parameters of the structured ("simulation-like") generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuredParams {
    /// Oxygens placed in the first hydration shell.
    pub shell_count: usize,
    pub shell_mean: f64,
    pub shell_sd: f64,
    /// Remaining oxygens sit at distances uniform in `[outer_min, L/2]`.
    pub outer_min: f64,
    /// Contact ion pair basin of the Mg–Cl distance.
    pub contact_mean: f64,
    pub contact_sd: f64,
    /// Solvent-separated ion pair basin.
    pub separated_mean: f64,
    pub separated_sd: f64,
    /// Probability of drawing from the contact basin.
    pub contact_weight: f64,
    /// Randomise which input slots hold the shell oxygens.
    pub shuffle_oxygens: bool,
}

impl Default for StructuredParams {
    fn default() -> Self {
        StructuredParams {
            shell_count: 6,
            shell_mean: 0.21,
            shell_sd: 0.015,
            outer_min: 0.4,
            contact_mean: 0.25,
            contact_sd: 0.03,
            separated_mean: 0.50,
            separated_sd: 0.06,
            contact_weight: 0.5,
            shuffle_oxygens: true,
        }
    }
}

impl StructuredParams {
    fn validate(&self, kind: CvKind, sim_box: SimBox) -> Result<()> {
        let half = 0.5 * sim_box.length();
        let ok = self.shell_sd > 0.0
            && self.contact_sd > 0.0
            && self.separated_sd > 0.0
            && (0.0..=1.0).contains(&self.contact_weight)
            && self.outer_min < half
            && (kind != CvKind::Coordination || self.shell_count < kind.atom_masses().len());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid structured generator parameters: {self:?}")))
        }
    }
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn into_box(x: f64, l: f64) -> f64 {
    let r = x.rem_euclid(l);
    if r >= l {
        0.0
    } else {
        r
    }
}

fn min_partner_distance(coords: &[f64], sim_box: SimBox) -> f64 {
    let mg = atom(coords, 0);
    (1..coords.len() / 3)
        .map(|i| sim_box.distance(atom(coords, i), mg))
        .fold(f64::INFINITY, f64::min)
}

fn min_pair_distance(coords: &[f64], sim_box: SimBox) -> f64 {
    let n = coords.len() / 3;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(sim_box.distance(atom(coords, i), atom(coords, j)));
        }
    }
    best
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Every coordinate i.i.d. uniform on `[0, L)`.
pub fn gen_uniform(kind: CvKind, n: usize, sim_box: SimBox, seed: u64) -> Result<LabeledDataset> {
    check_n(n)?;
    let oracle = kind.oracle(sim_box);
    let dim = kind.input_dim();
    let l = sim_box.length();
    let mut ds = LabeledDataset::new(kind, sim_box, Provenance::Uniform, seed);
    let mut coords = vec![0.0; dim];
    for row in 0..n {
        let mut rng = row_rng(seed, row);
        let mut tries = 0;
        loop {
            coords.iter_mut().for_each(|c| *c = rng.random_range(0.0..l));
            if min_partner_distance(&coords, sim_box) >= SINGULAR_DISTANCE {
                break;
            }
            tries += 1;
            if tries > MAX_REDRAWS {
                return Err(Error::Numerical(format!("row {row}: could not draw a non-singular configuration")));
            }
        }
        ds.push_labeled(oracle.as_ref(), &coords)?;
    }
    Ok(ds)
}

fn place(center: [f64; 3], r: f64, rng: &mut ChaCha8Rng, l: f64) -> [f64; 3] {
    let u: [f64; 3] = UnitSphere.sample(rng);
    [
        into_box(center[0] + r * u[0], l),
        into_box(center[1] + r * u[1], l),
        into_box(center[2] + r * u[2], l),
    ]
}

/// Positive draw from a normal distribution.
fn positive_normal(dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let r = dist.sample(rng);
        if r > OVERLAP_DISTANCE {
            return r;
        }
    }
}

fn structured_row(
    kind: CvKind,
    sim_box: SimBox,
    params: &StructuredParams,
    rng: &mut ChaCha8Rng,
    coords: &mut Vec<f64>,
) {
    let l = sim_box.length();
    coords.clear();
    let mg = [rng.random_range(0.0..l), rng.random_range(0.0..l), rng.random_range(0.0..l)];
    coords.extend_from_slice(&mg);
    match kind {
        CvKind::Distance => {
            let (mean, sd) = if rng.random::<f64>() < params.contact_weight {
                (params.contact_mean, params.contact_sd)
            } else {
                (params.separated_mean, params.separated_sd)
            };
            let r = positive_normal(&Normal::new(mean, sd).expect("validated sd"), rng);
            coords.extend_from_slice(&place(mg, r, rng, l));
        }
        CvKind::Coordination => {
            let n_oxygens = kind.atom_masses().len() - 1;
            let shell = Normal::new(params.shell_mean, params.shell_sd).expect("validated sd");
            let mut slots: Vec<usize> = (0..n_oxygens).collect();
            if params.shuffle_oxygens {
                slots.shuffle(rng);
            }
            let mut oxygens = vec![[0.0; 3]; n_oxygens];
            for (k, &slot) in slots.iter().enumerate() {
                let r = if k < params.shell_count {
                    positive_normal(&shell, rng)
                } else {
                    rng.random_range(params.outer_min..=0.5 * l)
                };
                oxygens[slot] = place(mg, r, rng, l);
            }
            for o in oxygens {
                coords.extend_from_slice(&o);
            }
        }
    }
}

/// Configurations concentrated where the real system spends its time: a
/// hydration shell around Mg for the coordination CV, and a bimodal
/// contact / solvent-separated Mg–Cl distance for the distance CV.
pub fn gen_structured(
    kind: CvKind,
    n: usize,
    sim_box: SimBox,
    seed: u64,
    params: &StructuredParams,
) -> Result<LabeledDataset> {
    check_n(n)?;
    params.validate(kind, sim_box)?;
    let oracle = kind.oracle(sim_box);
    let mut ds = LabeledDataset::new(kind, sim_box, Provenance::Structured, seed);
    let mut coords = Vec::with_capacity(kind.input_dim());
    for row in 0..n {
        let mut rng = row_rng(seed, row);
        let mut tries = 0;
        loop {
            structured_row(kind, sim_box, params, &mut rng, &mut coords);
            if min_pair_distance(&coords, sim_box) >= OVERLAP_DISTANCE {
                break;
            }
            tries += 1;
            if tries > MAX_REDRAWS {
                return Err(Error::Numerical(format!("row {row}: could not draw a non-overlapping configuration")));
            }
        }
        ds.push_labeled(oracle.as_ref(), &coords)?;
    }
    Ok(ds)
}
