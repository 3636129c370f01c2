//! Metadynamics bias, the mass-weighted metric tensor and the instantaneous
//! collective force along a CV trajectory.
//!
//! Units: time in ps, lengths in nm, masses in amu, energies in kJ/mol.
//! With those, `amu·nm²/ps²` is exactly one kJ/mol, so the force comes out
//! in kJ/mol per CV unit with no conversion factor.
//!
//! The force at frame i is
//!
//! ```text
//! f = d/dt (Z⁻¹ dξ/dt) − F_bias(ξ)
//! ```
//!
//! with `Z⁻¹` inside the outer derivative. Both time derivatives use
//! 3-point central differences; the first and last frames fall back to the
//! second-order one-sided stencil and are flagged.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::cv::{CvFunction, CvKind};
use crate::error::{Error, Result};
use crate::geometry::SimBox;

/// Minimum frames for the nested stencils.
pub const MIN_FRAMES: usize = 5;
/// Above this condition number a multi-CV solve logs a warning.
pub const CONDITION_WARNING: f64 = 1e12;

/// One Gaussian deposited at `time` (ps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hill {
    pub time: f64,
    pub center: f64,
    /// kJ/mol
    pub height: f64,
    pub sigma: f64,
}

impl Hill {
    pub fn new(time: f64, center: f64, height: f64, sigma: f64) -> Result<Self> {
        let all_finite = [time, center, height, sigma].iter().all(|v| v.is_finite());
        if !all_finite || height < 0.0 || sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hill needs finite fields, height >= 0 and sigma > 0 \
                 (time {time}, center {center}, height {height}, sigma {sigma})"
            )));
        }
        Ok(Hill {
            time,
            center,
            height,
            sigma,
        })
    }

    fn gaussian(&self, xi: f64) -> f64 {
        let u = xi - self.center;
        self.height * (-(u * u) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiasHills {
    hills: Vec<Hill>,
}

impl BiasHills {
    pub fn new(hills: Vec<Hill>) -> Self {
        BiasHills { hills }
    }

    pub fn hills(&self) -> &[Hill] {
        &self.hills
    }

    pub fn len(&self) -> usize {
        self.hills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hills.is_empty()
    }

    fn before(&self, t: f64) -> impl Iterator<Item = &Hill> {
        self.hills.iter().filter(move |h| h.time < t)
    }

    /// Bias potential at `xi` from hills deposited strictly before `t`.
    pub fn bias_potential(&self, xi: f64, t: f64) -> f64 {
        self.before(t).map(|h| h.gaussian(xi)).sum()
    }

    /// Minus the derivative of [`BiasHills::bias_potential`] in `xi`.
    pub fn bias_force(&self, xi: f64, t: f64) -> f64 {
        self.before(t)
            .map(|h| h.gaussian(xi) * (xi - h.center) / (h.sigma * h.sigma))
            .sum()
    }

    /// Parse `time,center,height,sigma` rows. `#` starts a comment line;
    /// commas or whitespace separate fields.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut hills = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: path.to_string(),
                line: k + 1,
                msg,
            };
            let v = parse_fields(line).map_err(perr)?;
            if v.len() != 4 {
                return Err(perr(format!("expected 4 columns (time, center, height, sigma), found {}", v.len())));
            }
            hills.push(Hill::new(v[0], v[1], v[2], v[3]).map_err(|e| perr(e.to_string()))?);
        }
        Ok(BiasHills { hills })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn parse_fields(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .map(|f| f.parse::<f64>().map_err(|_| format!("cannot parse '{f}' as a number")))
        .collect()
}

/// Diagonal mass matrix, one entry per Cartesian coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    diag: Vec<f64>,
}

impl MassMatrix {
    /// Expand per-atom masses (amu) to x, y, z entries.
    pub fn from_atoms(masses: &[f64]) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidArgument(format!("atomic masses must be positive: {masses:?}")));
        }
        Ok(MassMatrix {
            diag: masses.iter().flat_map(|&m| [m; 3]).collect(),
        })
    }

    pub fn for_cv(kind: CvKind) -> Self {
        Self::from_atoms(&kind.atom_masses()).expect("standard masses are positive")
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

/// `Z_ab = Σ_d J_a,d J_b,d / μ_d` for the CV Jacobians `jacobians[a]`.
pub fn metric_tensor(jacobians: &[&[f64]], masses: &MassMatrix) -> Result<DMatrix<f64>> {
    let n = jacobians.len();
    if n == 0 {
        return Err(Error::InvalidArgument("metric tensor needs at least one CV".into()));
    }
    for j in jacobians {
        if j.len() != masses.dim() {
            return Err(Error::Dimension {
                expected: masses.dim(),
                got: j.len(),
            });
        }
    }
    let mut z = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let s: f64 = jacobians[a]
                .iter()
                .zip(jacobians[b])
                .zip(&masses.diag)
                .map(|((x, y), m)| x * y / m)
                .sum();
            z[(a, b)] = s;
            z[(b, a)] = s;
        }
    }
    Ok(z)
}

/// Scalar-CV shortcut for [`metric_tensor`].
pub fn metric_scalar(jacobian: &[f64], masses: &MassMatrix) -> Result<f64> {
    Ok(metric_tensor(&[jacobian], masses)?[(0, 0)])
}

/// Time derivative of a uniformly sampled series.
fn time_derivative(y: &[f64], dt: f64) -> Vec<f64> {
    let n = y.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (y[i + 1] - y[i - 1]) / (2.0 * dt);
    }
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt);
    d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * dt);
    d
}

fn check_series(n: usize, dt: f64) -> Result<()> {
    if n < MIN_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_FRAMES} frames for the time stencils, got {n}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("timestep must be positive, got {dt}")));
    }
    Ok(())
}

/// Per-frame force for a scalar CV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcfFrame {
    pub frame: usize,
    pub time: f64,
    pub xi: f64,
    pub z: f64,
    pub f: f64,
    /// One-sided stencil used.
    pub endpoint: bool,
}

/// Force series for a scalar CV. `xi[i]` and `z[i]` are sampled at
/// `t = i·dt`; the bias at frame i uses hills deposited before that time.
pub fn icf(xi: &[f64], z: &[f64], dt: f64, hills: &BiasHills) -> Result<Vec<IcfFrame>> {
    check_series(xi.len(), dt)?;
    if z.len() != xi.len() {
        return Err(Error::Dimension {
            expected: xi.len(),
            got: z.len(),
        });
    }
    for (i, &zi) in z.iter().enumerate() {
        if !(zi > 0.0 && zi.is_finite()) {
            return Err(Error::Singular(format!("metric tensor Z = {zi} at frame {i}")));
        }
    }
    let vel = time_derivative(xi, dt);
    let inner: Vec<f64> = vel.iter().zip(z).map(|(v, zi)| v / zi).collect();
    let outer = time_derivative(&inner, dt);
    let n = xi.len();
    Ok((0..n)
        .map(|i| {
            let t = i as f64 * dt;
            IcfFrame {
                frame: i,
                time: t,
                xi: xi[i],
                z: z[i],
                f: outer[i] - hills.bias_force(xi[i], t),
                endpoint: i == 0 || i == n - 1,
            }
        })
        .collect())
}

/// Multi-CV force series. `xi[i]` is the CV vector at frame i, `z[i]` its
/// metric tensor and `bias_force[i]` the bias force vector to subtract.
/// Returns one force vector per frame.
pub fn icf_multi(xi: &[Vec<f64>], z: &[DMatrix<f64>], dt: f64, bias_force: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = xi.len();
    check_series(n, dt)?;
    let m = xi[0].len();
    if z.len() != n || bias_force.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: z.len().min(bias_force.len()),
        });
    }
    for i in 0..n {
        if xi[i].len() != m || bias_force[i].len() != m || z[i].shape() != (m, m) {
            return Err(Error::Dimension {
                expected: m,
                got: xi[i].len(),
            });
        }
    }
    // per-component velocities
    let mut vel = vec![vec![0.0; m]; n];
    for a in 0..m {
        let series: Vec<f64> = xi.iter().map(|x| x[a]).collect();
        for (v, d) in vel.iter_mut().zip(time_derivative(&series, dt)) {
            v[a] = d;
        }
    }
    let mut inner = Vec::with_capacity(n);
    for (i, (zi, v)) in z.iter().zip(&vel).enumerate() {
        let sv = zi.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 0.0) {
            return Err(Error::Singular(format!("metric tensor is singular at frame {i}")));
        }
        let cond = smax / smin;
        if cond > CONDITION_WARNING {
            log::warn!("metric tensor condition number {cond:.3e} at frame {i}");
        }
        let sol = zi
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(v))
            .ok_or_else(|| Error::Singular(format!("metric tensor is singular at frame {i}")))?;
        inner.push(sol);
    }
    let mut out = vec![vec![0.0; m]; n];
    for a in 0..m {
        let series: Vec<f64> = inner.iter().map(|s| s[a]).collect();
        for (i, d) in time_derivative(&series, dt).into_iter().enumerate() {
            out[i][a] = d - bias_force[i][a];
        }
    }
    Ok(out)
}

pub const TRAJECTORY_MAGIC: &str = "# cvsurrogate-trajectory v1";

/// Frames sampled every `dt` ps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub cv: CvKind,
    pub sim_box: SimBox,
    pub dt: f64,
    /// Row-major frames × D.
    coords: Vec<f64>,
}

impl Trajectory {
    pub fn new(cv: CvKind, sim_box: SimBox, dt: f64, coords: Vec<f64>) -> Result<Self> {
        let d = cv.input_dim();
        if !coords.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                got: coords.len() % d,
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("timestep must be positive, got {dt}")));
        }
        if let Some(v) = coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory coordinate {v}")));
        }
        Ok(Trajectory { cv, sim_box, dt, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.cv.input_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let d = self.cv.input_dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{TRAJECTORY_MAGIC} dt={} D={} cv={} L={}\n",
            self.dt,
            self.cv.input_dim(),
            self.cv,
            self.sim_box.length()
        );
        for i in 0..self.len() {
            let row: Vec<String> = self.frame(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let rest = header
            .strip_prefix(TRAJECTORY_MAGIC)
            .ok_or_else(|| perr(1, format!("expected header starting with '{TRAJECTORY_MAGIC}'")))?;
        let (mut dt, mut dim, mut cv, mut len) = (None, None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| perr(1, format!("expected key=value, found '{field}'")))?;
            let bad = || perr(1, format!("bad value for {k}: '{v}'"));
            match k {
                "dt" => dt = Some(v.parse::<f64>().map_err(|_| bad())?),
                "D" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
                "cv" => cv = Some(v.parse::<CvKind>().map_err(|_| bad())?),
                "L" => len = Some(v.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(perr(1, format!("unknown header field '{k}'"))),
            }
        }
        let missing = |k: &str| perr(1, format!("header is missing '{k}='"));
        let dt = dt.ok_or_else(|| missing("dt"))?;
        let dim = dim.ok_or_else(|| missing("D"))?;
        let cv = cv.ok_or_else(|| missing("cv"))?;
        let sim_box = match len {
            Some(l) => SimBox::new(l).map_err(|e| perr(1, e.to_string()))?,
            None => SimBox::default(),
        };
        if dim != cv.input_dim() {
            return Err(perr(1, format!("D={dim} but cv {cv} reads {} coordinates", cv.input_dim())));
        }
        let mut coords = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = parse_fields(line).map_err(|m| perr(k + 2, m))?;
            if row.len() != dim {
                return Err(perr(k + 2, format!("expected {dim} columns, found {}", row.len())));
            }
            coords.extend(row);
        }
        Trajectory::new(cv, sim_box, dt, coords).map_err(|e| perr(1, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Evaluate ξ and Z with `cv` on every frame, then the force series.
pub fn run_pipeline(
    traj: &Trajectory,
    cv: &dyn CvFunction,
    masses: &MassMatrix,
    hills: &BiasHills,
) -> Result<Vec<IcfFrame>> {
    check_series(traj.len(), traj.dt)?;
    if cv.input_dim() != traj.cv.input_dim() {
        return Err(Error::Dimension {
            expected: traj.cv.input_dim(),
            got: cv.input_dim(),
        });
    }
    let mut xi = Vec::with_capacity(traj.len());
    let mut z = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let (v, j) = cv.value_and_jacobian(traj.frame(i))?;
        xi.push(v);
        z.push(metric_scalar(&j, masses)?);
    }
    icf(&xi, &z, traj.dt, hills)
}

/// Delimited ICF output with a commented header naming the mode and units.
pub fn icf_to_text(frames: &[IcfFrame], cv: CvKind, mode: &str) -> String {
    let (xu, zu) = match cv {
        CvKind::Distance => ("nm", "amu^-1"),
        CvKind::Coordination => ("count", "amu^-1 nm^-2"),
    };
    let mut s = format!(
        "# cvsurrogate-icf v1 cv={cv} mode={mode} time=ps xi={xu} Z={zu} f=kJ/mol/{xu}\n\
         frame,time,xi,Z,f,endpoint_flag\n"
    );
    for fr in frames {
        writeln!(s, "{},{},{},{},{},{}", fr.frame, fr.time, fr.xi, fr.z, fr.f, fr.endpoint as u8).unwrap();
    }
    s
}
