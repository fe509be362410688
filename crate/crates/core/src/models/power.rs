//! AC measurement model of a transmission grid in polar coordinates.
//!
//! The state stacks all bus voltage magnitudes followed by the angles of
//! every bus except the slack, whose angle is pinned to zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::MeasurementModel;

const IEEE14: &str = include_str!("../../data/ieee14.toml");

/// One measured quantity. Buses are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    VMag(usize),
    VAngle(usize),
    PInj(usize),
    QInj(usize),
    PFlow(usize, usize),
    QFlow(usize, usize),
}

impl Quantity {
    pub fn is_flow(&self) -> bool {
        matches!(self, Quantity::PFlow(..) | Quantity::QFlow(..))
    }

    /// Same flow seen from the other end.
    pub fn reversed(&self) -> Option<Quantity> {
        match *self {
            Quantity::PFlow(i, j) => Some(Quantity::PFlow(j, i)),
            Quantity::QFlow(i, j) => Some(Quantity::QFlow(j, i)),
            _ => None,
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed measurement '{s}'"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let bus = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let pair = |t: &str| -> Result<(usize, usize)> {
            let (a, b) = t.split_once('-').ok_or_else(bad)?;
            Ok((bus(a)?, bus(b)?))
        };
        Ok(match kind.trim() {
            "vm" => Quantity::VMag(bus(rest)?),
            "va" => Quantity::VAngle(bus(rest)?),
            "p" => Quantity::PInj(bus(rest)?),
            "q" => Quantity::QInj(bus(rest)?),
            "pf" => {
                let (i, j) = pair(rest)?;
                Quantity::PFlow(i, j)
            }
            "qf" => {
                let (i, j) = pair(rest)?;
                Quantity::QFlow(i, j)
            }
            _ => return Err(bad()),
        })
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::VMag(i) => write!(f, "vm:{i}"),
            Quantity::VAngle(i) => write!(f, "va:{i}"),
            Quantity::PInj(i) => write!(f, "p:{i}"),
            Quantity::QInj(i) => write!(f, "q:{i}"),
            Quantity::PFlow(i, j) => write!(f, "pf:{i}-{j}"),
            Quantity::QFlow(i, j) => write!(f, "qf:{i}-{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_half: f64,
}

impl Branch {
    /// Series admittance `g + j b` of `1 / (r + j x)`.
    pub fn series(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }
}

#[derive(Deserialize)]
struct RawBus {
    id: usize,
    vm: f64,
    va_deg: f64,
}

#[derive(Deserialize)]
struct RawShunt {
    bus: usize,
    g: f64,
    b: f64,
}

#[derive(Deserialize)]
struct RawSelection {
    quantities: Vec<String>,
}

#[derive(Deserialize)]
struct RawGrid {
    slack: usize,
    buses: Vec<RawBus>,
    branches: Vec<Branch>,
    #[serde(default)]
    shunts: Vec<RawShunt>,
    #[serde(default)]
    selections: BTreeMap<String, RawSelection>,
}

/// Network admittances plus the named measurement selections.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerGrid {
    pub n_bus: usize,
    /// 1-based slack bus.
    pub slack: usize,
    /// Bus conductance matrix.
    pub g: DMatrix<f64>,
    /// Bus susceptance matrix.
    pub b: DMatrix<f64>,
    /// Per-bus shunt `(g, b)`.
    pub shunts: Vec<(f64, f64)>,
    pub branches: Vec<Branch>,
    /// Operating point used as the initial state.
    pub initial_state: DVector<f64>,
    pub selections: BTreeMap<String, Vec<Quantity>>,
}

impl PowerGrid {
    pub fn ieee14() -> Self {
        Self::from_toml(IEEE14).expect("embedded IEEE 14-bus data is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawGrid =
            toml::from_str(text).map_err(|e| Error::Config(format!("grid data: {e}")))?;
        let n = raw.buses.len();
        if n < 2 {
            return Err(Error::Config("grid needs at least two buses".into()));
        }
        let in_range = |i: usize| i >= 1 && i <= n;
        if !in_range(raw.slack) {
            return Err(Error::Config(format!(
                "slack bus {} outside 1..={n}",
                raw.slack
            )));
        }
        let mut vm = vec![f64::NAN; n];
        let mut va = vec![f64::NAN; n];
        for bus in &raw.buses {
            if !in_range(bus.id) || !vm[bus.id - 1].is_nan() {
                return Err(Error::Config(format!(
                    "bus id {} invalid or repeated",
                    bus.id
                )));
            }
            vm[bus.id - 1] = bus.vm;
            va[bus.id - 1] = bus.va_deg.to_radians();
        }

        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in &raw.branches {
            if !in_range(br.from) || !in_range(br.to) || br.from == br.to {
                return Err(Error::Config(format!(
                    "branch {}-{} invalid",
                    br.from, br.to
                )));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::Config(format!(
                    "branch {}-{} has zero impedance",
                    br.from, br.to
                )));
            }
            let (gs, bs) = br.series();
            let (i, j) = (br.from - 1, br.to - 1);
            g[(i, i)] += gs;
            g[(j, j)] += gs;
            b[(i, i)] += bs + br.b_half;
            b[(j, j)] += bs + br.b_half;
            g[(i, j)] -= gs;
            g[(j, i)] -= gs;
            b[(i, j)] -= bs;
            b[(j, i)] -= bs;
        }
        let mut shunts = vec![(0.0, 0.0); n];
        for s in &raw.shunts {
            if !in_range(s.bus) {
                return Err(Error::Config(format!("shunt at invalid bus {}", s.bus)));
            }
            shunts[s.bus - 1].0 += s.g;
            shunts[s.bus - 1].1 += s.b;
            g[(s.bus - 1, s.bus - 1)] += s.g;
            b[(s.bus - 1, s.bus - 1)] += s.b;
        }

        let mut initial_state = DVector::zeros(2 * n - 1);
        for i in 0..n {
            initial_state[i] = vm[i];
        }
        let mut grid = Self {
            n_bus: n,
            slack: raw.slack,
            g,
            b,
            shunts,
            branches: raw.branches,
            initial_state,
            selections: BTreeMap::new(),
        };
        for i in 0..n {
            if let Some(k) = grid.angle_index(i + 1) {
                grid.initial_state[k] = va[i] - va[raw.slack - 1];
            }
        }
        for (name, sel) in raw.selections {
            let list = sel
                .quantities
                .iter()
                .map(|s| s.parse::<Quantity>())
                .collect::<Result<Vec<_>>>()?;
            grid.check_selection(&list)?;
            grid.selections.insert(name, list);
        }
        Ok(grid)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_bus - 1
    }

    /// State index of the angle of 1-based `bus`; `None` for the slack.
    pub fn angle_index(&self, bus: usize) -> Option<usize> {
        match bus.cmp(&self.slack) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.n_bus + bus - 1),
            std::cmp::Ordering::Greater => Some(self.n_bus + bus - 2),
        }
    }

    pub fn magnitude_indices(&self) -> Vec<usize> {
        (0..self.n_bus).collect()
    }

    pub fn angle_indices(&self) -> Vec<usize> {
        (self.n_bus..self.state_dim()).collect()
    }

    pub fn find_branch(&self, i: usize, j: usize) -> Option<&Branch> {
        self.branches
            .iter()
            .find(|b| (b.from == i && b.to == j) || (b.from == j && b.to == i))
    }

    pub fn check_selection(&self, sel: &[Quantity]) -> Result<()> {
        let bus_ok = |i: usize| i >= 1 && i <= self.n_bus;
        for q in sel {
            let ok = match *q {
                Quantity::VMag(i) | Quantity::VAngle(i) | Quantity::PInj(i) | Quantity::QInj(i) => {
                    bus_ok(i)
                }
                Quantity::PFlow(i, j) | Quantity::QFlow(i, j) => self.find_branch(i, j).is_some(),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "measurement {q} references no such bus or branch"
                )));
            }
        }
        Ok(())
    }

    /// Named selection extended to `m` entries. The base list is followed
    /// by the reverse direction of each of its flows, and that extended
    /// list repeats until the length reaches `m`. `None` returns the base list.
    pub fn selection(&self, name: &str, m: Option<usize>) -> Result<Vec<Quantity>> {
        let base = self
            .selections
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown measurement selection '{name}'")))?;
        Ok(match m {
            None => base.clone(),
            Some(m) => pad_selection(base, m),
        })
    }

    fn vm(&self, x: &DVector<f64>, bus: usize) -> f64 {
        x[bus - 1]
    }

    fn va(&self, x: &DVector<f64>, bus: usize) -> f64 {
        self.angle_index(bus).map_or(0.0, |k| x[k])
    }

    /// Series `(g, b)` and sending-end shunt susceptance of the line as seen from `i`.
    fn line(&self, i: usize, j: usize) -> (f64, f64, f64) {
        let br = self.find_branch(i, j).expect("selection validated");
        let (g, b) = br.series();
        (g, b, br.b_half)
    }
}

/// See [`PowerGrid::selection`].
pub fn pad_selection(base: &[Quantity], m: usize) -> Vec<Quantity> {
    let mut cycle: Vec<Quantity> = base.to_vec();
    cycle.extend(base.iter().filter_map(Quantity::reversed));
    if cycle.is_empty() {
        return Vec::new();
    }
    if m <= base.len() {
        return base[..m].to_vec();
    }
    cycle.iter().cycle().take(m).copied().collect()
}

/// Value of every selected quantity at state `x`.
pub fn power_measurement(
    x: &DVector<f64>,
    grid: &PowerGrid,
    sel: &[Quantity],
) -> Result<DVector<f64>> {
    if x.len() != grid.state_dim() {
        return Err(Error::Dimension(format!(
            "state length {} vs {}",
            x.len(),
            grid.state_dim()
        )));
    }
    grid.check_selection(sel)?;
    Ok(measure_unchecked(x, grid, sel))
}

fn measure_unchecked(x: &DVector<f64>, grid: &PowerGrid, sel: &[Quantity]) -> DVector<f64> {
    DVector::from_iterator(sel.len(), sel.iter().map(|q| evaluate(x, grid, *q)))
}

fn injection(x: &DVector<f64>, grid: &PowerGrid, i: usize) -> (f64, f64) {
    let vi = grid.vm(x, i);
    let ti = grid.va(x, i);
    let (mut p, mut q) = (0.0, 0.0);
    for j in 1..=grid.n_bus {
        let (gij, bij) = (grid.g[(i - 1, j - 1)], grid.b[(i - 1, j - 1)]);
        if gij == 0.0 && bij == 0.0 {
            continue;
        }
        let vj = grid.vm(x, j);
        let (s, c) = (ti - grid.va(x, j)).sin_cos();
        p += vj * (gij * c + bij * s);
        q += vj * (gij * s - bij * c);
    }
    (vi * p, vi * q)
}

fn evaluate(x: &DVector<f64>, grid: &PowerGrid, q: Quantity) -> f64 {
    match q {
        Quantity::VMag(i) => grid.vm(x, i),
        Quantity::VAngle(i) => grid.va(x, i),
        Quantity::PInj(i) => injection(x, grid, i).0,
        Quantity::QInj(i) => injection(x, grid, i).1,
        Quantity::PFlow(i, j) | Quantity::QFlow(i, j) => {
            let (g, b, bsh) = grid.line(i, j);
            let (vi, vj) = (grid.vm(x, i), grid.vm(x, j));
            let (s, c) = (grid.va(x, i) - grid.va(x, j)).sin_cos();
            if matches!(q, Quantity::PFlow(..)) {
                vi * vi * g - vi * vj * (g * c + b * s)
            } else {
                -vi * vi * (bsh + b) - vi * vj * (g * s - b * c)
            }
        }
    }
}

/// Analytic Jacobian of [`power_measurement`] with respect to the state.
pub fn power_jacobian(
    x: &DVector<f64>,
    grid: &PowerGrid,
    sel: &[Quantity],
) -> Result<DMatrix<f64>> {
    if x.len() != grid.state_dim() {
        return Err(Error::Dimension(format!(
            "state length {} vs {}",
            x.len(),
            grid.state_dim()
        )));
    }
    grid.check_selection(sel)?;
    Ok(jacobian_unchecked(x, grid, sel))
}

fn jacobian_unchecked(x: &DVector<f64>, grid: &PowerGrid, sel: &[Quantity]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(sel.len(), grid.state_dim());
    for (row, q) in sel.iter().enumerate() {
        // Partials are accumulated per bus as (d/dV, d/dtheta), then scattered.
        let mut put = |bus: usize, dv: f64, dt: f64| {
            h[(row, bus - 1)] += dv;
            if let Some(k) = grid.angle_index(bus) {
                h[(row, k)] += dt;
            }
        };
        match *q {
            Quantity::VMag(i) => put(i, 1.0, 0.0),
            Quantity::VAngle(i) => put(i, 0.0, 1.0),
            Quantity::PInj(i) | Quantity::QInj(i) => {
                let real = matches!(q, Quantity::PInj(_));
                let (p, qi) = injection(x, grid, i);
                let vi = grid.vm(x, i);
                let ti = grid.va(x, i);
                let (gii, bii) = (grid.g[(i - 1, i - 1)], grid.b[(i - 1, i - 1)]);
                for j in 1..=grid.n_bus {
                    if j == i {
                        continue;
                    }
                    let (gij, bij) = (grid.g[(i - 1, j - 1)], grid.b[(i - 1, j - 1)]);
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    let vj = grid.vm(x, j);
                    let (s, c) = (ti - grid.va(x, j)).sin_cos();
                    if real {
                        put(j, vi * (gij * c + bij * s), vi * vj * (gij * s - bij * c));
                    } else {
                        put(j, vi * (gij * s - bij * c), -vi * vj * (gij * c + bij * s));
                    }
                }
                if real {
                    put(i, p / vi + gii * vi, -qi - bii * vi * vi);
                } else {
                    put(i, qi / vi - bii * vi, p - gii * vi * vi);
                }
            }
            Quantity::PFlow(i, j) | Quantity::QFlow(i, j) => {
                let (g, b, bsh) = grid.line(i, j);
                let (vi, vj) = (grid.vm(x, i), grid.vm(x, j));
                let (s, c) = (grid.va(x, i) - grid.va(x, j)).sin_cos();
                let gc_bs = g * c + b * s;
                let gs_bc = g * s - b * c;
                if matches!(q, Quantity::PFlow(..)) {
                    put(i, 2.0 * vi * g - vj * gc_bs, vi * vj * gs_bc);
                    put(j, -vi * gc_bs, -vi * vj * gs_bc);
                } else {
                    put(i, -2.0 * vi * (bsh + b) - vj * gs_bc, -vi * vj * gc_bs);
                    put(j, -vi * gs_bc, vi * vj * gc_bs);
                }
            }
        }
    }
    h
}

/// Measurement model for one sensor node.
#[derive(Debug, Clone)]
pub struct PowerMeasurement {
    pub grid: Arc<PowerGrid>,
    pub selection: Vec<Quantity>,
    pub noise: DMatrix<f64>,
}

impl PowerMeasurement {
    pub fn new(
        grid: Arc<PowerGrid>,
        selection: Vec<Quantity>,
        noise: DMatrix<f64>,
    ) -> Result<Self> {
        grid.check_selection(&selection)?;
        let m = selection.len();
        if noise.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "noise {:?} for {m} measurements",
                noise.shape()
            )));
        }
        Ok(Self {
            grid,
            selection,
            noise,
        })
    }
}

impl MeasurementModel for PowerMeasurement {
    fn measurement_dim(&self) -> usize {
        self.selection.len()
    }

    fn measure(&self, u: &DVector<f64>) -> DVector<f64> {
        measure_unchecked(u, &self.grid, &self.selection)
    }

    fn measurement_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        jacobian_unchecked(u, &self.grid, &self.selection)
    }

    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.noise
    }
}
