//! Agent model, coupling shapes, uncertainty realizations and the scenario
//! file format.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkTopology;
use crate::solver::eig::{is_positive_definite, spectral_norm};

const NORM_SLACK: f64 = 1e-9;
const RANGE_SLACK: f64 = 1e-12;

/// `x' = A(rho) x + B1 u + B2 w` with `A(rho) = sum_r rho^r A_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvPlant {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub a_coeffs: Vec<DMatrix<f64>>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub gamma: (f64, f64),
}

impl LpvPlant {
    pub fn new(
        a_coeffs: Vec<DMatrix<f64>>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        gamma: (f64, f64),
    ) -> Result<Self> {
        let first = a_coeffs
            .first()
            .ok_or_else(|| Error::Validation("plant needs at least one A coefficient".into()))?;
        let n = first.nrows();
        if n == 0 {
            return Err(Error::Validation("state dimension must be positive".into()));
        }
        for (r, a) in a_coeffs.iter().enumerate() {
            if a.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!("A_{r} is {:?}, expected {n}x{n}", a.shape())));
            }
        }
        if b1.nrows() != n || b1.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!("B1 is {:?}, expected {n}xp", b1.shape())));
        }
        if b2.nrows() != n || b2.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!("B2 is {:?}, expected {n}xm", b2.shape())));
        }
        if !(gamma.0.is_finite() && gamma.1.is_finite() && gamma.0 <= gamma.1) {
            return Err(Error::Validation(format!("parameter interval [{}, {}] is empty", gamma.0, gamma.1)));
        }
        let all_finite = a_coeffs.iter().chain([&b1, &b2]).all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::Validation("plant matrices must be finite".into()));
        }
        Ok(Self {
            n,
            p: b1.ncols(),
            m: b2.ncols(),
            a_coeffs,
            b1,
            b2,
            gamma,
        })
    }

    /// `A(rho)` by Horner's rule.
    pub fn eval_a(&self, rho: f64) -> DMatrix<f64> {
        let mut acc = self.a_coeffs.last().unwrap().clone();
        for a in self.a_coeffs.iter().rev().skip(1) {
            acc *= rho;
            acc += a;
        }
        acc
    }

    /// Highest power of `rho` with a nonzero coefficient.
    pub fn degree(&self) -> usize {
        self.a_coeffs.iter().rposition(|a| a.amax() > 0.0).unwrap_or(0)
    }

    pub fn contains(&self, rho: f64) -> bool {
        rho >= self.gamma.0 - RANGE_SLACK && rho <= self.gamma.1 + RANGE_SLACK
    }
}

/// `C_ij` for every coupling edge `(j, i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingShape {
    pub c: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl CouplingShape {
    /// Coupling matrix of edge `(from, to)`.
    pub fn get(&self, from: usize, to: usize) -> Result<&DMatrix<f64>> {
        self.c
            .get(&(from, to))
            .ok_or_else(|| Error::ShapeMismatch(format!("no coupling matrix for edge ({from}, {to})")))
    }

    pub fn rows(&self, from: usize, to: usize) -> usize {
        self.c.get(&(from, to)).map_or(0, |c| c.nrows())
    }

    fn check(&self, topology: &NetworkTopology, n: usize) -> Result<()> {
        for edge in &topology.coupling_edges {
            let c = self
                .c
                .get(edge)
                .ok_or_else(|| Error::Validation(format!("coupling edge {edge:?} has no C matrix")))?;
            if c.ncols() != n || c.nrows() == 0 {
                return Err(Error::Validation(format!("C for edge {edge:?} is {:?}, expected q x {n}", c.shape())));
            }
        }
        if let Some(extra) = self.c.keys().find(|k| !topology.coupling_edges.contains(k)) {
            return Err(Error::Validation(format!("C given for {extra:?}, which is not a coupling edge")));
        }
        Ok(())
    }
}

/// `Delta * C * z`.
pub fn coupling_force(delta: &DMatrix<f64>, c: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    if delta.ncols() != c.nrows() || c.ncols() != z.len() {
        return Err(Error::ShapeMismatch(format!(
            "Delta {:?}, C {:?}, z {}",
            delta.shape(),
            c.shape(),
            z.len()
        )));
    }
    Ok(delta * (c * z))
}

/// Time profile of one uncertainty block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaSpec {
    Zero,
    /// A fixed `m x q` matrix.
    Constant { matrix: Vec<Vec<f64>> },
    /// `value` on the leading diagonal of an `m x q` matrix.
    Scalar { value: f64 },
    /// `amplitude * sin(frequency t + phase) * shape`; `shape` defaults to
    /// the leading-diagonal pattern.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape: Option<Vec<Vec<f64>>>,
    },
}

fn diag_pattern(m: usize, q: usize, value: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, q, |r, c| if r == c { value } else { 0.0 })
}

impl DeltaSpec {
    pub fn constant(matrix: &DMatrix<f64>) -> Result<Self> {
        let s = Self::Constant {
            matrix: to_rows(matrix),
        };
        s.check_bound()?;
        Ok(s)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        let s = Self::Scalar { value };
        s.check_bound()?;
        Ok(s)
    }

    pub fn sinusoid(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        let s = Self::Sinusoid {
            amplitude,
            frequency,
            phase,
            shape: None,
        };
        s.check_bound()?;
        Ok(s)
    }

    /// Worst-case spectral norm over time.
    pub fn norm_bound(&self) -> Result<f64> {
        Ok(match self {
            Self::Zero => 0.0,
            Self::Constant { matrix } => spectral_norm(&from_rows(matrix, "Delta")?),
            Self::Scalar { value } => value.abs(),
            Self::Sinusoid { amplitude, shape, .. } => {
                let s = match shape {
                    Some(rows) => spectral_norm(&from_rows(rows, "Delta shape")?),
                    None => 1.0,
                };
                amplitude.abs() * s
            }
        })
    }

    pub fn check_bound(&self) -> Result<()> {
        let b = self.norm_bound()?;
        if !b.is_finite() || b > 1.0 + NORM_SLACK {
            return Err(Error::Validation(format!("uncertainty norm {b} exceeds 1")));
        }
        Ok(())
    }

    /// `Delta(t)` as an `m x q` matrix.
    pub fn eval(&self, t: f64, m: usize, q: usize) -> Result<DMatrix<f64>> {
        let shaped = |rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            let d = from_rows(rows, "Delta")?;
            if d.shape() != (m, q) {
                return Err(Error::ShapeMismatch(format!("Delta is {:?}, expected {m}x{q}", d.shape())));
            }
            Ok(d)
        };
        Ok(match self {
            Self::Zero => DMatrix::zeros(m, q),
            Self::Constant { matrix } => shaped(matrix)?,
            Self::Scalar { value } => diag_pattern(m, q, *value),
            Self::Sinusoid {
                amplitude,
                frequency,
                phase,
                shape,
            } => {
                let s = amplitude * (frequency * t + phase).sin();
                match shape {
                    Some(rows) => shaped(rows)? * s,
                    None => diag_pattern(m, q, s),
                }
            }
        })
    }
}

/// One admissible choice of `Delta_ij(t)` for every coupling edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRealization {
    pub name: String,
    pub default: DeltaSpec,
    /// Per-edge overrides keyed by `(from, to)`.
    #[serde(default, with = "edge_map")]
    pub per_edge: BTreeMap<(usize, usize), DeltaSpec>,
}

impl UncertaintyRealization {
    /// Same profile on every edge.
    pub fn uniform(name: impl Into<String>, spec: DeltaSpec) -> Result<Self> {
        spec.check_bound()?;
        Ok(Self {
            name: name.into(),
            default: spec,
            per_edge: BTreeMap::new(),
        })
    }

    pub fn with_edge(mut self, from: usize, to: usize, spec: DeltaSpec) -> Result<Self> {
        spec.check_bound()?;
        self.per_edge.insert((from, to), spec);
        Ok(self)
    }

    pub fn spec(&self, from: usize, to: usize) -> &DeltaSpec {
        self.per_edge.get(&(from, to)).unwrap_or(&self.default)
    }

    pub fn delta(&self, from: usize, to: usize, t: f64, m: usize, q: usize) -> Result<DMatrix<f64>> {
        self.spec(from, to).eval(t, m, q)
    }

    /// Check every block against the norm bound and the scenario's shapes.
    pub fn check_for(&self, scenario: &Scenario) -> Result<()> {
        for &(j, i) in &scenario.topology.coupling_edges {
            let spec = self.spec(j, i);
            spec.check_bound()?;
            spec.eval(0.0, scenario.plant.m, scenario.couplings.rows(j, i))?;
        }
        Ok(())
    }

    pub fn nominal() -> Self {
        Self::uniform("nominal", DeltaSpec::Scalar { value: 1.0 }).unwrap()
    }

    pub fn zero() -> Self {
        Self::uniform("zero", DeltaSpec::Zero).unwrap()
    }

    /// Named families: `nominal`, `zero`, `sweep` (five profiles including
    /// both constants and two sinusoids) and `random` (seeded per-edge
    /// sinusoids and constants).
    pub fn named_set(name: &str, seed: u64, scenario: &Scenario) -> Result<Vec<Self>> {
        match name {
            "nominal" => Ok(vec![Self::nominal()]),
            "zero" => Ok(vec![Self::zero()]),
            "sweep" => Ok(vec![
                Self::nominal(),
                Self::zero(),
                Self::uniform("negative", DeltaSpec::scalar(-1.0)?)?,
                Self::uniform("sin_t", DeltaSpec::sinusoid(1.0, 1.0, 0.0)?)?,
                Self::uniform("cos_t", DeltaSpec::sinusoid(1.0, 1.0, FRAC_PI_2)?)?,
            ]),
            "random" => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..5)
                    .map(|k| {
                        let mut r = Self::uniform(format!("random_{k}"), DeltaSpec::Zero)?;
                        for &(j, i) in &scenario.topology.coupling_edges {
                            let spec = if rng.gen_bool(0.5) {
                                DeltaSpec::scalar(rng.gen_range(-1.0..=1.0))?
                            } else {
                                DeltaSpec::sinusoid(
                                    rng.gen_range(0.0..=1.0),
                                    rng.gen_range(0.1..=3.0),
                                    rng.gen_range(0.0..std::f64::consts::TAU),
                                )?
                            };
                            r = r.with_edge(j, i, spec)?;
                        }
                        Ok(r)
                    })
                    .collect()
            }
            other => Err(Error::Validation(format!(
                "unknown uncertainty set '{other}' (expected nominal, zero, sweep or random)"
            ))),
        }
    }
}

mod edge_map {
    use super::DeltaSpec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        from: usize,
        to: usize,
        delta: DeltaSpec,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<(usize, usize), DeltaSpec>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = map
            .iter()
            .map(|(&(from, to), d)| Entry {
                from,
                to,
                delta: d.clone(),
            })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), DeltaSpec>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.from, e.to), e.delta)).collect())
    }
}

/// Scheduling parameter trajectory `rho(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RhoProfile {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * cos(frequency t + phase)`
    Cosine {
        amplitude: f64,
        frequency: f64,
        offset: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl RhoProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Cosine {
                amplitude,
                frequency,
                offset,
                phase,
            } => offset + amplitude * (frequency * t + phase).cos(),
        }
    }

    /// `sup_t |rho'(t)|`, analytic.
    pub fn rate_sup(&self) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Cosine {
                amplitude, frequency, ..
            } => (amplitude * frequency).abs(),
        }
    }
}

/// A complete experiment: plant, network, weights, parameter profile and
/// initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: LpvPlant,
    pub topology: NetworkTopology,
    pub couplings: CouplingShape,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rho_profile: RhoProfile,
    /// Initial states of nodes `0..=N`.
    pub x0: Vec<DVector<f64>>,
    pub horizon: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn n_followers(&self) -> usize {
        self.topology.n_followers
    }

    /// Number of RK4 steps; `dt` must divide the horizon.
    pub fn steps(&self) -> Result<usize> {
        steps_for(self.horizon, self.dt)
    }

    /// Every invariant the loader enforces.
    pub fn validate(&self) -> Result<()> {
        let n = self.plant.n;
        let report = self.topology.validate();
        if !report.pass() {
            return Err(Error::Validation(report.to_string().trim_end().to_string()));
        }
        self.couplings.check(&self.topology, n)?;
        check_spd(&self.q, n, "Q")?;
        check_spd(&self.r, self.plant.p, "R")?;
        if self.x0.len() != self.n_followers() + 1 {
            return Err(Error::Validation(format!(
                "{} initial states given, expected {}",
                self.x0.len(),
                self.n_followers() + 1
            )));
        }
        for (i, x) in self.x0.iter().enumerate() {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("initial state of node {i} must be {n} finite numbers")));
            }
        }
        let steps = self.steps()?;
        for k in 0..=2 * steps {
            let t = 0.5 * k as f64 * self.dt;
            let rho = self.rho_profile.eval(t);
            if !self.plant.contains(rho) {
                return Err(Error::Validation(format!(
                    "rho({t}) = {rho} leaves [{}, {}]",
                    self.plant.gamma.0, self.plant.gamma.1
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(parse_error)?;
        let s = file.into_scenario()?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from_scenario(self)).expect("scenario serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite()) {
        return Err(Error::Validation(format!("need T > 0 and dt > 0 (T = {horizon}, dt = {dt})")));
    }
    let ratio = horizon / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
        return Err(Error::Validation(format!("dt = {dt} does not divide T = {horizon}")));
    }
    Ok(steps as usize)
}

fn check_spd(m: &DMatrix<f64>, dim: usize, name: &str) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::Validation(format!("{name} is {:?}, expected {dim}x{dim}", m.shape())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) || !is_positive_definite(m) {
        return Err(Error::Validation(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 {
        return Err(Error::Validation(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Validation(format!("{name} has ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    n: usize,
    p: usize,
    m: usize,
    #[serde(rename = "A_coeffs")]
    a_coeffs: Vec<Rows>,
    #[serde(rename = "B1")]
    b1: Rows,
    #[serde(rename = "B2")]
    b2: Rows,
    gamma: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Flag {
    Bool(bool),
    Int(u8),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    #[serde(rename = "N")]
    n: usize,
    coupling_edges: Vec<[usize; 2]>,
    comm_edges: Vec<[usize; 2]>,
    pinned: Vec<Flag>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingFile {
    from: usize,
    to: usize,
    #[serde(rename = "C")]
    c: Rows,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    #[serde(rename = "Q")]
    q: Option<Rows>,
    #[serde(rename = "R")]
    r: Option<Rows>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitFile {
    node: usize,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    #[serde(rename = "T")]
    t: f64,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    plant: PlantFile,
    topology: TopologyFile,
    couplings: Vec<CouplingFile>,
    weights: WeightsFile,
    rho_profile: RhoProfile,
    init: Vec<InitFile>,
    sim: SimFile,
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let pf = self.plant;
        let a_coeffs = pf
            .a_coeffs
            .iter()
            .enumerate()
            .map(|(r, a)| from_rows(a, &format!("A_{r}")))
            .collect::<Result<Vec<_>>>()?;
        let plant = LpvPlant::new(
            a_coeffs,
            from_rows(&pf.b1, "B1")?,
            from_rows(&pf.b2, "B2")?,
            (pf.gamma[0], pf.gamma[1]),
        )?;
        if (plant.n, plant.p, plant.m) != (pf.n, pf.p, pf.m) {
            return Err(Error::Validation(format!(
                "declared dimensions (n, p, m) = ({}, {}, {}) disagree with matrices ({}, {}, {})",
                pf.n, pf.p, pf.m, plant.n, plant.p, plant.m
            )));
        }
        let tf = self.topology;
        let pinned = tf
            .pinned
            .iter()
            .map(|f| match *f {
                Flag::Bool(b) => Ok(b),
                Flag::Int(0) => Ok(false),
                Flag::Int(1) => Ok(true),
                Flag::Int(v) => Err(Error::Validation(format!("pinned entries must be 0 or 1, got {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let topology = NetworkTopology::from_edges(
            tf.n,
            tf.coupling_edges.iter().map(|e| (e[0], e[1])),
            tf.comm_edges.iter().map(|e| (e[0], e[1])),
            pinned,
        )?;
        let mut couplings = CouplingShape::default();
        for c in &self.couplings {
            let m = from_rows(&c.c, &format!("C for edge ({}, {})", c.from, c.to))?;
            if couplings.c.insert((c.from, c.to), m).is_some() {
                return Err(Error::Validation(format!("edge ({}, {}) has two C matrices", c.from, c.to)));
            }
        }
        let q = self
            .weights
            .q
            .ok_or_else(|| Error::Validation("weights.Q is missing".into()))?;
        let r = self
            .weights
            .r
            .ok_or_else(|| Error::Validation("weights.R is missing".into()))?;
        let mut x0 = vec![None; topology.n_followers + 1];
        for init in self.init {
            let slot = x0.get_mut(init.node).ok_or(Error::UnknownNode(init.node))?;
            if slot.replace(DVector::from_vec(init.x)).is_some() {
                return Err(Error::Validation(format!("node {} has two initial states", init.node)));
            }
        }
        let x0 = x0
            .into_iter()
            .enumerate()
            .map(|(i, x)| x.ok_or_else(|| Error::Validation(format!("node {i} has no initial state"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            plant,
            topology,
            couplings,
            q: from_rows(&q, "Q")?,
            r: from_rows(&r, "R")?,
            rho_profile: self.rho_profile,
            x0,
            horizon: self.sim.t,
            dt: self.sim.dt,
        })
    }

    fn from_scenario(s: &Scenario) -> Self {
        let p = &s.plant;
        let t = &s.topology;
        Self {
            plant: PlantFile {
                n: p.n,
                p: p.p,
                m: p.m,
                a_coeffs: p.a_coeffs.iter().map(to_rows).collect(),
                b1: to_rows(&p.b1),
                b2: to_rows(&p.b2),
                gamma: [p.gamma.0, p.gamma.1],
            },
            topology: TopologyFile {
                n: t.n_followers,
                coupling_edges: t.coupling_edges.iter().map(|&(j, i)| [j, i]).collect(),
                comm_edges: t.comm_edges.iter().map(|&(j, i)| [j, i]).collect(),
                pinned: t.pinned.iter().map(|&g| Flag::Int(g as u8)).collect(),
            },
            couplings: s
                .couplings
                .c
                .iter()
                .map(|(&(from, to), c)| CouplingFile { from, to, c: to_rows(c) })
                .collect(),
            weights: WeightsFile {
                q: Some(to_rows(&s.q)),
                r: Some(to_rows(&s.r)),
            },
            rho_profile: s.rho_profile,
            init: s
                .x0
                .iter()
                .enumerate()
                .map(|(node, x)| InitFile {
                    node,
                    x: x.iter().copied().collect(),
                })
                .collect(),
            sim: SimFile { t: s.horizon, dt: s.dt },
        }
    }
}

/// Leader and follower displacements at `t = 0` for the 21-mass chain.
pub const MASS_SPRING_INITIAL: [(f64, f64); 21] = [
    (0.5, 0.0),
    (0.45, 0.0),
    (0.4, 0.0),
    (0.3, 0.0),
    (0.2, 0.0),
    (0.15, 0.0),
    (0.25, 0.0),
    (0.35, 0.0),
    (0.45, 0.0),
    (0.55, 0.0),
    (0.65, 0.0),
    (0.55, 0.0),
    (0.45, 0.0),
    (0.35, 0.0),
    (0.45, 0.0),
    (0.5, 0.0),
    (0.4, 0.0),
    (0.3, 0.1),
    (0.2, 0.2),
    (0.1, 0.3),
    (0.0, 0.4),
];

/// Followers that observe the leader in the mass-spring example.
pub const MASS_SPRING_PINNED: [usize; 4] = [1, 8, 12, 15];

/// Ring of 21 masses (leader is mass 0) joined by identical spring-damper
/// links, with a parameter-dependent ground spring `2.4 - 1.4 rho`.
/// Followers talk along the chain `1 -> 2 -> ... -> 20`.
pub fn build_mass_spring_example() -> Scenario {
    let n_f = 20;
    let mass = 3.0;
    let (k_link, c_link) = (0.1, 0.1);
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.4 / mass, 0.0]);
    let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.4 / mass, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / mass]);
    let plant = LpvPlant::new(vec![a0, a1], b.clone(), b, (-1.0, 1.0)).unwrap();

    let mut coupling = Vec::new();
    for i in 0..=n_f {
        let next = (i + 1) % (n_f + 1);
        coupling.push((i, next));
        coupling.push((next, i));
    }
    let comm = (1..n_f).map(|i| (i, i + 1));
    let mut pinned = vec![false; n_f];
    for &p in &MASS_SPRING_PINNED {
        pinned[p - 1] = true;
    }
    let topology = NetworkTopology::from_edges(n_f, coupling, comm, pinned).unwrap();
    let c = DMatrix::from_row_slice(1, 2, &[k_link, c_link]);
    let couplings = CouplingShape {
        c: topology.coupling_edges.iter().map(|&e| (e, c.clone())).collect(),
    };
    Scenario {
        plant,
        topology,
        couplings,
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 100.0])),
        r: DMatrix::from_element(1, 1, 0.001),
        rho_profile: RhoProfile::Cosine {
            amplitude: 1.0,
            frequency: 1.0,
            offset: 0.0,
            phase: 0.0,
        },
        x0: MASS_SPRING_INITIAL
            .iter()
            .map(|&(a, v)| DVector::from_vec(vec![a, v]))
            .collect(),
        horizon: 12.0,
        dt: 1e-3,
    }
}
