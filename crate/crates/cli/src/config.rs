//! Experiment documents: TOML files describing a problem, an algorithm,
//! solver parameters, schedules and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sifb::operators::{CocoerciveMap, Descriptor, MonotoneBlock, ProxFunction};
use sifb::primal_dual::{PrimalDualParts, PrimalDualProblem};
use sifb::problems::{
    build_coupled_system, build_lasso, build_parallel_sum_instance, DemoProblem, LassoDualForm,
};
use sifb::sifb::SolverConfig;
use sifb::spaces::{BlockLinearOperator, BlockVector, Preconditioner};
use sifb::stochastic::{replica_seeds, InertiaSchedule, NoiseSchedule, OracleMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub noise: NoiseSchedule,
    #[serde(default)]
    pub inertia: InertiaSchedule,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Sifb,
    PdClass1,
    PdClass2,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Sifb => "sifb",
            Algorithm::PdClass1 => "pd_class1",
            Algorithm::PdClass2 => "pd_class2",
        }
    }
}

/// Solver parameters; the inertia schedule lives at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub relaxation: f64,
    pub max_iter: usize,
    pub stop_tol: f64,
    pub record_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            epsilon: d.epsilon,
            gamma: d.gamma,
            relaxation: d.relaxation,
            max_iter: d.max_iter,
            stop_tol: d.stop_tol,
            record_every: d.record_every,
        }
    }
}

/// Explicit seeds, or `count` seeds derived from `master`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(#[serde(with = "seed_list")] Vec<u64>),
    Derived { master: u64, count: usize },
}

/// TOML integers are signed, so seeds above `i64::MAX` travel as decimal
/// strings.
mod seed_list {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| match i64::try_from(x) {
            Ok(i) => Repr::Int(i),
            Err(_) => Repr::Text(x.to_string()),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Int(i) => u64::try_from(i).map_err(|_| D::Error::custom(format!("negative seed {i}"))),
                Repr::Text(t) => t.parse().map_err(|_| D::Error::custom(format!("bad seed {t:?}"))),
            })
            .collect()
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Derived { master: 0, count: 1 }
    }
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Derived { master, count } => replica_seeds(*master, *count),
        }
    }

    pub fn master(&self) -> u64 {
        match self {
            Seeds::List(_) => 0,
            Seeds::Derived { master, .. } => *master,
        }
    }
}

fn d_lasso_n() -> usize {
    20
}
fn d_lasso_p() -> usize {
    30
}
fn d_lambda() -> f64 {
    0.1
}
fn d_cond() -> f64 {
    100.0
}
fn d_seed() -> u64 {
    1
}
fn d_blocks() -> usize {
    3
}
fn d_block_dim() -> usize {
    5
}
fn d_ps_n() -> usize {
    30
}
fn d_ps_p() -> usize {
    20
}
fn d_mu() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "demo", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Lasso {
        #[serde(default = "d_lasso_n")]
        n: usize,
        #[serde(default = "d_lasso_p")]
        p: usize,
        #[serde(default = "d_lambda")]
        lambda: f64,
        #[serde(default = "d_cond")]
        cond: f64,
        #[serde(default = "d_seed")]
        seed: u64,
        /// Splitting used by the primal-dual algorithms.
        #[serde(default)]
        form: LassoDualForm,
    },
    Coupled {
        #[serde(default = "d_blocks")]
        blocks: usize,
        #[serde(default = "d_block_dim")]
        block_dim: usize,
        #[serde(default = "d_seed")]
        seed: u64,
    },
    ParallelSum {
        #[serde(default = "d_ps_n")]
        n: usize,
        #[serde(default = "d_ps_p")]
        p: usize,
        #[serde(default = "d_mu")]
        mu: f64,
        #[serde(default = "d_lambda")]
        lambda: f64,
        #[serde(default = "d_seed")]
        seed: u64,
    },
    Custom(CustomProblem),
}

/// Matrix given inline as rows, or as a plain-text file of whitespace- or
/// comma-separated rows resolved against the config's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    File { file: PathBuf },
}

/// Full primal-dual problem: primal blocks with operators `A_i`, dual
/// blocks with operators `B_k`, a block coupling and optional smooth parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub primal: Vec<PrimalBlockSpec>,
    pub dual: Vec<DualBlockSpec>,
    #[serde(default)]
    pub coupling: Vec<CouplingEntry>,
    #[serde(default)]
    pub smooth: SmoothSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalBlockSpec {
    pub dim: usize,
    #[serde(default)]
    pub operator: OperatorSpec,
    /// Constant term `z_i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
    /// Scalar preconditioner of the block.
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualBlockSpec {
    pub dim: usize,
    #[serde(default)]
    pub operator: OperatorSpec,
    /// Constant term `r_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
    pub step: f64,
    /// `D_k^{-1} = d_inverse * Id`; zero drops the term.
    #[serde(default)]
    pub d_inverse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    /// Dual block index.
    pub row: usize,
    /// Primal block index.
    pub col: usize,
    pub matrix: MatrixSource,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    #[default]
    Zero,
    L1 {
        lambda: f64,
    },
    SqL2 {
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Box {
        lo: f64,
        hi: f64,
    },
    LinfBall {
        radius: f64,
    },
    Affine {
        c: Vec<f64>,
    },
    /// Linear monotone block `x -> M x`.
    Linear {
        matrix: MatrixSource,
    },
}

/// Smooth part `C` on the whole primal space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSpec {
    #[default]
    Zero,
    /// `x -> Q x + offset` with `Q` symmetric positive semidefinite.
    Affine {
        matrix: MatrixSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    /// Gradient of `1/2 |A x - b|^2`.
    LeastSquares { design: MatrixSource, target: Vec<f64> },
}

/// Parses a config document. Errors carry the file path and the parser's
/// line, column and key context.
pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("malformed config {}", path.display()))
}

pub fn parse_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    Ok(toml::from_str(text)?)
}

pub fn to_toml(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    Ok(toml::to_string_pretty(cfg)?)
}

fn parse_matrix_text(text: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().with_context(|| format!("line {}: bad number {t:?}", i + 1)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> anyhow::Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        bail!("matrix row {i} has {} entries, row 0 has {ncols}", r.len());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl MatrixSource {
    pub fn rows(&self, base: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
        match self {
            MatrixSource::Inline(rows) => Ok(rows.clone()),
            MatrixSource::File { file } => {
                let path = base.join(file);
                let text =
                    fs::read_to_string(&path).with_context(|| format!("cannot read matrix file {}", path.display()))?;
                parse_matrix_text(&text).with_context(|| format!("in matrix file {}", path.display()))
            }
        }
    }

    pub fn load(&self, base: &Path) -> anyhow::Result<DMatrix<f64>> {
        rows_to_matrix(&self.rows(base)?)
    }
}

impl OperatorSpec {
    fn descriptor(&self, base: &Path) -> anyhow::Result<Descriptor> {
        let f = match self {
            OperatorSpec::Zero => return Ok(Descriptor::Zero),
            OperatorSpec::Linear { matrix } => return Ok(Descriptor::LinearMonotone(matrix.load(base)?)),
            OperatorSpec::L1 { lambda } => ProxFunction::L1 { lambda: *lambda },
            OperatorSpec::SqL2 { lambda, center } => ProxFunction::SquaredL2 {
                lambda: *lambda,
                center: center.as_ref().map(|c| DVector::from_vec(c.clone())),
            },
            OperatorSpec::Box { lo, hi } => ProxFunction::Box { lo: *lo, hi: *hi },
            OperatorSpec::LinfBall { radius } => ProxFunction::LinfBall { radius: *radius },
            OperatorSpec::Affine { c } => ProxFunction::Affine {
                c: DVector::from_vec(c.clone()),
            },
        };
        Ok(Descriptor::Subdiff(f))
    }

    fn files(&self) -> Vec<&Path> {
        match self {
            OperatorSpec::Linear {
                matrix: MatrixSource::File { file },
            } => vec![file.as_path()],
            _ => Vec::new(),
        }
    }
}

fn shift_vector(shift: &Option<Vec<f64>>, dim: usize, what: &str) -> anyhow::Result<DVector<f64>> {
    match shift {
        None => Ok(DVector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(DVector::from_vec(v.clone())),
        Some(v) => bail!("{what} shift has length {}, block has {dim}", v.len()),
    }
}

impl CustomProblem {
    /// Paths of every referenced matrix file, relative to the config.
    pub fn files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        for b in &self.primal {
            out.extend(b.operator.files());
        }
        for b in &self.dual {
            out.extend(b.operator.files());
        }
        for e in &self.coupling {
            if let MatrixSource::File { file } = &e.matrix {
                out.push(file.as_path());
            }
        }
        match &self.smooth {
            SmoothSpec::Affine {
                matrix: MatrixSource::File { file },
                ..
            }
            | SmoothSpec::LeastSquares {
                design: MatrixSource::File { file },
                ..
            } => out.push(file.as_path()),
            _ => {}
        }
        out
    }

    pub fn build(&self, base: &Path) -> anyhow::Result<PrimalDualProblem> {
        if self.primal.is_empty() || self.dual.is_empty() {
            bail!("a custom problem needs at least one primal and one dual block");
        }
        let pdims: Vec<usize> = self.primal.iter().map(|b| b.dim).collect();
        let ddims: Vec<usize> = self.dual.iter().map(|b| b.dim).collect();
        let a = MonotoneBlock::new(
            self.primal
                .iter()
                .map(|b| b.operator.descriptor(base))
                .collect::<anyhow::Result<_>>()?,
        );
        let b = MonotoneBlock::new(
            self.dual
                .iter()
                .map(|b| b.operator.descriptor(base))
                .collect::<anyhow::Result<_>>()?,
        );
        let z = BlockVector::from_blocks(
            self.primal
                .iter()
                .enumerate()
                .map(|(i, b)| shift_vector(&b.shift, b.dim, &format!("primal block {i}")))
                .collect::<anyhow::Result<_>>()?,
        );
        let r = BlockVector::from_blocks(
            self.dual
                .iter()
                .enumerate()
                .map(|(k, b)| shift_vector(&b.shift, b.dim, &format!("dual block {k}")))
                .collect::<anyhow::Result<_>>()?,
        );
        let v = Preconditioner::scalars(self.primal.iter().map(|b| b.step).collect())?;
        let w = Preconditioner::scalars(self.dual.iter().map(|b| b.step).collect())?;
        let mut l = BlockLinearOperator::zeros(&pdims, &ddims);
        for e in &self.coupling {
            if e.row >= ddims.len() || e.col >= pdims.len() {
                bail!("coupling entry ({}, {}) is outside the block layout", e.row, e.col);
            }
            l.set(e.row, e.col, e.matrix.load(base)?)?;
        }
        let c = match &self.smooth {
            SmoothSpec::Zero => CocoerciveMap::zero(&pdims),
            SmoothSpec::Affine { matrix, offset } => {
                let q = matrix.load(base)?;
                let n = q.nrows();
                CocoerciveMap::affine(q, shift_vector(offset, n, "smooth affine")?, &pdims)?
            }
            SmoothSpec::LeastSquares { design, target } => {
                CocoerciveMap::least_squares(design.load(base)?, DVector::from_vec(target.clone()), &pdims)?
            }
        };
        let d_inv = CocoerciveMap::product(
            self.dual
                .iter()
                .map(|b| {
                    if b.d_inverse == 0.0 {
                        Ok(CocoerciveMap::zero(&[b.dim]))
                    } else {
                        Ok(CocoerciveMap::scaled(b.d_inverse, &[b.dim])?)
                    }
                })
                .collect::<anyhow::Result<_>>()?,
        );
        Ok(PrimalDualProblem::new(PrimalDualParts {
            a,
            z,
            v,
            c,
            nu0: self.nu0,
            b,
            r,
            w,
            d_inv,
            mu0: self.mu0,
            l,
        })?)
    }

    /// Same problem with every file reference replaced by its contents.
    pub fn inlined(&self, base: &Path) -> anyhow::Result<CustomProblem> {
        let inline = |m: &MatrixSource| -> anyhow::Result<MatrixSource> { Ok(MatrixSource::Inline(m.rows(base)?)) };
        let op = |o: &OperatorSpec| -> anyhow::Result<OperatorSpec> {
            Ok(match o {
                OperatorSpec::Linear { matrix } => OperatorSpec::Linear { matrix: inline(matrix)? },
                other => other.clone(),
            })
        };
        let mut out = self.clone();
        for b in &mut out.primal {
            b.operator = op(&b.operator)?;
        }
        for b in &mut out.dual {
            b.operator = op(&b.operator)?;
        }
        for e in &mut out.coupling {
            e.matrix = inline(&e.matrix)?;
        }
        out.smooth = match &self.smooth {
            SmoothSpec::Zero => SmoothSpec::Zero,
            SmoothSpec::Affine { matrix, offset } => SmoothSpec::Affine {
                matrix: inline(matrix)?,
                offset: offset.clone(),
            },
            SmoothSpec::LeastSquares { design, target } => SmoothSpec::LeastSquares {
                design: inline(design)?,
                target: target.clone(),
            },
        };
        Ok(out)
    }
}

impl ProblemSpec {
    /// Demo problem, or `None` for a custom problem.
    pub fn demo(&self) -> anyhow::Result<Option<DemoProblem>> {
        Ok(match self {
            ProblemSpec::Lasso {
                n, p, lambda, cond, seed, ..
            } => Some(build_lasso(*n, *p, *lambda, *cond, *seed)?),
            ProblemSpec::Coupled { blocks, block_dim, seed } => {
                Some(build_coupled_system(*blocks, &vec![*block_dim; *blocks], *seed)?)
            }
            ProblemSpec::ParallelSum { n, p, mu, lambda, seed } => {
                Some(build_parallel_sum_instance(*n, *p, *mu, *lambda, *seed)?)
            }
            ProblemSpec::Custom(_) => None,
        })
    }

    /// Lasso splitting for the primal-dual algorithms.
    pub fn lasso_form(&self) -> Option<LassoDualForm> {
        match self {
            ProblemSpec::Lasso { form, .. } => Some(*form),
            _ => None,
        }
    }
}

impl ExperimentConfig {
    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            epsilon: s.epsilon,
            gamma: s.gamma,
            relaxation: s.relaxation,
            inertia: self.inertia.clone(),
            max_iter: s.max_iter,
            stop_tol: s.stop_tol,
            record_every: s.record_every,
        }
    }

    /// Referenced files that do not exist, resolved against `base`.
    pub fn missing_files(&self, base: &Path) -> Vec<PathBuf> {
        match &self.problem {
            ProblemSpec::Custom(c) => c
                .files()
                .into_iter()
                .map(|f| base.join(f))
                .filter(|p| !p.is_file())
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Snapshot of a single run: one seed, files inlined.
    pub fn resolved(&self, base: &Path, seed: u64, output_dir: &Path) -> anyhow::Result<ExperimentConfig> {
        let mut out = self.clone();
        if let ProblemSpec::Custom(c) = &self.problem {
            out.problem = ProblemSpec::Custom(c.inlined(base)?);
        }
        out.seeds = Seeds::List(vec![seed]);
        out.output_dir = output_dir.to_path_buf();
        Ok(out)
    }
}
