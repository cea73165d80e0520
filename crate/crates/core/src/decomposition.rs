//! Splitting total correlation into mutual-information terms.
//!
//! For any split of the variables into a block `A` and its complement,
//! `TC(X) = TC(X_A) + TC(X_Ā) + I(X_A; X_Ā)`. Applying this recursively
//! until only single variables remain yields `n - 1` MI terms whose sum is
//! `TC(X)`. Two recursions are provided:
//!
//! * [`PathKind::Tree`] halves the current block at `m = ⌊(i + j) / 2⌋`,
//!   emits `I(X_{i..=m}; X_{m+1..=j})` and recurses depth-first into both
//!   halves, so each term relates two blocks of similar width.
//! * [`PathKind::Line`] grows a prefix one variable at a time, emitting
//!   `I(X_{0..=i}; x_{i+1})`; the second block is always a single variable.
//!
//! A [`TcEstimator`] attaches one independent [`MiTermEstimator`] to every
//! term and reports the sum of their bound values.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{MiEstimatorKind, MiTermEstimator};
use crate::error::{Error, Result};
use crate::gaussian::{mi_closed_form, GaussianModel, IndexSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    Tree,
    Line,
}

impl PathKind {
    pub const ALL: [PathKind; 2] = [PathKind::Tree, PathKind::Line];

    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::Tree => "tree",
            PathKind::Line => "line",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            PathKind::Tree => 0,
            PathKind::Line => 1,
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tree" => Ok(PathKind::Tree),
            "line" => Ok(PathKind::Line),
            other => Err(Error::param(format!(
                "unknown path '{other}' (expected tree or line)"
            ))),
        }
    }
}

/// One `I(X_left; X_right)` term of a plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiTerm {
    pub left: IndexSet,
    pub right: IndexSet,
}

impl fmt::Display for MiTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I({}; {})", self.left, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionPlan {
    pub n: usize,
    pub kind: PathKind,
    pub terms: Vec<MiTerm>,
}

/// Builds the ordered list of MI terms for `n` variables.
pub fn build_plan(n: usize, kind: PathKind) -> Result<DecompositionPlan> {
    if n == 0 {
        return Err(Error::param("a decomposition needs at least one variable"));
    }
    let mut terms = Vec::with_capacity(n - 1);
    match kind {
        PathKind::Tree => tree_terms(0, n - 1, &mut terms),
        PathKind::Line => {
            for i in 0..n - 1 {
                terms.push(MiTerm {
                    left: IndexSet::range(0, i + 1),
                    right: IndexSet::range(i + 1, i + 2),
                });
            }
        }
    }
    Ok(DecompositionPlan { n, kind, terms })
}

/// Block `i..=j` (inclusive): emit its split, then recurse left, then right.
fn tree_terms(i: usize, j: usize, out: &mut Vec<MiTerm>) {
    if j <= i {
        return;
    }
    let m = (i + j) / 2;
    out.push(MiTerm {
        left: IndexSet::range(i, m + 1),
        right: IndexSet::range(m + 1, j + 1),
    });
    tree_terms(i, m, out);
    tree_terms(m + 1, j, out);
}

/// Sum of the closed-form Gaussian MI of every term in the plan.
pub fn closed_form_plan_sum(model: &GaussianModel, plan: &DecompositionPlan) -> Result<f64> {
    if plan.n != model.dim() {
        return Err(Error::param(format!(
            "plan covers {} variables but the model has {}",
            plan.n,
            model.dim()
        )));
    }
    plan.terms
        .iter()
        .map(|t| mi_closed_form(model, &t.left, &t.right))
        .sum()
}

/// Per-step output of a [`TcEstimator`].
#[derive(Debug, Clone, PartialEq)]
pub struct TcStep {
    /// Sum of `per_term`, accumulated in term order.
    pub total: f64,
    pub per_term: Vec<f64>,
}

impl TcStep {
    fn from_terms(per_term: Vec<f64>) -> Self {
        let total = per_term.iter().fold(0.0, |acc, v| acc + v);
        TcStep { total, per_term }
    }
}

/// A total-correlation estimator: one MI estimator per plan term.
#[derive(Debug, Clone)]
pub struct TcEstimator {
    plan: DecompositionPlan,
    kind: MiEstimatorKind,
    var_dims: Vec<usize>,
    // Batch columns feeding each term's (u, v).
    columns: Vec<(Vec<usize>, Vec<usize>)>,
    terms: Vec<MiTermEstimator>,
}

impl TcEstimator {
    /// `var_dims[i]` is the width of variable `i`; a batch has
    /// `Σ var_dims` columns, variables laid out in order. Term estimators
    /// are initialized in plan order from `rng`.
    pub fn new<R: Rng + ?Sized>(
        plan: DecompositionPlan,
        kind: MiEstimatorKind,
        var_dims: &[usize],
        hidden: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if var_dims.len() != plan.n {
            return Err(Error::param(format!(
                "{} variable widths given for a {}-variable plan",
                var_dims.len(),
                plan.n
            )));
        }
        if var_dims.contains(&0) {
            return Err(Error::param("variable widths must be positive"));
        }
        let mut offsets = Vec::with_capacity(var_dims.len());
        let mut acc = 0;
        for &d in var_dims {
            offsets.push(acc);
            acc += d;
        }
        let expand = |set: &IndexSet| -> Vec<usize> {
            set.as_slice()
                .iter()
                .flat_map(|&i| offsets[i]..offsets[i] + var_dims[i])
                .collect()
        };
        let columns: Vec<_> = plan.terms.iter().map(|t| (expand(&t.left), expand(&t.right))).collect();
        let terms = columns
            .iter()
            .map(|(u, v)| MiTermEstimator::new(kind, u.len(), v.len(), hidden, lr, rng))
            .collect();
        Ok(TcEstimator { plan, kind, var_dims: var_dims.to_vec(), columns, terms })
    }

    pub fn plan(&self) -> &DecompositionPlan {
        &self.plan
    }

    pub fn kind(&self) -> MiEstimatorKind {
        self.kind
    }

    pub fn terms(&self) -> &[MiTermEstimator] {
        &self.terms
    }

    pub fn width(&self) -> usize {
        self.var_dims.iter().sum()
    }

    fn check_batch(&self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.ncols() != self.width() {
            return Err(Error::param(format!(
                "batch has {} columns, estimator expects {}",
                batch.ncols(),
                self.width()
            )));
        }
        Ok(())
    }

    fn blocks(&self, term: usize, batch: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (u, v) = &self.columns[term];
        (batch.select_columns(u), batch.select_columns(v))
    }

    /// Trains every term once on `batch` and returns the summed bound values.
    pub fn train_step(&mut self, batch: &DMatrix<f64>) -> Result<TcStep> {
        self.check_batch(batch)?;
        let mut per_term = Vec::with_capacity(self.terms.len());
        for t in 0..self.terms.len() {
            let (u, v) = self.blocks(t, batch);
            let value = self.terms[t]
                .train_step(&u, &v)
                .map_err(|e| e.context(format_args!("term {t}")))?;
            per_term.push(value);
        }
        Ok(TcStep::from_terms(per_term))
    }

    /// Summed bound values on `batch` with all parameters frozen.
    pub fn estimate(&self, batch: &DMatrix<f64>) -> Result<TcStep> {
        self.check_batch(batch)?;
        let per_term = (0..self.terms.len())
            .map(|t| {
                let (u, v) = self.blocks(t, batch);
                self.terms[t].value(&u, &v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TcStep::from_terms(per_term))
    }
}

/// [`TcEstimator::new`] with a dedicated generator seeded from `seed`.
pub fn make_tc_estimator(
    plan: DecompositionPlan,
    kind: MiEstimatorKind,
    var_dims: &[usize],
    hidden: usize,
    lr: f64,
    seed: u64,
) -> Result<TcEstimator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TcEstimator::new(plan, kind, var_dims, hidden, lr, &mut rng)
}
