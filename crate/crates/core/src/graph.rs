//! Model graphs.
//!
//! A model is a set of plates, covariates, latent declarations and
//! observation declarations. Parameters of priors and likelihoods are
//! arithmetic expressions over parent latents, covariates and constants;
//! evaluation produces axis-labeled tensors that broadcast over the union
//! of the operands' plates (and copy axes, when proposal-sample tensors are
//! substituted for latents).

use crate::dist::{Family, MeanParams};
use crate::tensor::{self, AxisId, IntTensor, Tensor, TensorError};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlateId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatentId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CovariateId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObsId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct PlateDecl {
    pub name: String,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovKind {
    Real,
    /// Zero-based index values, usable as a lookup index.
    Int,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateDecl {
    pub name: String,
    pub plates: Vec<PlateId>,
    pub kind: CovKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDecl {
    pub name: String,
    pub plates: Vec<PlateId>,
    pub family: Family,
    pub prior_params: Vec<Expr>,
    pub proposal_family: Family,
    /// Mean-coordinate initialization of the proposal, shared by all cells.
    pub proposal_init: MeanParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationDecl {
    pub name: String,
    pub plates: Vec<PlateId>,
    pub family: Family,
    pub params: Vec<Expr>,
    /// Column name the dataset binds values to.
    pub binding: String,
}

/// A name usable as a lookup table: a latent or a covariate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableRef {
    Latent(LatentId),
    Covariate(CovariateId),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Latent(LatentId),
    Covariate(CovariateId),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Sigmoid(Box<Expr>),
    /// `table[index]`: read `table` at the positions held by the int
    /// covariate `index`, replacing the table's plate axis by the index's.
    Gather { table: TableRef, index: CovariateId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelIR {
    pub plates: Vec<PlateDecl>,
    pub covariates: Vec<CovariateDecl>,
    pub latents: Vec<LatentDecl>,
    pub observations: Vec<ObservationDecl>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("plate `{0}` has size zero")]
    EmptyPlate(String),
    #[error("{what}: family {family} takes {expected} parameter(s), got {got}")]
    ParamArity { what: String, family: Family, expected: usize, got: usize },
    #[error("{what}: parameter expression ranges over plate `{plate}` absent from its declaration")]
    PlateNotDeclared { what: String, plate: String },
    #[error("latent `{latent}`: family {family} cannot serve as a proposal")]
    UnsupportedProposal { latent: String, family: Family },
    #[error("latent `{latent}`: proposal family {proposal} has a different support than prior family {prior}")]
    ProposalSupportMismatch { latent: String, proposal: Family, prior: Family },
    #[error("latent `{latent}`: proposal init invalid: {detail}")]
    BadProposalInit { latent: String, detail: String },
    #[error("{what}: gather index `{index}` is not an int covariate")]
    GatherIndexKind { what: String, index: String },
    #[error("{what}: gather table `{table}` must range over exactly one plate, found {found}")]
    GatherTablePlates { what: String, table: String, found: usize },
    #[error("prior dependencies form a cycle through `{0}`")]
    Cycle(String),
}

#[derive(Debug, Clone, Default)]
pub struct TopoInfo {
    /// Latents in an order where parents precede children.
    pub order: Vec<LatentId>,
    /// For each latent, the latents its prior parameters reference.
    pub latent_parents: Vec<BTreeSet<LatentId>>,
    /// For each observation, the latents its likelihood parameters reference.
    pub obs_parents: Vec<BTreeSet<LatentId>>,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
    pub warnings: Vec<String>,
    pub topo: Option<TopoInfo>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

impl Expr {
    pub(crate) fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Neg(a) | Expr::Exp(a) | Expr::Sigmoid(a) => a.walk(f),
            Expr::Const(_) | Expr::Latent(_) | Expr::Covariate(_) | Expr::Gather { .. } => {}
        }
    }

    /// Latents referenced anywhere in the expression, gather tables included.
    pub fn latent_refs(&self) -> BTreeSet<LatentId> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| match e {
            Expr::Latent(id) => {
                out.insert(*id);
            }
            Expr::Gather { table: TableRef::Latent(id), .. } => {
                out.insert(*id);
            }
            _ => {}
        });
        out
    }

    pub fn covariate_refs(&self) -> BTreeSet<CovariateId> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| match e {
            Expr::Covariate(id) => {
                out.insert(*id);
            }
            Expr::Gather { table, index } => {
                out.insert(*index);
                if let TableRef::Covariate(id) = table {
                    out.insert(*id);
                }
            }
            _ => {}
        });
        out
    }
}

impl ModelIR {
    pub fn latent_id(&self, name: &str) -> Option<LatentId> {
        self.latents.iter().position(|l| l.name == name).map(LatentId)
    }

    pub fn covariate_id(&self, name: &str) -> Option<CovariateId> {
        self.covariates.iter().position(|c| c.name == name).map(CovariateId)
    }

    pub fn plate_id(&self, name: &str) -> Option<PlateId> {
        self.plates.iter().position(|p| p.name == name).map(PlateId)
    }

    pub fn latent(&self, id: LatentId) -> &LatentDecl {
        &self.latents[id.0]
    }

    pub fn covariate(&self, id: CovariateId) -> &CovariateDecl {
        &self.covariates[id.0]
    }

    pub fn plate(&self, id: PlateId) -> &PlateDecl {
        &self.plates[id.0]
    }

    /// Plate axes a declared plate list spans, in sorted axis order.
    pub fn plate_axes(&self, plates: &[PlateId]) -> Vec<AxisId> {
        let mut axes: Vec<AxisId> = plates.iter().map(|&p| AxisId::Plate(p)).collect();
        axes.sort();
        axes
    }

    /// Sizes matching `plate_axes` for the same plate list.
    pub fn plate_sizes_sorted(&self, plates: &[PlateId]) -> Vec<usize> {
        let mut ids: Vec<PlateId> = plates.to_vec();
        ids.sort();
        ids.iter().map(|&p| self.plates[p.0].size).collect()
    }

    /// Number of cells a plate list spans (1 for scalars).
    pub fn cell_count(&self, plates: &[PlateId]) -> usize {
        plates.iter().map(|&p| self.plates[p.0].size).product()
    }

    /// The plates an expression's value ranges over. Gather substitutes the
    /// index covariate's plates for the table's own plate.
    pub fn expr_plates(&self, expr: &Expr) -> BTreeSet<PlateId> {
        match expr {
            Expr::Const(_) => BTreeSet::new(),
            Expr::Latent(id) => self.latents[id.0].plates.iter().copied().collect(),
            Expr::Covariate(id) => self.covariates[id.0].plates.iter().copied().collect(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let mut s = self.expr_plates(a);
                s.extend(self.expr_plates(b));
                s
            }
            Expr::Neg(a) | Expr::Exp(a) | Expr::Sigmoid(a) => self.expr_plates(a),
            Expr::Gather { index, .. } => {
                self.covariates[index.0].plates.iter().copied().collect()
            }
        }
    }

    /// Validates the graph and computes topology. Errors are collected, not
    /// short-circuited, so a report can show everything wrong at once.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();

        for p in &self.plates {
            if p.size == 0 {
                rep.errors.push(ValidationError::EmptyPlate(p.name.clone()));
            }
        }
        // Names live in two namespaces: expression names (latents and
        // covariates) and dataset column names (covariates and bindings).
        let mut seen = BTreeSet::new();
        for name in self
            .plates
            .iter()
            .map(|p| &p.name)
            .chain(self.latents.iter().map(|l| &l.name))
            .chain(self.covariates.iter().map(|c| &c.name))
            .chain(self.observations.iter().map(|o| &o.name))
        {
            if !seen.insert(name.clone()) {
                rep.errors.push(ValidationError::DuplicateName(name.clone()));
            }
        }
        let mut bindings = BTreeSet::new();
        for name in self
            .covariates
            .iter()
            .map(|c| &c.name)
            .chain(self.observations.iter().map(|o| &o.binding))
        {
            if !bindings.insert(name.clone()) {
                rep.errors.push(ValidationError::DuplicateName(name.clone()));
            }
        }

        for l in &self.latents {
            let what = format!("latent `{}`", l.name);
            self.check_params(&what, l.family, &l.prior_params, &l.plates, &mut rep);
            if !l.proposal_family.supports_proposal() {
                rep.errors.push(ValidationError::UnsupportedProposal {
                    latent: l.name.clone(),
                    family: l.proposal_family,
                });
            } else if l.proposal_family != l.family {
                // Support classes coincide exactly with families here, so a
                // proposal must share the prior's family to cover its support.
                rep.errors.push(ValidationError::ProposalSupportMismatch {
                    latent: l.name.clone(),
                    proposal: l.proposal_family,
                    prior: l.family,
                });
            }
            if l.proposal_init.family != l.proposal_family {
                rep.errors.push(ValidationError::BadProposalInit {
                    latent: l.name.clone(),
                    detail: format!(
                        "init is for {} but proposal is {}",
                        l.proposal_init.family, l.proposal_family
                    ),
                });
            } else if let Err(e) = l.proposal_init.check_feasible() {
                rep.errors.push(ValidationError::BadProposalInit {
                    latent: l.name.clone(),
                    detail: e.to_string(),
                });
            }
        }
        for o in &self.observations {
            let what = format!("observation `{}`", o.name);
            self.check_params(&what, o.family, &o.params, &o.plates, &mut rep);
        }

        // Prior dependency topology (Kahn). Parents must precede children.
        let n = self.latents.len();
        let latent_parents: Vec<BTreeSet<LatentId>> = self
            .latents
            .iter()
            .map(|l| {
                l.prior_params
                    .iter()
                    .flat_map(|e| e.latent_refs())
                    .collect()
            })
            .collect();
        let obs_parents: Vec<BTreeSet<LatentId>> = self
            .observations
            .iter()
            .map(|o| o.params.iter().flat_map(|e| e.latent_refs()).collect())
            .collect();
        let mut indegree: Vec<usize> = latent_parents.iter().map(|s| s.len()).collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, ps) in latent_parents.iter().enumerate() {
            for p in ps {
                children[p.0].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop() {
            order.push(LatentId(i));
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
            rep.errors
                .push(ValidationError::Cycle(self.latents[stuck].name.clone()));
        } else {
            order.sort_by_key(|l| {
                // Stable deterministic order: by depth, then declaration index.
                (depth(&latent_parents, l.0), l.0)
            });
        }

        // A latent that no observation (transitively) depends on never
        // receives likelihood signal; flag it.
        let mut influences: Vec<bool> = vec![false; n];
        for ps in &obs_parents {
            for p in ps {
                influences[p.0] = true;
            }
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                if influences[i] {
                    for p in &latent_parents[i] {
                        if !influences[p.0] {
                            influences[p.0] = true;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for (i, l) in self.latents.iter().enumerate() {
            if !influences[i] {
                rep.warnings.push(format!(
                    "latent `{}` does not influence any observation",
                    l.name
                ));
            }
        }

        if rep.errors.is_empty() {
            rep.topo = Some(TopoInfo { order, latent_parents, obs_parents });
        }
        rep
    }

    fn check_params(
        &self,
        what: &str,
        family: Family,
        params: &[Expr],
        plates: &[PlateId],
        rep: &mut ValidationReport,
    ) {
        if params.len() != family.param_dim() {
            rep.errors.push(ValidationError::ParamArity {
                what: what.to_string(),
                family,
                expected: family.param_dim(),
                got: params.len(),
            });
        }
        let declared: BTreeSet<PlateId> = plates.iter().copied().collect();
        for e in params {
            for p in self.expr_plates(e) {
                if !declared.contains(&p) {
                    rep.errors.push(ValidationError::PlateNotDeclared {
                        what: what.to_string(),
                        plate: self.plates[p.0].name.clone(),
                    });
                }
            }
            e.walk(&mut |sub| {
                if let Expr::Gather { table, index } = sub {
                    let idx = &self.covariates[index.0];
                    if idx.kind != CovKind::Int {
                        rep.errors.push(ValidationError::GatherIndexKind {
                            what: what.to_string(),
                            index: idx.name.clone(),
                        });
                    }
                    let (tname, tplates) = match table {
                        TableRef::Latent(id) => {
                            let l = &self.latents[id.0];
                            (l.name.clone(), l.plates.len())
                        }
                        TableRef::Covariate(id) => {
                            let c = &self.covariates[id.0];
                            (c.name.clone(), c.plates.len())
                        }
                    };
                    if tplates != 1 {
                        rep.errors.push(ValidationError::GatherTablePlates {
                            what: what.to_string(),
                            table: tname,
                            found: tplates,
                        });
                    }
                }
            });
        }
    }

    pub fn compile(self) -> Result<CompiledModel, ValidationReport> {
        let rep = self.validate();
        if rep.is_ok() {
            let topo = rep.topo.clone().expect("topo present when valid");
            Ok(CompiledModel { ir: self, topo, warnings: rep.warnings })
        } else {
            Err(rep)
        }
    }
}

fn depth(parents: &[BTreeSet<LatentId>], i: usize) -> usize {
    parents[i]
        .iter()
        .map(|p| depth(parents, p.0) + 1)
        .max()
        .unwrap_or(0)
}

/// A validated model with its topology.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub ir: ModelIR,
    pub topo: TopoInfo,
    pub warnings: Vec<String>,
}

impl CompiledModel {
    pub fn n_latents(&self) -> usize {
        self.ir.latents.len()
    }

    /// Copy axis of a latent's proposal-sample tensor.
    pub fn copy_axis(&self, id: LatentId) -> AxisId {
        AxisId::Copy(id)
    }
}

/// Covariate values bound from a dataset.
#[derive(Clone, Debug)]
pub enum CovValue {
    Real(Tensor),
    Int(IntTensor),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("latent `{0}` has no value bound")]
    LatentUnbound(String),
    #[error("covariate `{0}` has no value bound")]
    CovariateUnbound(String),
    #[error("int covariate `{0}` used where a real value is required")]
    IntWhereReal(String),
    #[error("gather index must be an int covariate, got `{0}`")]
    GatherIndexNotInt(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Values expressions evaluate against: one tensor per latent (typically
/// carrying that latent's copy axis) and one per covariate.
pub struct EvalCtx<'a> {
    pub latents: &'a [Option<Tensor>],
    pub covariates: &'a [Option<CovValue>],
}

impl<'a> EvalCtx<'a> {
    fn latent(&self, model: &ModelIR, id: LatentId) -> Result<&Tensor, EvalError> {
        self.latents[id.0]
            .as_ref()
            .ok_or_else(|| EvalError::LatentUnbound(model.latents[id.0].name.clone()))
    }

    fn covariate(&self, model: &ModelIR, id: CovariateId) -> Result<&CovValue, EvalError> {
        self.covariates[id.0]
            .as_ref()
            .ok_or_else(|| EvalError::CovariateUnbound(model.covariates[id.0].name.clone()))
    }
}

/// Evaluates an expression to a tensor over plate axes and the copy axes of
/// whichever latent tensors were bound. Pure in its inputs.
pub fn eval_expr(model: &ModelIR, expr: &Expr, ctx: &EvalCtx) -> Result<Tensor, EvalError> {
    match expr {
        Expr::Const(v) => Ok(Tensor::scalar(*v)),
        Expr::Latent(id) => Ok(ctx.latent(model, *id)?.clone()),
        Expr::Covariate(id) => match ctx.covariate(model, *id)? {
            CovValue::Real(t) => Ok(t.clone()),
            CovValue::Int(t) => Ok(t.to_real()),
        },
        Expr::Add(a, b) => bin(model, a, b, ctx, |x, y| x + y),
        Expr::Sub(a, b) => bin(model, a, b, ctx, |x, y| x - y),
        Expr::Mul(a, b) => bin(model, a, b, ctx, |x, y| x * y),
        Expr::Div(a, b) => bin(model, a, b, ctx, |x, y| x / y),
        Expr::Neg(a) => Ok(eval_expr(model, a, ctx)?.map(|x| -x)),
        Expr::Exp(a) => Ok(eval_expr(model, a, ctx)?.map(f64::exp)),
        Expr::Sigmoid(a) => Ok(eval_expr(model, a, ctx)?.map(crate::special::sigmoid)),
        Expr::Gather { table, index } => {
            let table_t = match table {
                TableRef::Latent(id) => ctx.latent(model, *id)?.clone(),
                TableRef::Covariate(id) => match ctx.covariate(model, *id)? {
                    CovValue::Real(t) => t.clone(),
                    CovValue::Int(t) => t.to_real(),
                },
            };
            let idx = match ctx.covariate(model, *index)? {
                CovValue::Int(t) => t,
                CovValue::Real(_) => {
                    return Err(EvalError::GatherIndexNotInt(
                        model.covariates[index.0].name.clone(),
                    ))
                }
            };
            Ok(tensor::gather(&table_t, idx)?)
        }
    }
}

fn bin(
    model: &ModelIR,
    a: &Expr,
    b: &Expr,
    ctx: &EvalCtx,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, EvalError> {
    let ta = eval_expr(model, a, ctx)?;
    let tb = eval_expr(model, b, ctx)?;
    Ok(ta.zip_with(&tb, f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::MeanParams;
    use ndarray::{ArrayD, IxDyn};

    fn gaussian_init() -> MeanParams {
        MeanParams::new(Family::Gaussian, vec![0.0, 1.0]).unwrap()
    }

    /// mu ~ N(0,1); z[g] ~ N(mu, 1); y[g,r] ~ N(z[g], 0.5) with R readings.
    fn two_level() -> ModelIR {
        ModelIR {
            plates: vec![
                PlateDecl { name: "g".into(), size: 3 },
                PlateDecl { name: "r".into(), size: 2 },
            ],
            covariates: vec![],
            latents: vec![
                LatentDecl {
                    name: "mu".into(),
                    plates: vec![],
                    family: Family::Gaussian,
                    prior_params: vec![Expr::Const(0.0), Expr::Const(1.0)],
                    proposal_family: Family::Gaussian,
                    proposal_init: gaussian_init(),
                },
                LatentDecl {
                    name: "z".into(),
                    plates: vec![PlateId(0)],
                    family: Family::Gaussian,
                    prior_params: vec![Expr::Latent(LatentId(0)), Expr::Const(1.0)],
                    proposal_family: Family::Gaussian,
                    proposal_init: gaussian_init(),
                },
            ],
            observations: vec![ObservationDecl {
                name: "y".into(),
                plates: vec![PlateId(0), PlateId(1)],
                family: Family::Gaussian,
                params: vec![Expr::Latent(LatentId(1)), Expr::Const(0.5)],
                binding: "y_obs".into(),
            }],
        }
    }

    #[test]
    fn valid_model_topo_orders_parents_first() {
        let m = two_level().compile().unwrap();
        assert_eq!(m.topo.order, vec![LatentId(0), LatentId(1)]);
        assert!(m.topo.latent_parents[1].contains(&LatentId(0)));
        assert!(m.topo.obs_parents[0].contains(&LatentId(1)));
        assert!(!m.topo.obs_parents[0].contains(&LatentId(0)));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn cycle_is_rejected() {
        let mut ir = two_level();
        ir.latents[0].prior_params[0] = Expr::Latent(LatentId(1));
        let rep = ir.validate();
        assert!(rep.errors.iter().any(|e| matches!(e, ValidationError::Cycle(_))));
    }

    #[test]
    fn arity_plate_and_proposal_errors_are_collected() {
        let mut ir = two_level();
        ir.latents[0].prior_params.pop();
        // z's prior may not range over the reading plate.
        ir.latents[1].prior_params[1] = Expr::Covariate(CovariateId(0));
        ir.covariates.push(CovariateDecl {
            name: "noise".into(),
            plates: vec![PlateId(1)],
            kind: CovKind::Real,
        });
        ir.latents[1].proposal_family = Family::NegativeBinomialLik;
        let rep = ir.validate();
        assert!(rep.errors.iter().any(|e| matches!(e, ValidationError::ParamArity { .. })));
        assert!(rep
            .errors
            .iter()
            .any(|e| matches!(e, ValidationError::PlateNotDeclared { .. })));
        assert!(rep
            .errors
            .iter()
            .any(|e| matches!(e, ValidationError::UnsupportedProposal { .. })));
        assert!(rep.topo.is_none());
    }

    #[test]
    fn disconnected_latent_warns() {
        let mut ir = two_level();
        ir.latents.push(LatentDecl {
            name: "orphan".into(),
            plates: vec![],
            family: Family::Gaussian,
            prior_params: vec![Expr::Const(0.0), Expr::Const(1.0)],
            proposal_family: Family::Gaussian,
            proposal_init: gaussian_init(),
        });
        let m = ir.compile().unwrap();
        assert_eq!(m.warnings.len(), 1);
        assert!(m.warnings[0].contains("orphan"));
    }

    #[test]
    fn eval_broadcasts_latents_over_plate_union() {
        let ir = two_level();
        // Bind mu as a scalar with one copy axis of size 2, z over (copy, g).
        let mu = Tensor::from_data(
            vec![AxisId::Copy(LatentId(0))],
            ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -1.0]).unwrap(),
        );
        let z = Tensor::from_data(
            vec![AxisId::Copy(LatentId(1)), AxisId::Plate(PlateId(0))],
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0., 1., 2., 3., 4., 5.]).unwrap(),
        );
        let latents = vec![Some(mu), Some(z)];
        let ctx = EvalCtx { latents: &latents, covariates: &[] };
        let e = Expr::Add(
            Box::new(Expr::Latent(LatentId(0))),
            Box::new(Expr::Latent(LatentId(1))),
        );
        let t = eval_expr(&ir.clone(), &e, &ctx).unwrap();
        assert_eq!(
            t.axes(),
            &[
                AxisId::Copy(LatentId(0)),
                AxisId::Copy(LatentId(1)),
                AxisId::Plate(PlateId(0))
            ]
        );
        assert_eq!(t.shape(), &[2, 2, 3]);
        // Same expression evaluated twice gives bit-identical output.
        let t2 = eval_expr(&ir, &e, &ctx).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn gather_validation_catches_real_index_and_wide_table() {
        let mut ir = two_level();
        ir.covariates.push(CovariateDecl {
            name: "gid".into(),
            plates: vec![PlateId(1)],
            kind: CovKind::Real,
        });
        ir.observations[0].params[0] = Expr::Gather {
            table: TableRef::Latent(LatentId(1)),
            index: CovariateId(0),
        };
        let rep = ir.validate();
        assert!(rep
            .errors
            .iter()
            .any(|e| matches!(e, ValidationError::GatherIndexKind { .. })));
    }
}
