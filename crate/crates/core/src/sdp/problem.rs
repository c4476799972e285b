use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_asymmetry, Mat};

/// Handle to a declared variable. Only valid for the problem that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    Symmetric(usize),
    Full(usize, usize),
    Scalar,
}

impl VarShape {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Symmetric(n) => (n, n),
            VarShape::Full(r, c) => (r, c),
            VarShape::Scalar => (1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Full(r, c) => r * c,
            VarShape::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub shape: VarShape,
    /// Offset of the first scalar parameter in the flat parameter vector.
    pub offset: usize,
}

#[derive(Debug, Clone)]
enum Term {
    /// `left · X · right`, or `left · Xᵀ · right` when `transpose`.
    Product {
        var: VarId,
        left: Mat,
        right: Mat,
        transpose: bool,
    },
    /// `x · coeff` for a scalar variable `x`.
    Scaled { var: VarId, coeff: Mat },
}

/// A matrix expression affine in the problem variables.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    nrows: usize,
    ncols: usize,
    constant: Mat,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        AffineExpr {
            nrows,
            ncols,
            constant: Mat::zeros(nrows, ncols),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: Mat) -> Self {
        AffineExpr {
            nrows: m.nrows(),
            ncols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    /// `self + left · X · right`
    pub fn add_product(&mut self, left: Mat, var: VarId, right: Mat) -> &mut Self {
        self.push_product(left, var, right, false)
    }

    /// `self + left · Xᵀ · right`
    pub fn add_product_t(&mut self, left: Mat, var: VarId, right: Mat) -> &mut Self {
        self.push_product(left, var, right, true)
    }

    fn push_product(&mut self, left: Mat, var: VarId, right: Mat, transpose: bool) -> &mut Self {
        assert_eq!(left.nrows(), self.nrows, "left factor row count");
        assert_eq!(right.ncols(), self.ncols, "right factor column count");
        self.terms.push(Term::Product {
            var,
            left,
            right,
            transpose,
        });
        self
    }

    /// `self + x · coeff` for a scalar variable.
    pub fn add_scaled(&mut self, var: VarId, coeff: Mat) -> &mut Self {
        assert_eq!(coeff.shape(), (self.nrows, self.ncols), "scaled coefficient shape");
        self.terms.push(Term::Scaled { var, coeff });
        self
    }

    pub fn add_constant(&mut self, m: &Mat) -> &mut Self {
        assert_eq!(m.shape(), (self.nrows, self.ncols), "constant shape");
        self.constant += m;
        self
    }

    pub fn scale(mut self, f: f64) -> Self {
        self.constant *= f;
        for t in &mut self.terms {
            match t {
                Term::Product { left, .. } => *left *= f,
                Term::Scaled { coeff, .. } => *coeff *= f,
            }
        }
        self
    }

    pub fn transpose(&self) -> Self {
        AffineExpr {
            nrows: self.ncols,
            ncols: self.nrows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Product {
                        var,
                        left,
                        right,
                        transpose,
                    } => Term::Product {
                        var: *var,
                        left: right.transpose(),
                        right: left.transpose(),
                        transpose: !transpose,
                    },
                    Term::Scaled { var, coeff } => Term::Scaled {
                        var: *var,
                        coeff: coeff.transpose(),
                    },
                })
                .collect(),
        }
    }

    /// `self + selfᵀ`
    pub fn he(&self) -> Self {
        assert_eq!(self.nrows, self.ncols, "he() needs a square expression");
        self.clone() + self.transpose()
    }

    /// Places `self` at `(row, col)` inside a zero `nrows × ncols` expression.
    pub fn embed(&self, nrows: usize, ncols: usize, row: usize, col: usize) -> Self {
        assert!(row + self.nrows <= nrows && col + self.ncols <= ncols, "embed out of bounds");
        let pad_left = |m: &Mat| {
            let mut out = Mat::zeros(nrows, m.ncols());
            out.view_mut((row, 0), m.shape()).copy_from(m);
            out
        };
        let pad_right = |m: &Mat| {
            let mut out = Mat::zeros(m.nrows(), ncols);
            out.view_mut((0, col), m.shape()).copy_from(m);
            out
        };
        let mut constant = Mat::zeros(nrows, ncols);
        constant
            .view_mut((row, col), self.constant.shape())
            .copy_from(&self.constant);
        AffineExpr {
            nrows,
            ncols,
            constant,
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Product {
                        var,
                        left,
                        right,
                        transpose,
                    } => Term::Product {
                        var: *var,
                        left: pad_left(left),
                        right: pad_right(right),
                        transpose: *transpose,
                    },
                    Term::Scaled { var, coeff } => {
                        let mut c = Mat::zeros(nrows, ncols);
                        c.view_mut((row, col), coeff.shape()).copy_from(coeff);
                        Term::Scaled { var: *var, coeff: c }
                    }
                })
                .collect(),
        }
    }

    /// Evaluates the expression at a flat parameter vector.
    pub fn eval(&self, problem: &SdpProblem, x: &[f64]) -> Result<Mat> {
        let lowered = self.lower(problem)?;
        Ok(lowered.eval(x))
    }

    pub(crate) fn lower(&self, problem: &SdpProblem) -> Result<Lowered> {
        let mut coeffs: BTreeMap<usize, Mat> = BTreeMap::new();
        let (nr, nc) = (self.nrows, self.ncols);
        for term in &self.terms {
            match term {
                Term::Product {
                    var,
                    left,
                    right,
                    transpose,
                } => {
                    let v = problem.variable(*var)?;
                    let (a, b) = v.shape.dims();
                    let (ea, eb) = if *transpose { (b, a) } else { (a, b) };
                    if left.ncols() != ea || right.nrows() != eb {
                        return Err(Error::Dimension(format!(
                            "term with variable `{}` ({a}x{b}{}) does not fit factors {}x{} and {}x{}",
                            v.name,
                            if *transpose { ", transposed" } else { "" },
                            left.nrows(),
                            left.ncols(),
                            right.nrows(),
                            right.ncols()
                        )));
                    }
                    let mut add_outer = |param: usize, lc: usize, rr: usize| {
                        let entry = coeffs
                            .entry(param)
                            .or_insert_with(|| Mat::zeros(nr, nc));
                        let lcol = left.column(lc);
                        let rrow = right.row(rr);
                        for j in 0..nc {
                            let r = rrow[j];
                            if r == 0.0 {
                                continue;
                            }
                            for i in 0..nr {
                                entry[(i, j)] += lcol[i] * r;
                            }
                        }
                    };
                    match v.shape {
                        VarShape::Symmetric(n) => {
                            let mut param = v.offset;
                            for p in 0..n {
                                for q in p..n {
                                    add_outer(param, p, q);
                                    if p != q {
                                        add_outer(param, q, p);
                                    }
                                    param += 1;
                                }
                            }
                        }
                        VarShape::Full(r, c) => {
                            for p in 0..r {
                                for q in 0..c {
                                    let param = v.offset + p * c + q;
                                    if *transpose {
                                        add_outer(param, q, p);
                                    } else {
                                        add_outer(param, p, q);
                                    }
                                }
                            }
                        }
                        VarShape::Scalar => add_outer(v.offset, 0, 0),
                    }
                }
                Term::Scaled { var, coeff } => {
                    let v = problem.variable(*var)?;
                    if v.shape != VarShape::Scalar {
                        return Err(Error::Dimension(format!(
                            "variable `{}` is not scalar",
                            v.name
                        )));
                    }
                    *coeffs
                        .entry(v.offset)
                        .or_insert_with(|| Mat::zeros(nr, nc)) += coeff;
                }
            }
        }
        Ok(Lowered {
            nrows: nr,
            ncols: nc,
            constant: self.constant.clone(),
            coeffs: coeffs.into_iter().collect(),
        })
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        self += rhs;
        self
    }
}

impl AddAssign for AffineExpr {
    fn add_assign(&mut self, rhs: AffineExpr) {
        assert_eq!(self.shape(), rhs.shape(), "adding expressions of different shapes");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + rhs.scale(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, f: f64) -> AffineExpr {
        self.scale(f)
    }
}

/// Expression lowered to `constant + Σ x[param] · coeff`.
#[derive(Debug, Clone)]
pub(crate) struct Lowered {
    pub nrows: usize,
    pub ncols: usize,
    pub constant: Mat,
    pub coeffs: Vec<(usize, Mat)>,
}

impl Lowered {
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (p, c) in &self.coeffs {
            if x[*p] != 0.0 {
                out += c * x[*p];
            }
        }
        out
    }

    fn symmetrized(mut self, label: &str) -> Result<Self> {
        let check = |m: &Mat, what: &str| -> Result<()> {
            let asym = max_asymmetry(m);
            if asym > 1e-10 * (1.0 + max_abs(m)) {
                return Err(Error::Dimension(format!(
                    "LMI `{label}`: {what} is not symmetric (max |M - Mᵀ| = {asym:e})"
                )));
            }
            Ok(())
        };
        check(&self.constant, "constant term")?;
        self.constant = crate::linalg::symmetrize(&self.constant);
        for (_, c) in &mut self.coeffs {
            check(c, "a coefficient")?;
            *c = crate::linalg::symmetrize(c);
        }
        Ok(self)
    }
}

/// Strictness of an LMI `F(x) ⪯ -μ I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    /// `μ = 10⁻⁶ · max(1, max|F₀|)`, standing in for a strict inequality.
    Strict,
    /// `μ = 0`.
    NonStrict,
    Fixed(f64),
}

pub const STRICT_MARGIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub label: String,
    pub dim: usize,
    pub margin: f64,
    pub constant: Mat,
    /// `(parameter index, coefficient)`, ascending parameter index.
    pub coeffs: Vec<(usize, Mat)>,
}

impl LmiConstraint {
    /// `F(x)` without the margin.
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (p, c) in &self.coeffs {
            if x[*p] != 0.0 {
                out += c * x[*p];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EqConstraint {
    pub label: String,
    pub nrows: usize,
    pub ncols: usize,
    pub constant: Mat,
    pub coeffs: Vec<(usize, Mat)>,
}

impl EqConstraint {
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (p, c) in &self.coeffs {
            if x[*p] != 0.0 {
                out += c * x[*p];
            }
        }
        out
    }
}

/// Symmetric/rectangular/scalar variables, LMIs `F_i(x) ⪯ -μ_i I`, affine
/// equalities `G_j(x) = 0` and an optional linear objective (minimized).
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    vars: Vec<Variable>,
    n_params: usize,
    lmis: Vec<LmiConstraint>,
    eqs: Vec<EqConstraint>,
    objective: BTreeMap<usize, f64>,
    has_objective: bool,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, shape: VarShape) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(Variable {
            name: name.to_string(),
            shape,
            offset: self.n_params,
        });
        self.n_params += shape.param_count();
        id
    }

    pub fn add_symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarShape::Symmetric(n))
    }

    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarShape::Full(rows, cols))
    }

    pub fn add_scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarShape::Scalar)
    }

    pub fn variable(&self, id: VarId) -> Result<&Variable> {
        self.vars
            .get(id.0)
            .ok_or_else(|| Error::Argument(format!("undeclared variable #{}", id.0)))
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn lmis(&self) -> &[LmiConstraint] {
        &self.lmis
    }

    pub fn equalities(&self) -> &[EqConstraint] {
        &self.eqs
    }

    pub fn has_objective(&self) -> bool {
        self.has_objective
    }

    /// Dense objective vector over the flat parameters.
    pub fn objective_vector(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_params];
        for (p, v) in &self.objective {
            c[*p] = *v;
        }
        c
    }

    /// Identity-sandwiched variable `X`.
    pub fn expr(&self, var: VarId) -> AffineExpr {
        let (r, c) = self.vars[var.0].shape.dims();
        let mut e = AffineExpr::zeros(r, c);
        e.add_product(Mat::identity(r, r), var, Mat::identity(c, c));
        e
    }

    /// `left · X · right`
    pub fn product(&self, left: &Mat, var: VarId, right: &Mat) -> AffineExpr {
        let mut e = AffineExpr::zeros(left.nrows(), right.ncols());
        e.add_product(left.clone(), var, right.clone());
        e
    }

    /// `left · Xᵀ · right`
    pub fn product_t(&self, left: &Mat, var: VarId, right: &Mat) -> AffineExpr {
        let mut e = AffineExpr::zeros(left.nrows(), right.ncols());
        e.add_product_t(left.clone(), var, right.clone());
        e
    }

    /// `x · coeff` for scalar `x`.
    pub fn scaled(&self, var: VarId, coeff: &Mat) -> AffineExpr {
        let mut e = AffineExpr::zeros(coeff.nrows(), coeff.ncols());
        e.add_scaled(var, coeff.clone());
        e
    }

    /// Adds `expr ⪯ -μ I`. The expression is symmetrized exactly; an
    /// expression that is not symmetric up to rounding is rejected.
    pub fn add_lmi(&mut self, label: &str, expr: &AffineExpr, margin: Margin) -> Result<usize> {
        let (r, c) = expr.shape();
        if r != c {
            return Err(Error::Dimension(format!("LMI `{label}` is {r}x{c}, not square")));
        }
        let lowered = expr.lower(self)?.symmetrized(label)?;
        let mu = match margin {
            Margin::Strict => STRICT_MARGIN_SCALE * max_abs(&lowered.constant).max(1.0),
            Margin::NonStrict => 0.0,
            Margin::Fixed(m) => {
                if !(m >= 0.0) {
                    return Err(Error::Argument(format!("negative LMI margin {m}")));
                }
                m
            }
        };
        self.lmis.push(LmiConstraint {
            label: label.to_string(),
            dim: r,
            margin: mu,
            constant: lowered.constant,
            coeffs: lowered.coeffs,
        });
        Ok(self.lmis.len() - 1)
    }

    /// Adds `expr = 0` entrywise.
    pub fn add_equality(&mut self, label: &str, expr: &AffineExpr) -> Result<usize> {
        let lowered = expr.lower(self)?;
        self.eqs.push(EqConstraint {
            label: label.to_string(),
            nrows: lowered.nrows,
            ncols: lowered.ncols,
            constant: lowered.constant,
            coeffs: lowered.coeffs,
        });
        Ok(self.eqs.len() - 1)
    }

    /// Adds `⟨weight, X⟩` to the objective.
    pub fn add_objective(&mut self, var: VarId, weight: &Mat) -> Result<()> {
        let v = self.variable(var)?.clone();
        let (r, c) = v.shape.dims();
        if weight.shape() != (r, c) {
            return Err(Error::Dimension(format!(
                "objective weight for `{}` must be {r}x{c}",
                v.name
            )));
        }
        self.has_objective = true;
        match v.shape {
            VarShape::Symmetric(n) => {
                let mut p = v.offset;
                for i in 0..n {
                    for j in i..n {
                        let w = if i == j {
                            weight[(i, i)]
                        } else {
                            weight[(i, j)] + weight[(j, i)]
                        };
                        *self.objective.entry(p).or_insert(0.0) += w;
                        p += 1;
                    }
                }
            }
            VarShape::Full(_, c) => {
                for i in 0..r {
                    for j in 0..c {
                        *self.objective.entry(v.offset + i * c + j).or_insert(0.0) += weight[(i, j)];
                    }
                }
            }
            VarShape::Scalar => *self.objective.entry(v.offset).or_insert(0.0) += weight[(0, 0)],
        }
        Ok(())
    }

    /// Adds `w · x` to the objective for a scalar variable.
    pub fn minimize_scalar(&mut self, var: VarId, w: f64) -> Result<()> {
        self.add_objective(var, &Mat::from_element(1, 1, w))
    }

    /// Adds `‖M‖₂ ≤ t` as `[[t I, M], [Mᵀ, t I]] ⪰ 0`, where `M` is an affine
    /// expression and `t` a declared scalar variable.
    /// `‖M‖₂ ≤ bound` as `−[[bound·I, M], [Mᵀ, bound·I]] ⪯ 0`.
    pub fn add_norm_bound(&mut self, label: &str, m: &AffineExpr, bound: f64) -> Result<usize> {
        let (a, b) = m.shape();
        let n = a + b;
        let mut e = AffineExpr::constant(Mat::identity(n, n) * -bound);
        let neg = m.clone().scale(-1.0);
        e += neg.embed(n, n, 0, a);
        e += neg.transpose().embed(n, n, a, 0);
        self.add_lmi(label, &e, Margin::NonStrict)
    }

    pub fn spectral_norm_epigraph(&mut self, label: &str, m: &AffineExpr, t: VarId) -> Result<usize> {
        if self.variable(t)?.shape != VarShape::Scalar {
            return Err(Error::Argument(format!("epigraph bound for `{label}` must be scalar")));
        }
        let (a, b) = m.shape();
        let n = a + b;
        // -[[tI, M], [Mᵀ, tI]] ⪯ 0
        let mut e = self.scaled(t, &Mat::identity(n, n)).scale(-1.0);
        let neg = m.clone().scale(-1.0);
        e += neg.embed(n, n, 0, a);
        e += neg.transpose().embed(n, n, a, 0);
        self.add_lmi(label, &e, Margin::NonStrict)
    }

    /// Value of a variable at a flat parameter vector.
    pub fn unpack(&self, var: VarId, x: &[f64]) -> Mat {
        let v = &self.vars[var.0];
        match v.shape {
            VarShape::Symmetric(n) => {
                let mut m = Mat::zeros(n, n);
                let mut p = v.offset;
                for i in 0..n {
                    for j in i..n {
                        m[(i, j)] = x[p];
                        m[(j, i)] = x[p];
                        p += 1;
                    }
                }
                m
            }
            VarShape::Full(r, c) => Mat::from_fn(r, c, |i, j| x[v.offset + i * c + j]),
            VarShape::Scalar => Mat::from_element(1, 1, x[v.offset]),
        }
    }

    /// Writes a value into a flat parameter vector (upper triangle for
    /// symmetric variables).
    pub fn pack(&self, var: VarId, value: &Mat, x: &mut [f64]) -> Result<()> {
        let v = &self.vars[var.0];
        if value.shape() != v.shape.dims() {
            return Err(Error::Dimension(format!("value for `{}` has wrong shape", v.name)));
        }
        match v.shape {
            VarShape::Symmetric(n) => {
                let mut p = v.offset;
                for i in 0..n {
                    for j in i..n {
                        x[p] = value[(i, j)];
                        p += 1;
                    }
                }
            }
            VarShape::Full(r, c) => {
                for i in 0..r {
                    for j in 0..c {
                        x[v.offset + i * c + j] = value[(i, j)];
                    }
                }
            }
            VarShape::Scalar => x[v.offset] = value[(0, 0)],
        }
        Ok(())
    }

    /// Plain-text dump, one block per constraint, matrices row-major.
    ///
    /// ```text
    /// sdp v1
    /// var <name> sym <n> | mat <r> <c> | scalar @<offset>
    /// lmi "<label>" dim <s> margin <mu>      (F0 + Σ x_p F_p ⪯ -mu I)
    /// const
    /// <s rows>
    /// coeff <p>
    /// <s rows>
    /// eq "<label>" <r> <c>                   (G0 + Σ x_p G_p = 0)
    /// ...
    /// objective <p>:<c> ...
    /// end
    /// ```
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mat = |out: &mut String, m: &Mat| {
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        let _ = writeln!(out, "sdp v1");
        let _ = writeln!(out, "params {}", self.n_params);
        for v in &self.vars {
            let shape = match v.shape {
                VarShape::Symmetric(n) => format!("sym {n}"),
                VarShape::Full(r, c) => format!("mat {r} {c}"),
                VarShape::Scalar => "scalar".to_string(),
            };
            let _ = writeln!(out, "var {} {} @{}", v.name, shape, v.offset);
        }
        for l in &self.lmis {
            let _ = writeln!(out, "lmi \"{}\" dim {} margin {:e}", l.label, l.dim, l.margin);
            let _ = writeln!(out, "const");
            mat(&mut out, &l.constant);
            for (p, c) in &l.coeffs {
                let _ = writeln!(out, "coeff {p}");
                mat(&mut out, c);
            }
        }
        for e in &self.eqs {
            let _ = writeln!(out, "eq \"{}\" {} {}", e.label, e.nrows, e.ncols);
            let _ = writeln!(out, "const");
            mat(&mut out, &e.constant);
            for (p, c) in &e.coeffs {
                let _ = writeln!(out, "coeff {p}");
                mat(&mut out, c);
            }
        }
        if self.has_objective {
            let terms: Vec<String> = self
                .objective
                .iter()
                .map(|(p, c)| format!("{p}:{c:e}"))
                .collect();
            let _ = writeln!(out, "objective {}", terms.join(" "));
        }
        let _ = writeln!(out, "end");
        out
    }
}
