use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::linalg::{leading_columns, leading_left_singular_vectors};
use crate::tensor::{format_f64, reconstruct, Matrix, Tensor3, TokenReader};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Tucker3 model `X ≈ G x1 A x2 B x3 C` with column-orthonormal factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// `P x Q x R` core tensor.
    pub core: Tensor3,
    /// Users-mode components, `I x P`.
    pub factor_a: Matrix,
    /// Features-mode components, `J x Q`.
    pub factor_b: Matrix,
    /// Hours-mode components, `K x R`.
    pub factor_c: Matrix,
    /// Explained variance in percent for the tensor the model was fit to.
    pub fit_percent: f64,
}

impl TuckerModel {
    pub fn ranks(&self) -> (usize, usize, usize) {
        (self.p, self.q, self.r)
    }

    /// Extents `(I, J, K)` of the tensor the model describes.
    pub fn data_dims(&self) -> [usize; 3] {
        [self.factor_a.rows(), self.factor_b.rows(), self.factor_c.rows()]
    }

    pub fn reconstruct(&self) -> Result<Tensor3> {
        reconstruct(&self.core, &self.factor_a, &self.factor_b, &self.factor_c)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let [i, j, k] = self.data_dims();
        writeln!(w, "tucker3")?;
        writeln!(w, "dims {i} {j} {k}")?;
        writeln!(w, "ranks {} {} {}", self.p, self.q, self.r)?;
        writeln!(w, "fit {}", format_f64(self.fit_percent))?;
        writeln!(w, "core")?;
        self.core.write_text(&mut w)?;
        for (name, m) in [
            ("factor_a", &self.factor_a),
            ("factor_b", &self.factor_b),
            ("factor_c", &self.factor_c),
        ] {
            writeln!(w, "{name}")?;
            m.write_text(&mut w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut t = TokenReader::new(r);
        t.expect("tucker3")?;
        t.expect("dims")?;
        let dims = [t.next_usize("I")?, t.next_usize("J")?, t.next_usize("K")?];
        t.expect("ranks")?;
        let (p, q, r) = (t.next_usize("P")?, t.next_usize("Q")?, t.next_usize("R")?);
        t.expect("fit")?;
        let fit_percent = t.next_f64("fit")?;
        t.expect("core")?;
        let core = Tensor3::read_tokens(&mut t)?;
        t.expect("factor_a")?;
        let factor_a = Matrix::read_tokens(&mut t)?;
        t.expect("factor_b")?;
        let factor_b = Matrix::read_tokens(&mut t)?;
        t.expect("factor_c")?;
        let factor_c = Matrix::read_tokens(&mut t)?;
        let model = TuckerModel {
            p,
            q,
            r,
            core,
            factor_a,
            factor_b,
            factor_c,
            fit_percent,
        };
        if model.data_dims() != dims || model.core.dims() != [p, q, r] {
            return invalid("model file blocks disagree with the declared dims/ranks");
        }
        check_ranks(dims, p, q, r)?;
        if model.factor_a.cols() != p || model.factor_b.cols() != q || model.factor_c.cols() != r {
            return invalid("factor widths disagree with the declared ranks");
        }
        Ok(model)
    }
}

/// Per-sweep record of a HOOI run.
#[derive(Debug, Clone)]
pub struct HooiOutcome {
    pub model: TuckerModel,
    /// Fit after HOSVD initialization followed by the fit after each sweep.
    pub fit_history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn check_ranks(dims: [usize; 3], p: usize, q: usize, r: usize) -> Result<()> {
    for (name, n, ext) in [("P", p, dims[0]), ("Q", q, dims[1]), ("R", r, dims[2])] {
        if n == 0 || n > ext {
            return invalid(format!("{name} = {n} outside [1, {ext}]"));
        }
    }
    Ok(())
}

/// `100 * (1 - ||X - X̂||² / ||X||²)`. Not clamped.
pub fn fit_percent(x: &Tensor3, model: &TuckerModel) -> Result<f64> {
    if model.data_dims() != x.dims() {
        return invalid(format!(
            "model describes {:?}, tensor is {:?}",
            model.data_dims(),
            x.dims()
        ));
    }
    let total = x.squared_norm();
    if total == 0.0 {
        return Err(Error::Degenerate("tensor has zero Frobenius norm".into()));
    }
    let resid = x.sub(&model.reconstruct()?)?.squared_norm();
    Ok(100.0 * (1.0 - resid / total))
}

/// Leading singular bases of all three unfoldings, computed once and
/// truncated per request.
pub(crate) struct ModeBases {
    pub bases: [Matrix; 3],
}

impl ModeBases {
    pub(crate) fn compute(x: &Tensor3, widths: [usize; 3]) -> Result<Self> {
        let a = leading_left_singular_vectors(&x.unfold(1)?, widths[0])?.0;
        let b = leading_left_singular_vectors(&x.unfold(2)?, widths[1])?.0;
        let c = leading_left_singular_vectors(&x.unfold(3)?, widths[2])?.0;
        Ok(Self { bases: [a, b, c] })
    }

    pub(crate) fn hosvd(&self, x: &Tensor3, p: usize, q: usize, r: usize) -> Result<TuckerModel> {
        let a = leading_columns(&self.bases[0], p);
        let b = leading_columns(&self.bases[1], q);
        let c = leading_columns(&self.bases[2], r);
        assemble(x, a, b, c)
    }
}

fn project_core(x: &Tensor3, a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Tensor3> {
    x.mode_multiply(&a.transpose(), 1)?
        .mode_multiply(&b.transpose(), 2)?
        .mode_multiply(&c.transpose(), 3)
}

fn assemble(x: &Tensor3, a: Matrix, b: Matrix, c: Matrix) -> Result<TuckerModel> {
    let core = project_core(x, &a, &b, &c)?;
    let mut model = TuckerModel {
        p: a.cols(),
        q: b.cols(),
        r: c.cols(),
        core,
        factor_a: a,
        factor_b: b,
        factor_c: c,
        fit_percent: 0.0,
    };
    model.fit_percent = fit_percent(x, &model)?;
    Ok(model)
}

/// Truncated higher-order SVD: each factor holds the leading left singular
/// vectors of the corresponding unfolding and the core is `X x1 Aᵀ x2 Bᵀ x3 Cᵀ`.
pub fn hosvd(x: &Tensor3, p: usize, q: usize, r: usize) -> Result<TuckerModel> {
    check_ranks(x.dims(), p, q, r)?;
    if x.squared_norm() == 0.0 {
        return Err(Error::Degenerate("tensor has zero Frobenius norm".into()));
    }
    ModeBases::compute(x, [p, q, r])?.hosvd(x, p, q, r)
}

/// Higher-order orthogonal iteration started from [`hosvd`].
pub fn hooi(x: &Tensor3, p: usize, q: usize, r: usize, tol: f64, max_iter: usize) -> Result<TuckerModel> {
    Ok(hooi_traced(x, p, q, r, tol, max_iter)?.model)
}

pub fn hooi_traced(x: &Tensor3, p: usize, q: usize, r: usize, tol: f64, max_iter: usize) -> Result<HooiOutcome> {
    let init = hosvd(x, p, q, r)?;
    hooi_from(x, init, tol, max_iter)
}

pub(crate) fn hooi_from(x: &Tensor3, init: TuckerModel, tol: f64, max_iter: usize) -> Result<HooiOutcome> {
    if !(tol > 0.0) {
        return invalid(format!("tol must be positive, got {tol}"));
    }
    if max_iter == 0 {
        return invalid("max_iter must be at least 1");
    }
    let total = x.squared_norm();
    let (p, q, r) = init.ranks();
    let mut model = init;
    let mut history = vec![model.fit_percent];
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=max_iter {
        sweeps = sweep;
        let numerical = |e: Error| match e {
            Error::Numerical { message, .. } => Error::Numerical { sweep, message },
            Error::InvalidInput(message) => Error::Numerical { sweep, message },
            other => other,
        };
        let y = x
            .mode_multiply(&model.factor_b.transpose(), 2)
            .and_then(|t| t.mode_multiply(&model.factor_c.transpose(), 3))
            .map_err(numerical)?;
        let a = leading_left_singular_vectors(&y.unfold(1)?, p).map_err(numerical)?.0;

        let y = x
            .mode_multiply(&a.transpose(), 1)
            .and_then(|t| t.mode_multiply(&model.factor_c.transpose(), 3))
            .map_err(numerical)?;
        let b = leading_left_singular_vectors(&y.unfold(2)?, q).map_err(numerical)?.0;

        let y = x
            .mode_multiply(&a.transpose(), 1)
            .and_then(|t| t.mode_multiply(&b.transpose(), 2))
            .map_err(numerical)?;
        let c = leading_left_singular_vectors(&y.unfold(3)?, r).map_err(numerical)?.0;

        let core = project_core(x, &a, &b, &c).map_err(numerical)?;
        // Orthonormal factors: ||X - X̂||² = ||X||² - ||G||².
        let fit = 100.0 * core.squared_norm() / total;
        if !fit.is_finite() {
            return Err(Error::Numerical {
                sweep,
                message: "fit became non-finite".into(),
            });
        }
        let prev = *history.last().expect("history starts non-empty");
        model = TuckerModel {
            p,
            q,
            r,
            core,
            factor_a: a,
            factor_b: b,
            factor_c: c,
            fit_percent: fit,
        };
        history.push(fit);
        if fit - prev < tol {
            converged = true;
            break;
        }
    }
    model.fit_percent = fit_percent(x, &model)?;
    *history.last_mut().expect("non-empty") = model.fit_percent;
    Ok(HooiOutcome {
        model,
        fit_history: history,
        sweeps,
        converged,
    })
}
